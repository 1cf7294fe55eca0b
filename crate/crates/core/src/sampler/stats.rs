//! Binning analysis for correlated Markov-chain series.

use crate::mat::C64;

/// Smallest number of bins a binning level needs to count toward the plateau.
pub const MIN_BINS: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateWithError {
    /// Mean; the real part is the physical value for Hermitian observables.
    pub mean: C64,
    pub stderr: f64,
    pub bin_count: usize,
    /// Integrated autocorrelation time in units of retained samples.
    pub autocorrelation: f64,
    pub samples: usize,
}

impl EstimateWithError {
    /// An exactly known value (full enumeration, zero-variance estimators).
    pub fn exact(mean: C64, samples: usize) -> Self {
        EstimateWithError { mean, stderr: 0.0, bin_count: samples, autocorrelation: 0.5, samples }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinningLevel {
    pub bin_size: usize,
    pub bins: usize,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Binning {
    pub mean: f64,
    pub levels: Vec<BinningLevel>,
    /// Index into `levels` of the reported (plateau) value.
    pub plateau: usize,
}

impl Binning {
    pub fn stderr(&self) -> f64 {
        self.levels.get(self.plateau).map_or(f64::INFINITY, |l| l.stderr)
    }

    pub fn autocorrelation(&self) -> f64 {
        match (self.levels.first(), self.levels.get(self.plateau)) {
            (Some(l0), Some(lp)) if l0.stderr > 0.0 => 0.5 * (lp.stderr / l0.stderr).powi(2),
            _ => 0.5,
        }
    }
}

fn level_stderr(bins: &[f64]) -> f64 {
    let n = bins.len() as f64;
    let mean = bins.iter().sum::<f64>() / n;
    let var = bins.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// Repeatedly pairs neighbouring samples and records the naive standard error
/// at each level. The plateau is taken as the largest error among levels with
/// at least [`MIN_BINS`] bins; the error grows with bin size until the bins
/// decorrelate and then levels off, so the maximum sits on the plateau.
pub fn binning(series: &[f64]) -> Binning {
    let n = series.len();
    let mean = if n > 0 { series.iter().sum::<f64>() / n as f64 } else { f64::NAN };
    let mut levels = Vec::new();
    if n < 2 {
        return Binning { mean, levels, plateau: 0 };
    }
    let mut bins = series.to_vec();
    let mut size = 1;
    loop {
        levels.push(BinningLevel { bin_size: size, bins: bins.len(), stderr: level_stderr(&bins) });
        if bins.len() / 2 < MIN_BINS {
            break;
        }
        bins = bins.chunks_exact(2).map(|c| 0.5 * (c[0] + c[1])).collect();
        size *= 2;
    }
    let plateau = levels
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, l)| if l.stderr > acc.1 { (i, l.stderr) } else { acc })
        .0;
    Binning { mean, levels, plateau }
}

/// Combines per-chain series (each binned separately) into one estimate,
/// weighting chains by their sample counts.
pub fn pooled_estimate(chains: &[Vec<C64>]) -> EstimateWithError {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    if total == 0 {
        return EstimateWithError { mean: C64::new(f64::NAN, f64::NAN), stderr: f64::INFINITY, bin_count: 0, autocorrelation: f64::NAN, samples: 0 };
    }
    let mut mean = C64::new(0.0, 0.0);
    let mut var = 0.0;
    let mut bins = 0;
    let mut tau = 0.0;
    for c in chains.iter().filter(|c| !c.is_empty()) {
        let w = c.len() as f64 / total as f64;
        let chain_mean: C64 = c.iter().sum::<C64>() / c.len() as f64;
        mean += chain_mean * w;
        let re: Vec<f64> = c.iter().map(|z| z.re).collect();
        let b = binning(&re);
        var += (w * b.stderr()).powi(2);
        bins += b.levels.get(b.plateau).map_or(1, |l| l.bins);
        tau += w * b.autocorrelation();
    }
    EstimateWithError { mean, stderr: var.sqrt(), bin_count: bins, autocorrelation: tau, samples: total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_series_has_zero_error() {
        let b = binning(&vec![3.0; 1000]);
        assert_eq!(b.stderr(), 0.0);
        let e = pooled_estimate(&[vec![C64::new(2.0, 0.0); 100], vec![C64::new(2.0, 0.0); 50]]);
        assert_eq!(e.mean, C64::new(2.0, 0.0));
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn independent_samples_match_naive_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..1 << 14).map(|_| rng.random::<f64>()).collect();
        let b = binning(&xs);
        let naive = (1.0 / 12.0 / xs.len() as f64).sqrt();
        assert!((b.stderr() / naive - 1.0).abs() < 0.15, "{} vs {naive}", b.stderr());
    }

    #[test]
    fn correlated_series_error_grows_then_plateaus() {
        // AR(1) with rho = 0.9: tau_int = (1 + rho) / (2 (1 - rho)) = 9.5.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rho: f64 = 0.9;
        let mut x = 0.0;
        let xs: Vec<f64> = (0..1 << 16)
            .map(|_| {
                x = rho * x + (1.0 - rho * rho).sqrt() * (rng.random::<f64>() - 0.5) * 12f64.sqrt();
                x
            })
            .collect();
        let b = binning(&xs);
        assert!(b.levels[b.plateau].stderr > 3.0 * b.levels[0].stderr);
        let tau = b.autocorrelation();
        assert!((5.0..16.0).contains(&tau), "tau = {tau}");
        // Up to the plateau the error is non-decreasing (within noise).
        for w in b.levels[..=b.plateau].windows(2) {
            assert!(w[1].stderr >= 0.9 * w[0].stderr);
        }
    }
}
