//! Sinks that turn sampled configurations into estimates: observables, the
//! sufficient statistics of the energy gradient, and per-slot records for
//! reweighting and the local quadratic-form matrices.

use super::stats::{pooled_estimate, EstimateWithError};
use super::{enumerate_into, run_chains, SampleSink, SamplerConfig};
use crate::cache::{contract, AmplitudeCache};
use crate::error::{Result, SbsError};
use crate::hamiltonian::LocalOperator;
use crate::mat::{C64, ZERO};
use crate::state::{Slot, StringBondState};
use nalgebra::DMatrix;

/// Reweighted estimates with fewer effective samples than this fraction of
/// `M` are flagged untrusted.
pub const REWEIGHT_TRUST_FRACTION: f64 = 0.1;

pub struct ObservableSink<'a> {
    ops: Vec<&'a LocalOperator>,
    pub(crate) series: Vec<Vec<C64>>,
    pub(crate) weighted: Vec<C64>,
    pub(crate) weight: f64,
}

impl<'a> ObservableSink<'a> {
    pub fn new(ops: Vec<&'a LocalOperator>) -> Self {
        let k = ops.len();
        ObservableSink { ops, series: vec![Vec::new(); k], weighted: vec![ZERO; k], weight: 0.0 }
    }

    /// Per-operator estimates pooled over chain sinks.
    pub fn pooled(sinks: &[ObservableSink<'_>]) -> Vec<EstimateWithError> {
        let k = sinks.first().map_or(0, |s| s.ops.len());
        (0..k)
            .map(|i| pooled_estimate(&sinks.iter().map(|s| s.series[i].clone()).collect::<Vec<_>>()))
            .collect()
    }
}

impl SampleSink for ObservableSink<'_> {
    fn record(&mut self, state: &StringBondState, cache: &mut AmplitudeCache, weight: f64) -> Result<()> {
        for (i, op) in self.ops.iter().enumerate() {
            let v = op.local_value(state, cache)?;
            self.series[i].push(v);
            self.weighted[i] += v * weight;
        }
        self.weight += weight;
        Ok(())
    }
}

/// Accumulates `sum w`, `sum w h`, `sum w conj(O)` and `sum w conj(O) h` over
/// every parameter, where `O` is the log-derivative (the `b` vector).
pub struct GradientSink<'a> {
    h: &'a LocalOperator,
    series: Vec<C64>,
    weight: f64,
    sum_h: C64,
    sum_o: Vec<C64>,
    sum_oh: Vec<C64>,
}

impl<'a> GradientSink<'a> {
    pub fn new(h: &'a LocalOperator, n_params: usize) -> Self {
        GradientSink { h, series: Vec::new(), weight: 0.0, sum_h: ZERO, sum_o: vec![ZERO; n_params], sum_oh: vec![ZERO; n_params] }
    }
}

impl SampleSink for GradientSink<'_> {
    fn record(&mut self, state: &StringBondState, cache: &mut AmplitudeCache, weight: f64) -> Result<()> {
        let h = self.h.local_value(state, cache)?;
        self.series.push(h);
        self.weight += weight;
        self.sum_h += h * weight;
        cache.accumulate_log_derivatives(state, weight, h, &mut self.sum_o, &mut self.sum_oh)
    }
}

/// Everything the sampled gradient needs, from one sampling phase.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub weight: f64,
    pub sum_h: C64,
    pub sum_o: Vec<C64>,
    pub sum_oh: Vec<C64>,
    pub energy: EstimateWithError,
    pub acceptance: f64,
    pub exact: bool,
}

impl SampleBatch {
    fn merge(sinks: Vec<GradientSink<'_>>, acceptance: f64, exact: bool) -> Result<Self> {
        let n = sinks.first().map(|s| s.sum_o.len()).ok_or(SbsError::EmptyBatch)?;
        let mut b = SampleBatch {
            weight: 0.0,
            sum_h: ZERO,
            sum_o: vec![ZERO; n],
            sum_oh: vec![ZERO; n],
            energy: EstimateWithError::exact(ZERO, 0),
            acceptance,
            exact,
        };
        for s in &sinks {
            b.weight += s.weight;
            b.sum_h += s.sum_h;
            b.sum_o.iter_mut().zip(&s.sum_o).for_each(|(a, x)| *a += x);
            b.sum_oh.iter_mut().zip(&s.sum_oh).for_each(|(a, x)| *a += x);
        }
        if b.weight <= 0.0 {
            return Err(SbsError::EmptyBatch);
        }
        b.energy = if exact {
            let samples = sinks.iter().map(|s| s.series.len()).sum();
            EstimateWithError::exact(b.sum_h / b.weight, samples)
        } else {
            pooled_estimate(&sinks.iter().map(|s| s.series.clone()).collect::<Vec<_>>())
        };
        Ok(b)
    }

    /// Markov-chain batch at the current parameters.
    pub fn sample(state: &StringBondState, h: &LocalOperator, cfg: &SamplerConfig) -> Result<Self> {
        let run = run_chains(state, cfg, |_| GradientSink::new(h, state.n_params()))?;
        let acc = run.acceptance();
        Self::merge(run.sinks, acc, false)
    }

    /// Exact batch: every configuration weighted by `p(n)`.
    pub fn enumerate(state: &StringBondState, h: &LocalOperator) -> Result<Self> {
        let sinks = enumerate_into(state, |_| GradientSink::new(h, state.n_params()))?;
        Self::merge(sinks, 1.0, true)
    }

    pub fn mean_h(&self) -> C64 {
        self.sum_h / self.weight
    }
}

/// One configuration's ingredients for a single slot.
#[derive(Clone, Debug)]
pub struct SampleRecord {
    pub weight: f64,
    pub h: C64,
    /// `<b_n|A> = <n|psi_A> / <n|psi_A0>`.
    pub b: Vec<C64>,
    /// `<a_n|A> = <n|H|psi_A> / <n|psi_A0>`.
    pub a: Vec<C64>,
}

/// Coefficients of `<n|H|psi_A> / <n|psi_A0>` as a linear function of the
/// tensor `A` at `slot`.
pub fn a_vector(h: &LocalOperator, state: &StringBondState, cache: &mut AmplitudeCache, slot: Slot) -> Result<Vec<C64>> {
    let b = cache.b_vector(state, slot)?;
    let mut a = vec![ZERO; b.len()];
    let d = h.local_dim();
    let config = cache.config().to_vec();
    for t in h.terms() {
        for (changes, coeff) in t.connected(&config, d) {
            if changes.is_empty() {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += coeff * y);
            } else {
                let f = cache.functional(state, &changes, slot)?;
                a.iter_mut().zip(&f).for_each(|(x, y)| *x += coeff * y);
            }
        }
    }
    Ok(a)
}

pub struct RecordSink<'a> {
    h: &'a LocalOperator,
    slot: Slot,
    pub records: Vec<SampleRecord>,
}

impl<'a> RecordSink<'a> {
    pub fn new(h: &'a LocalOperator, slot: Slot) -> Self {
        RecordSink { h, slot, records: Vec::new() }
    }
}

impl SampleSink for RecordSink<'_> {
    fn record(&mut self, state: &StringBondState, cache: &mut AmplitudeCache, weight: f64) -> Result<()> {
        let h = self.h.local_value(state, cache)?;
        let b = cache.b_vector(state, self.slot)?;
        let a = a_vector(self.h, state, cache, self.slot)?;
        self.records.push(SampleRecord { weight, h, b, a });
        Ok(())
    }
}

/// Markov-chain records for one slot, chains concatenated in order.
pub fn sample_records(state: &StringBondState, h: &LocalOperator, slot: Slot, cfg: &SamplerConfig) -> Result<Vec<SampleRecord>> {
    let run = run_chains(state, cfg, |_| RecordSink::new(h, slot))?;
    Ok(run.sinks.into_iter().flat_map(|s| s.records).collect())
}

/// Exact records (weights `p(n)`) for one slot.
pub fn enumerate_records(state: &StringBondState, h: &LocalOperator, slot: Slot) -> Result<Vec<SampleRecord>> {
    let sinks = enumerate_into(state, |_| RecordSink::new(h, slot))?;
    Ok(sinks.into_iter().flat_map(|s| s.records).collect())
}

#[derive(Clone, Debug)]
pub struct ReweightedEstimate {
    pub estimate: EstimateWithError,
    /// `(sum w)^2 / sum w^2`.
    pub effective_samples: f64,
    /// `false` when `effective_samples < REWEIGHT_TRUST_FRACTION * M`.
    pub trusted: bool,
}

/// Energy at a modified slot tensor `target`, from records taken at `A0`:
/// weights `|<b_n|A>|^2` and local values `<a_n|A> / <b_n|A>`.
pub fn reweighted_estimate(records: &[SampleRecord], target: &[C64]) -> Result<ReweightedEstimate> {
    let mut sw = 0.0;
    let mut sw2 = 0.0;
    let mut swf = ZERO;
    let mut terms = Vec::with_capacity(records.len());
    for r in records {
        let beta = contract(&r.b, target);
        let w = r.weight * beta.norm_sqr();
        if w == 0.0 {
            continue;
        }
        let f = contract(&r.a, target) / beta;
        sw += w;
        sw2 += w * w;
        swf += f * w;
        terms.push((w, f));
    }
    if sw <= 0.0 {
        return Err(SbsError::EmptyBatch);
    }
    let mean = swf / sw;
    let var: f64 = terms.iter().map(|(w, f)| (w * (f.re - mean.re)).powi(2)).sum::<f64>() / (sw * sw);
    let m_eff = sw * sw / sw2;
    let m = records.len();
    Ok(ReweightedEstimate {
        estimate: EstimateWithError { mean, stderr: var.sqrt(), bin_count: terms.len(), autocorrelation: 0.5, samples: m },
        effective_samples: m_eff,
        trusted: m_eff >= REWEIGHT_TRUST_FRACTION * m as f64,
    })
}

/// Sample averages `X = E[conj(b) a^T]` and `Y = E[conj(b) b^T]`, so that
/// `E(A) = A^H X A / A^H Y A` for the slot tensor `A`.
pub fn estimate_xy(records: &[SampleRecord]) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    let dim = records.first().map(|r| r.b.len()).ok_or(SbsError::EmptyBatch)?;
    let mut x = DMatrix::from_element(dim, dim, ZERO);
    let mut y = DMatrix::from_element(dim, dim, ZERO);
    let mut w = 0.0;
    for r in records {
        w += r.weight;
        for c in 0..dim {
            let bc = r.b[c].conj() * r.weight;
            if bc == ZERO {
                continue;
            }
            for d in 0..dim {
                x[(c, d)] += bc * r.a[d];
                y[(c, d)] += bc * r.b[d];
            }
        }
    }
    if w <= 0.0 {
        return Err(SbsError::EmptyBatch);
    }
    Ok((x / C64::new(w, 0.0), y / C64::new(w, 0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::dense_expectation;
    use crate::hamiltonian::build_tfi;
    use crate::lattice::{Boundary, Lattice};
    use crate::pattern::named_pattern;
    use crate::state::ParamMode;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (StringBondState, LocalOperator) {
        let l = Lattice::new(3, 2, Boundary::Open, 2).unwrap();
        let p = named_pattern(&l, &["lines", "loops"]).unwrap();
        let st = StringBondState::random(l.clone(), p, 2, ParamMode::Complex, 0.4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (st, build_tfi(&l, 1.0, 0.7).unwrap())
    }

    fn quotient(x: &DMatrix<C64>, y: &DMatrix<C64>, a: &[C64]) -> f64 {
        let v = DVector::from_column_slice(a);
        let num = (v.adjoint() * x * &v)[(0, 0)];
        let den = (v.adjoint() * y * &v)[(0, 0)];
        (num / den).re
    }

    #[test]
    fn xy_reproduce_rayleigh_quotient() {
        let (st, h) = setup(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let slot = Slot { string: 5, position: 2 };
        let recs = enumerate_records(&st, &h, slot).unwrap();
        let (x, y) = estimate_xy(&recs).unwrap();
        let a0 = st.tensor(slot).to_vec();
        assert!((quotient(&x, &y, &a0) - dense_expectation(&st, &h).unwrap().re).abs() < 1e-10);
        let yn = (DVector::from_column_slice(&a0).adjoint() * &y * DVector::from_column_slice(&a0))[(0, 0)];
        assert!((yn - 1.0).norm() < 1e-10);
        for _ in 0..5 {
            let a: Vec<C64> = a0.iter().map(|z| z + C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
            let mut moved = st.clone();
            moved.tensor_mut(slot).copy_from_slice(&a);
            let exact = dense_expectation(&moved, &h).unwrap().re;
            assert!((quotient(&x, &y, &a) - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn reweighting_identity_and_collapse() {
        let (st, h) = setup(3);
        let slot = Slot { string: 0, position: 1 };
        let recs = sample_records(&st, &h, slot, &SamplerConfig::new(2000, 4)).unwrap();
        let a0 = st.tensor(slot).to_vec();
        let r = reweighted_estimate(&recs, &a0).unwrap();
        let plain: C64 = recs.iter().map(|r| r.h).sum::<C64>() / recs.len() as f64;
        assert!((r.estimate.mean - plain).norm() < 1e-10);
        assert!((r.effective_samples - recs.len() as f64).abs() < 1e-6);
        assert!(r.trusted);
    }

    #[test]
    fn effective_samples_collapse() {
        // 95 records only see the first component and 5 only the second.
        let rec = |k: usize| {
            let mut b = vec![ZERO; 2];
            b[k] = C64::new(1.0, 0.0);
            SampleRecord { weight: 1.0, h: ZERO, a: b.iter().map(|z| z * (k as f64 + 1.0)).collect(), b }
        };
        let recs: Vec<_> = (0..100).map(|i| rec(usize::from(i >= 95))).collect();
        let even = reweighted_estimate(&recs, &[C64::new(1.0, 0.0), C64::new(1.0, 0.0)]).unwrap();
        assert!((even.effective_samples - 100.0).abs() < 1e-9 && even.trusted);
        assert!((even.estimate.mean.re - 1.05).abs() < 1e-12);
        let skew = reweighted_estimate(&recs, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0)]).unwrap();
        assert!((skew.effective_samples - 5.0).abs() < 1e-9 && !skew.trusted);
        assert!((skew.estimate.mean.re - 2.0).abs() < 1e-12);
    }

    #[test]
    fn reweighted_small_perturbation_matches_enumeration() {
        let (st, h) = setup(5);
        let slot = Slot { string: 3, position: 0 };
        let recs = sample_records(&st, &h, slot, &SamplerConfig::new(20000, 6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<C64> = st.tensor(slot).iter().map(|z| z + C64::new(0.05 * (rng.random::<f64>() - 0.5), 0.05 * (rng.random::<f64>() - 0.5))).collect();
        let mut moved = st.clone();
        moved.tensor_mut(slot).copy_from_slice(&a);
        let exact = dense_expectation(&moved, &h).unwrap().re;
        let r = reweighted_estimate(&recs, &a).unwrap();
        // Successive chain samples are correlated; allow for an autocorrelation
        // time of a few samples on top of the i.i.d. error.
        assert!((r.estimate.mean.re - exact).abs() <= 3.0 * 3.0 * r.estimate.stderr, "{} vs {exact} ± {}", r.estimate.mean.re, r.estimate.stderr);
    }
}
