//! Metropolis sampling of `p(n) = |<n|psi>|^2`, with exact enumeration as a
//! drop-in replacement for small systems.
//!
//! Work is organised around [`SampleSink`]s: a sink sees every retained
//! configuration (through its amplitude cache) together with a weight, which
//! is 1 for Markov-chain samples and `p(n)` under enumeration. Chains run
//! independently (in parallel with the `parallel` feature) and their sinks are
//! returned in chain order, so pooled results do not depend on scheduling.

mod batch;
mod chain;
mod stats;

pub use batch::{
    a_vector, estimate_xy, reweighted_estimate, sample_records, enumerate_records, GradientSink, ObservableSink,
    RecordSink, ReweightedEstimate, SampleBatch, SampleRecord, REWEIGHT_TRUST_FRACTION,
};
pub use chain::ChainState;
pub use stats::{binning, pooled_estimate, Binning, BinningLevel, EstimateWithError, MIN_BINS};

use crate::cache::AmplitudeCache;
use crate::error::{invalid, Result, SbsError};
use crate::exact::{check_enumerable, index_to_config, MAX_ENUMERATION_STATES};
use crate::hamiltonian::LocalOperator;
use crate::mat::C64;
use crate::par::{chunks, map_indexed, Execution};
use crate::state::StringBondState;

/// Maximum random draws per chain when looking for a nonzero-amplitude start.
pub const START_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Retained samples `M`, pooled over all chains.
    pub samples: usize,
    /// Burn-in sweeps per chain; `None` means `10 * N`.
    pub burn_in: Option<usize>,
    /// Sweeps between retained samples.
    pub thinning: usize,
    pub chains: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl SamplerConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        SamplerConfig { samples, burn_in: None, thinning: 1, chains: 4, seed, execution: Execution::Parallel }
    }

    pub fn burn_in_sweeps(&self, n_sites: usize) -> usize {
        self.burn_in.unwrap_or(10 * n_sites)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(invalid("sampler needs M >= 1"));
        }
        if self.chains == 0 {
            return Err(invalid("sampler needs at least one chain"));
        }
        if self.thinning == 0 {
            return Err(invalid("thinning must be at least one sweep"));
        }
        Ok(())
    }
}

pub trait SampleSink: Send {
    fn record(&mut self, state: &StringBondState, cache: &mut AmplitudeCache, weight: f64) -> Result<()>;
}

/// Per-chain sinks plus acceptance statistics.
pub struct ChainRun<S> {
    pub sinks: Vec<S>,
    pub proposed: u64,
    pub accepted: u64,
}

impl<S> ChainRun<S> {
    pub fn acceptance(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Runs `cfg.chains` independent chains, feeding each retained sample to that
/// chain's sink.
pub fn run_chains<S, F>(state: &StringBondState, cfg: &SamplerConfig, make_sink: F) -> Result<ChainRun<S>>
where
    S: SampleSink,
    F: Fn(usize) -> S + Sync + Send,
{
    cfg.validate()?;
    let per_chain = chunks(cfg.samples, cfg.chains);
    let burn = cfg.burn_in_sweeps(state.n_sites());
    let results = map_indexed(per_chain.len(), cfg.execution, |c| -> Result<(S, u64, u64)> {
        let mut chain = ChainState::start(state, cfg.seed, c as u64, START_ATTEMPTS)?;
        let mut sink = make_sink(c);
        for _ in 0..burn {
            chain.sweep(state)?;
        }
        for _ in per_chain[c].clone() {
            for _ in 0..cfg.thinning {
                chain.sweep(state)?;
            }
            sink.record(state, chain.cache_mut(), 1.0)?;
        }
        Ok((sink, chain.proposed(), chain.accepted()))
    });
    let mut run = ChainRun { sinks: Vec::with_capacity(results.len()), proposed: 0, accepted: 0 };
    let mut first_err = None;
    for r in results {
        match r {
            Ok((s, p, a)) => {
                run.sinks.push(s);
                run.proposed += p;
                run.accepted += a;
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(run),
    }
}

/// Exact `p(n)`, normalized, for every configuration (lexicographic order).
pub fn exact_probabilities(state: &StringBondState) -> Result<Vec<f64>> {
    let (n, d) = (state.n_sites(), state.local_dim());
    let dim = check_enumerable(n, d, MAX_ENUMERATION_STATES)?;
    let ranges = chunks(dim, 64);
    let logs: Vec<f64> = map_indexed(ranges.len(), Execution::Parallel, |c| {
        let mut cfg = vec![0u8; n];
        ranges[c]
            .clone()
            .map(|i| {
                index_to_config(i, n, d, &mut cfg);
                2.0 * state.amplitude(&cfg).log_abs
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(SbsError::ZeroAmplitude);
    }
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

/// Feeds every nonzero-probability configuration to sinks with weight `p(n)`.
/// Work is split into contiguous index ranges, one sink per range, returned in
/// index order.
pub fn enumerate_into<S, F>(state: &StringBondState, make_sink: F) -> Result<Vec<S>>
where
    S: SampleSink,
    F: Fn(usize) -> S + Sync + Send,
{
    let probs = exact_probabilities(state)?;
    let (n, d) = (state.n_sites(), state.local_dim());
    let ranges = chunks(probs.len(), 64);
    map_indexed(ranges.len(), Execution::Parallel, |c| -> Result<S> {
        let mut sink = make_sink(c);
        let mut cfg = vec![0u8; n];
        for i in ranges[c].clone() {
            if probs[i] == 0.0 {
                continue;
            }
            index_to_config(i, n, d, &mut cfg);
            let mut cache = AmplitudeCache::new(state, &cfg)?;
            if cache.is_zero() {
                continue;
            }
            sink.record(state, &mut cache, probs[i])?;
        }
        Ok(sink)
    })
    .into_iter()
    .collect()
}

/// Sampled energy `<H>` with a binning error bar.
pub fn sample_energy(state: &StringBondState, h: &LocalOperator, cfg: &SamplerConfig) -> Result<EstimateWithError> {
    Ok(sample_observables(state, &[h], cfg)?.remove(0))
}

/// Sampled expectation values of several operators from one set of chains.
pub fn sample_observables(
    state: &StringBondState,
    ops: &[&LocalOperator],
    cfg: &SamplerConfig,
) -> Result<Vec<EstimateWithError>> {
    Ok(sample_observables_with_acceptance(state, ops, cfg)?.0)
}

/// As [`sample_observables`], also returning the pooled acceptance rate.
pub fn sample_observables_with_acceptance(
    state: &StringBondState,
    ops: &[&LocalOperator],
    cfg: &SamplerConfig,
) -> Result<(Vec<EstimateWithError>, f64)> {
    let run = run_chains(state, cfg, |_| ObservableSink::new(ops.to_vec()))?;
    let acc = run.acceptance();
    Ok((ObservableSink::pooled(&run.sinks), acc))
}

/// Exact `sum_n p(n) <n|O|psi>/<n|psi>` for each operator.
pub fn enumerate_estimates(state: &StringBondState, ops: &[&LocalOperator]) -> Result<Vec<C64>> {
    let sinks = enumerate_into(state, |_| ObservableSink::new(ops.to_vec()))?;
    let mut total = vec![C64::new(0.0, 0.0); ops.len()];
    let mut w = 0.0;
    for s in &sinks {
        for (t, v) in total.iter_mut().zip(&s.weighted) {
            *t += v;
        }
        w += s.weight;
    }
    Ok(total.into_iter().map(|t| t / w).collect())
}
