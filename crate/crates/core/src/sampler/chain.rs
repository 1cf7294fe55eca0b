use crate::cache::AmplitudeCache;
use crate::derive_seed;
use crate::error::{Result, SbsError};
use crate::state::StringBondState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One Markov chain over configurations, with its own cache and RNG.
#[derive(Clone, Debug)]
pub struct ChainState {
    cache: AmplitudeCache,
    rng: ChaCha8Rng,
    proposed: u64,
    accepted: u64,
}

impl ChainState {
    /// Starts from a random configuration with nonzero amplitude, trying at
    /// most `attempts` draws.
    pub fn start(state: &StringBondState, seed: u64, chain_id: u64, attempts: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, chain_id));
        let (n, d) = (state.n_sites(), state.local_dim());
        for _ in 0..attempts.max(1) {
            let cfg: Vec<u8> = (0..n).map(|_| rng.random_range(0..d) as u8).collect();
            let cache = AmplitudeCache::new(state, &cfg)?;
            if !cache.is_zero() {
                return Ok(ChainState { cache, rng, proposed: 0, accepted: 0 });
            }
        }
        Err(SbsError::NoStartConfiguration(attempts))
    }

    /// Starts from a given configuration.
    pub fn from_config(state: &StringBondState, config: &[u8], seed: u64, chain_id: u64) -> Result<Self> {
        let cache = AmplitudeCache::new(state, config)?;
        if cache.is_zero() {
            return Err(SbsError::ZeroAmplitude);
        }
        Ok(ChainState { cache, rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, chain_id)), proposed: 0, accepted: 0 })
    }

    pub fn cache(&self) -> &AmplitudeCache {
        &self.cache
    }

    pub fn cache_mut(&mut self) -> &mut AmplitudeCache {
        &mut self.cache
    }

    pub fn config(&self) -> &[u8] {
        self.cache.config()
    }

    pub fn proposed(&self) -> u64 {
        self.proposed
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    pub fn acceptance(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// One Metropolis step: a uniformly random site and (for `d > 2`) a
    /// uniformly random different level, accepted with `min(1, |ratio|^2)`.
    pub fn step(&mut self, state: &StringBondState) -> Result<bool> {
        let (n, d) = (state.n_sites(), state.local_dim());
        let site = self.rng.random_range(0..n);
        let cur = self.cache.config()[site];
        let level = if d == 2 {
            1 - cur
        } else {
            let r = self.rng.random_range(0..d - 1) as u8;
            if r >= cur {
                r + 1
            } else {
                r
            }
        };
        let ratio = self.cache.ratio(state, &[(site, level)])?;
        let p = ratio.norm_sqr();
        self.proposed += 1;
        let accept = p.is_finite() && (p >= 1.0 || self.rng.random::<f64>() < p);
        if accept {
            self.cache.apply(state, &[(site, level)]);
            self.accepted += 1;
        }
        Ok(accept)
    }

    /// `N` single-site proposals.
    pub fn sweep(&mut self, state: &StringBondState) -> Result<()> {
        for _ in 0..state.n_sites() {
            self.step(state)?;
        }
        Ok(())
    }
}
