//! Per-chain amplitude cache: prefix and suffix matrix products along every
//! string for the current configuration, so that single-site (or few-site)
//! amplitude ratios and log-derivatives cost one pass over the affected
//! strings instead of a full re-evaluation.

use crate::error::{Result, SbsError};
use crate::mat::{matmul_into, trace_of_product, LogValue, Mat, MatRef, C64, ZERO};
use crate::state::{Slot, StringBondState};

#[derive(Clone, Debug)]
struct StringCache {
    /// `prefix[p] = M(0) ... M(p-1)`; `prefix[0]` is an identity.
    prefix: Vec<Mat>,
    /// `suffix[p] = M(p+1) ... M(last)`; `suffix[last]` is an identity.
    suffix: Vec<Mat>,
    value: C64,
}

/// A change of one site to a new local level.
pub type SiteChange = (usize, u8);

#[derive(Clone, Debug)]
pub struct AmplitudeCache {
    config: Vec<u8>,
    strings: Vec<StringCache>,
    grouped: Vec<(usize, usize, u8)>,
    work_a: Mat,
    work_b: Mat,
    fault_skip_suffix: bool,
}

impl AmplitudeCache {
    pub fn new(state: &StringBondState, config: &[u8]) -> Result<Self> {
        state.validate_config(config)?;
        let mut cache = AmplitudeCache {
            config: config.to_vec(),
            strings: Vec::with_capacity(state.n_strings()),
            grouped: Vec::new(),
            work_a: Mat::zeros(0, 0),
            work_b: Mat::zeros(0, 0),
            fault_skip_suffix: false,
        };
        for s in 0..state.n_strings() {
            let len = state.string_len(s);
            cache.strings.push(StringCache {
                prefix: vec![Mat::zeros(0, 0); len],
                suffix: vec![Mat::zeros(0, 0); len],
                value: ZERO,
            });
            cache.rebuild_string(state, s);
        }
        Ok(cache)
    }

    pub fn config(&self) -> &[u8] {
        &self.config
    }

    /// Current `<n|psi>` in log form, as the product of the cached string values.
    pub fn amplitude(&self) -> LogValue {
        self.strings.iter().fold(LogValue::ONE, |acc, s| acc.mul(LogValue::from_complex(s.value)))
    }

    pub fn string_value(&self, s: usize) -> C64 {
        self.strings[s].value
    }

    pub fn is_zero(&self) -> bool {
        self.strings.iter().any(|s| s.value == ZERO)
    }

    /// Mutation hook for self-checks: when set, flips stop refreshing suffix
    /// products, which corrupts the cache.
    #[doc(hidden)]
    pub fn set_fault_skip_suffix(&mut self, on: bool) {
        self.fault_skip_suffix = on;
    }

    fn level_at(&self, state: &StringBondState, s: usize, p: usize) -> usize {
        self.config[state.string_sites(s)[p]] as usize
    }

    fn rebuild_string(&mut self, state: &StringBondState, s: usize) {
        let len = state.string_len(s);
        let (config, sites) = (&self.config, state.string_sites(s));
        let sc = &mut self.strings[s];
        let m = |p: usize| state.matrix(Slot { string: s, position: p }, config[sites[p]] as usize);
        sc.prefix[0].set_identity(m(0).rows);
        for p in 1..len {
            let (head, tail) = sc.prefix.split_at_mut(p);
            extend_prefix(&head[p - 1], m(p - 1), &mut tail[0], p == 1);
        }
        sc.suffix[len - 1].set_identity(m(len - 1).cols);
        for p in (0..len - 1).rev() {
            let (head, tail) = sc.suffix.split_at_mut(p + 1);
            extend_suffix(m(p + 1), &tail[0], &mut head[p], p + 2 == len);
        }
        sc.value = trace_of_product(sc.prefix[len - 1].view(), m(len - 1));
    }

    /// Rebuilds every string from scratch.
    pub fn refresh(&mut self, state: &StringBondState) {
        for s in 0..self.strings.len() {
            self.rebuild_string(state, s);
        }
    }

    /// Sorts the effective changes into `(string, position, level)` triples.
    fn group_changes(&mut self, state: &StringBondState, changes: &[SiteChange]) {
        self.grouped.clear();
        for &(site, level) in changes {
            if self.config[site] == level {
                continue;
            }
            for &(s, p) in state.pattern().incidence(site) {
                self.grouped.push((s, p, level));
            }
        }
        self.grouped.sort_unstable_by_key(|&(s, p, _)| (s, p));
    }

    /// Value of string `s` with the grouped changes `group` applied, using the
    /// cached prefix before the first change and suffix after the last.
    fn changed_value(&mut self, state: &StringBondState, s: usize, group: &[(usize, usize, u8)]) -> C64 {
        let first = group[0].1;
        let last = group[group.len() - 1].1;
        let mut gi = 0;
        for q in first..=last {
            let level = if gi < group.len() && group[gi].1 == q {
                gi += 1;
                group[gi - 1].2 as usize
            } else {
                self.level_at(state, s, q)
            };
            let m = state.matrix(Slot { string: s, position: q }, level);
            if q == first {
                extend_prefix(&self.strings[s].prefix[first], m, &mut self.work_a, first == 0);
            } else {
                matmul_into(self.work_a.view(), m, &mut self.work_b);
                std::mem::swap(&mut self.work_a, &mut self.work_b);
            }
        }
        trace_of_product(self.work_a.view(), self.strings[s].suffix[last].view())
    }

    /// `<n'|psi> / <n|psi>` where `n'` applies `changes` to the current
    /// configuration. Errors if the current amplitude is zero.
    pub fn ratio(&mut self, state: &StringBondState, changes: &[SiteChange]) -> Result<C64> {
        if self.is_zero() {
            return Err(SbsError::ZeroAmplitude);
        }
        self.group_changes(state, changes);
        let grouped = std::mem::take(&mut self.grouped);
        let mut r = C64::new(1.0, 0.0);
        let mut start = 0;
        while start < grouped.len() {
            let s = grouped[start].0;
            let end = start + grouped[start..].iter().take_while(|g| g.0 == s).count();
            let new = self.changed_value(state, s, &grouped[start..end]);
            r *= new / self.strings[s].value;
            start = end;
        }
        self.grouped = grouped;
        Ok(r)
    }

    /// Ratio for flipping one spin-1/2 site (`level -> d-1-level`).
    pub fn ratio_flip(&mut self, state: &StringBondState, site: usize) -> Result<C64> {
        let level = flipped(self.config[site], state.local_dim());
        self.ratio(state, &[(site, level)])
    }

    /// Moves the cache to the configuration with `changes` applied, refreshing
    /// only the products that contain a changed matrix.
    pub fn apply(&mut self, state: &StringBondState, changes: &[SiteChange]) {
        self.group_changes(state, changes);
        for &(site, level) in changes {
            self.config[site] = level;
        }
        let grouped = std::mem::take(&mut self.grouped);
        let mut start = 0;
        while start < grouped.len() {
            let s = grouped[start].0;
            let end = start + grouped[start..].iter().take_while(|g| g.0 == s).count();
            self.refresh_between(state, s, grouped[start].1, grouped[end - 1].1);
            start = end;
        }
        self.grouped = grouped;
    }

    fn refresh_between(&mut self, state: &StringBondState, s: usize, first: usize, last: usize) {
        let len = state.string_len(s);
        let skip_suffix = self.fault_skip_suffix;
        let (config, sites) = (&self.config, state.string_sites(s));
        let sc = &mut self.strings[s];
        let m = |p: usize| state.matrix(Slot { string: s, position: p }, config[sites[p]] as usize);
        for p in first + 1..len {
            let (head, tail) = sc.prefix.split_at_mut(p);
            extend_prefix(&head[p - 1], m(p - 1), &mut tail[0], p == 1);
        }
        if !skip_suffix {
            for p in (0..last).rev() {
                let (head, tail) = sc.suffix.split_at_mut(p + 1);
                extend_suffix(m(p + 1), &tail[0], &mut head[p], p + 2 == len);
            }
        }
        sc.value = trace_of_product(sc.prefix[len - 1].view(), m(len - 1));
    }

    /// Flips one spin-1/2 site.
    pub fn apply_flip(&mut self, state: &StringBondState, site: usize) {
        let level = flipped(self.config[site], state.local_dim());
        self.apply(state, &[(site, level)]);
    }

    /// Largest relative deviation of cached string values (recombined at
    /// every position) and of the total amplitude from a from-scratch evaluation.
    pub fn audit(&self, state: &StringBondState) -> f64 {
        let mut worst: f64 = 0.0;
        let mut tmp = Mat::zeros(0, 0);
        for (s, sc) in self.strings.iter().enumerate() {
            let exact = state.string_value(s, &self.config);
            let scale = exact.norm().max(f64::MIN_POSITIVE);
            worst = worst.max((sc.value - exact).norm() / scale);
            for p in 0..sc.prefix.len() {
                let m = state.matrix(Slot { string: s, position: p }, self.level_at(state, s, p));
                matmul_into(sc.prefix[p].view(), m, &mut tmp);
                let v = trace_of_product(tmp.view(), sc.suffix[p].view());
                worst = worst.max((v - exact).norm() / scale);
            }
        }
        let exact = state.amplitude(&self.config);
        let cached = self.amplitude();
        if exact.is_zero() != cached.is_zero() {
            return f64::INFINITY;
        }
        if !exact.is_zero() {
            let rel = C64::from_polar((cached.log_abs - exact.log_abs).exp(), cached.phase - exact.phase) - 1.0;
            worst = worst.max(rel.norm());
        }
        worst
    }

    /// Environment `suffix[p] * prefix[p]` of a slot, divided by the string
    /// value; entry `(j, i)` multiplies matrix entry `(i, j)`.
    fn scaled_environment(&mut self, slot: Slot) -> Result<&Mat> {
        let sc = &self.strings[slot.string];
        if sc.value == ZERO {
            return Err(SbsError::ZeroAmplitude);
        }
        let inv = 1.0 / sc.value;
        matmul_into(sc.suffix[slot.position].view(), sc.prefix[slot.position].view(), &mut self.work_a);
        for z in self.work_a.data.iter_mut() {
            *z *= inv;
        }
        Ok(&self.work_a)
    }

    /// The vector `b` with `sum_c b_c A_c = <n|psi_A> / <n|psi>` when the slot
    /// tensor is replaced by `A` (length `d * rows * cols`, level-major).
    /// This is also the holomorphic log-derivative of the amplitude.
    pub fn b_vector(&mut self, state: &StringBondState, slot: Slot) -> Result<Vec<C64>> {
        if self.is_zero() {
            return Err(SbsError::ZeroAmplitude);
        }
        let lay = state.layout(slot);
        let level = self.level_at(state, slot.string, slot.position);
        let env = self.scaled_environment(slot)?;
        let mut b = vec![ZERO; state.local_dim() * lay.matrix_len()];
        write_transposed(env, &mut b[level * lay.matrix_len()..(level + 1) * lay.matrix_len()], lay.cols);
        Ok(b)
    }

    /// Adds `weight * conj(b)` and `weight * conj(b) * h` for every slot into
    /// parameter-indexed accumulators.
    pub fn accumulate_log_derivatives(
        &mut self,
        state: &StringBondState,
        weight: f64,
        h: C64,
        sum_o: &mut [C64],
        sum_oh: &mut [C64],
    ) -> Result<()> {
        if self.is_zero() {
            return Err(SbsError::ZeroAmplitude);
        }
        for s in 0..self.strings.len() {
            for p in 0..self.strings[s].prefix.len() {
                let slot = Slot { string: s, position: p };
                let level = self.level_at(state, s, p);
                let lay = state.layout(slot);
                let env = self.scaled_environment(slot)?;
                let base = state.param_index(slot, level, 0, 0);
                for i in 0..lay.rows {
                    for j in 0..lay.cols {
                        let o = env.data[j * env.cols + i].conj() * weight;
                        let idx = base + i * lay.cols + j;
                        sum_o[idx] += o;
                        sum_oh[idx] += o * h;
                    }
                }
            }
        }
        Ok(())
    }

    /// Coefficients `c` with `sum_c c_k A_k = <n'|psi_A> / <n|psi>`, where `n'`
    /// applies `changes` to the current configuration and `A` replaces the
    /// tensor of `slot`. With no changes this is [`b_vector`](Self::b_vector).
    pub fn functional(&mut self, state: &StringBondState, changes: &[SiteChange], slot: Slot) -> Result<Vec<C64>> {
        if self.is_zero() {
            return Err(SbsError::ZeroAmplitude);
        }
        self.group_changes(state, changes);
        let grouped = std::mem::take(&mut self.grouped);
        let mut other = C64::new(1.0, 0.0);
        let mut target_touched = false;
        let mut start = 0;
        while start < grouped.len() {
            let s = grouped[start].0;
            let end = start + grouped[start..].iter().take_while(|g| g.0 == s).count();
            if s == slot.string {
                target_touched = true;
            } else {
                let new = self.changed_value(state, s, &grouped[start..end]);
                other *= new / self.strings[s].value;
            }
            start = end;
        }
        self.grouped = grouped;
        if !target_touched {
            let mut b = self.b_vector(state, slot)?;
            for z in b.iter_mut() {
                *z *= other;
            }
            return Ok(b);
        }
        // The target string itself changes: rebuild its environment in n'.
        let s = slot.string;
        let sites = state.string_sites(s).to_vec();
        let mut cfg = self.config.clone();
        for &(site, level) in changes {
            cfg[site] = level;
        }
        let lay = state.layout(slot);
        let m = |p: usize| state.matrix(Slot { string: s, position: p }, cfg[sites[p]] as usize);
        let mut left = Mat::identity(m(0).rows);
        let mut tmp = Mat::zeros(0, 0);
        for p in 0..slot.position {
            matmul_into(left.view(), m(p), &mut tmp);
            std::mem::swap(&mut left, &mut tmp);
        }
        let mut right = Mat::identity(m(sites.len() - 1).cols);
        for p in (slot.position + 1..sites.len()).rev() {
            matmul_into(m(p), right.view(), &mut tmp);
            std::mem::swap(&mut right, &mut tmp);
        }
        let mut env = Mat::zeros(0, 0);
        matmul_into(right.view(), left.view(), &mut env);
        let scale = other / self.strings[s].value;
        for z in env.data.iter_mut() {
            *z *= scale;
        }
        let level = cfg[sites[slot.position]] as usize;
        let mut c = vec![ZERO; state.local_dim() * lay.matrix_len()];
        write_transposed(&env, &mut c[level * lay.matrix_len()..(level + 1) * lay.matrix_len()], lay.cols);
        Ok(c)
    }
}

/// Writes `env^T` (rows x cols of the slot matrix) into `out`, row-major.
fn write_transposed(env: &Mat, out: &mut [C64], cols: usize) {
    let rows = env.cols;
    debug_assert_eq!(env.rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = env.data[j * env.cols + i];
        }
    }
}

/// Spin flip `k -> d-1-k`; for `d = 2` this swaps 0 and 1.
/// `out = prev * m`, where `prev` is known to be the identity at the start of a string.
fn extend_prefix(prev: &Mat, m: MatRef<'_>, out: &mut Mat, prev_is_identity: bool) {
    if prev_is_identity {
        out.copy_from(m);
    } else {
        matmul_into(prev.view(), m, out);
    }
}

/// `out = m * next`, where `next` is known to be the identity at the end of a string.
fn extend_suffix(m: MatRef<'_>, next: &Mat, out: &mut Mat, next_is_identity: bool) {
    if next_is_identity {
        out.copy_from(m);
    } else {
        matmul_into(m, next.view(), out);
    }
}

pub fn flipped(level: u8, d: usize) -> u8 {
    (d - 1) as u8 - level
}

/// `sum_c c_k A_k` for a tensor-length coefficient vector.
pub fn contract(coeffs: &[C64], tensor: &[C64]) -> C64 {
    coeffs.iter().zip(tensor).map(|(c, a)| c * a).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Boundary, Lattice};
    use crate::pattern::{named_pattern, snake_pattern};
    use crate::state::ParamMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(lx: usize, ly: usize, bc: Boundary, pats: &[&str], d: usize, seed: u64) -> StringBondState {
        let l = Lattice::new(lx, ly, bc, 2).unwrap();
        let p = named_pattern(&l, pats).unwrap();
        StringBondState::random(l, p, d, ParamMode::Complex, 0.6, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_config(n: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
        (0..n).map(|_| rng.random_range(0..2u8)).collect()
    }

    #[test]
    fn ratio_matches_scratch() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (lx, ly, bc) in [(3, 2, Boundary::Open), (3, 3, Boundary::Periodic)] {
            let st = random_state(lx, ly, bc, &["lines", "loops"], 3, 11);
            for _ in 0..20 {
                let cfg = random_config(st.n_sites(), &mut rng);
                let mut cache = AmplitudeCache::new(&st, &cfg).unwrap();
                let x = rng.random_range(0..st.n_sites());
                let r = cache.ratio_flip(&st, x).unwrap();
                let mut cfg2 = cfg.clone();
                cfg2[x] ^= 1;
                let exact = st.amplitude(&cfg2).to_complex() / st.amplitude(&cfg).to_complex();
                assert!((r - exact).norm() <= 1e-10 * exact.norm());
            }
        }
    }

    #[test]
    fn two_site_ratio_matches_scratch() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let st = random_state(3, 3, Boundary::Periodic, &["lines", "loops"], 2, 12);
        for _ in 0..30 {
            let cfg = random_config(9, &mut rng);
            let mut cache = AmplitudeCache::new(&st, &cfg).unwrap();
            let (a, b) = (rng.random_range(0..9), rng.random_range(0..9));
            if a == b {
                continue;
            }
            let r = cache.ratio(&st, &[(a, cfg[a] ^ 1), (b, cfg[b] ^ 1)]).unwrap();
            let mut cfg2 = cfg.clone();
            cfg2[a] ^= 1;
            cfg2[b] ^= 1;
            let exact = st.amplitude(&cfg2).to_complex() / st.amplitude(&cfg).to_complex();
            assert!((r - exact).norm() <= 1e-10 * exact.norm());
        }
    }

    #[test]
    fn flip_and_back_is_identity() {
        let st = random_state(3, 3, Boundary::Periodic, &["lines", "loops"], 3, 13);
        let cfg = vec![0, 1, 1, 0, 0, 1, 0, 1, 0];
        let mut cache = AmplitudeCache::new(&st, &cfg).unwrap();
        let r1 = cache.ratio_flip(&st, 4).unwrap();
        cache.apply_flip(&st, 4);
        let r2 = cache.ratio_flip(&st, 4).unwrap();
        assert!((r1 * r2 - 1.0).norm() < 1e-12);
    }

    #[test]
    fn identical_levels_give_unit_ratio() {
        let l = Lattice::new(3, 3, Boundary::Open, 2).unwrap();
        let p = named_pattern(&l, &["lines", "loops"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut st = StringBondState::random(l, p, 2, ParamMode::Complex, 0.5, &mut rng).unwrap();
        let x = 4;
        for &(s, pos) in st.pattern().incidence(x).to_vec().iter() {
            let slot = Slot { string: s, position: pos };
            let t = st.tensor(slot).to_vec();
            let half = t.len() / 2;
            st.tensor_mut(slot)[half..].copy_from_slice(&t[..half]);
        }
        let mut cache = AmplitudeCache::new(&st, &random_config(9, &mut rng)).unwrap();
        assert!((cache.ratio_flip(&st, x).unwrap() - 1.0).norm() < 1e-12);
    }

    #[test]
    fn apply_matches_scratch_and_noop_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let st = random_state(4, 4, Boundary::Periodic, &["lines", "loops"], 3, 16);
        let mut cache = AmplitudeCache::new(&st, &random_config(16, &mut rng)).unwrap();
        for _ in 0..200 {
            let x = rng.random_range(0..16);
            cache.apply_flip(&st, x);
        }
        assert!(cache.audit(&st) <= 1e-10);
        let before = cache.strings.clone();
        let lvl = cache.config[3];
        cache.apply(&st, &[(3, lvl)]);
        for (a, b) in before.iter().zip(&cache.strings) {
            assert_eq!(a.value, b.value);
            assert_eq!(a.prefix, b.prefix);
            assert_eq!(a.suffix, b.suffix);
        }
    }

    #[test]
    fn fault_hook_breaks_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let st = random_state(3, 3, Boundary::Periodic, &["lines"], 3, 18);
        let mut cache = AmplitudeCache::new(&st, &random_config(9, &mut rng)).unwrap();
        cache.set_fault_skip_suffix(true);
        for x in [4, 5, 1] {
            cache.apply_flip(&st, x);
        }
        assert!(cache.audit(&st) > 1e-6);
    }

    #[test]
    fn b_vector_normalization_and_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for (pats, bc) in [(&["lines", "loops"][..], Boundary::Periodic), (&["snake"][..], Boundary::Open)] {
            let st = random_state(3, 3, bc, pats, 2, 20);
            let cfg = random_config(9, &mut rng);
            let mut cache = AmplitudeCache::new(&st, &cfg).unwrap();
            let base = st.amplitude(&cfg).to_complex();
            for slot in st.slots().step_by(3).collect::<Vec<_>>() {
                let b = cache.b_vector(&st, slot).unwrap();
                assert!((contract(&b, st.tensor(slot)) - 1.0).norm() < 1e-12);
                let delta: Vec<C64> = (0..b.len()).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
                let eps = 1e-7;
                let mut plus = st.clone();
                let mut minus = st.clone();
                for (k, dz) in delta.iter().enumerate() {
                    plus.tensor_mut(slot)[k] += dz * eps;
                    minus.tensor_mut(slot)[k] -= dz * eps;
                }
                let fd = (plus.amplitude(&cfg).to_complex() - minus.amplitude(&cfg).to_complex()) / (2.0 * eps * base);
                let an = contract(&b, &delta);
                assert!((fd - an).norm() <= 1e-6 * an.norm().max(1e-3), "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn functional_matches_scratch() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let st = random_state(3, 2, Boundary::Open, &["lines", "loops"], 2, 22);
        let cfg = random_config(6, &mut rng);
        let mut cache = AmplitudeCache::new(&st, &cfg).unwrap();
        let base = st.amplitude(&cfg).to_complex();
        for slot in st.slots().collect::<Vec<_>>() {
            for changes in [vec![(0usize, cfg[0] ^ 1)], vec![(1, cfg[1] ^ 1), (4, cfg[4] ^ 1)], vec![]] {
                let c = cache.functional(&st, &changes, slot).unwrap();
                let mut cfg2 = cfg.clone();
                for &(x, l) in &changes {
                    cfg2[x] = l;
                }
                let exact = st.amplitude(&cfg2).to_complex() / base;
                assert!((contract(&c, st.tensor(slot)) - exact).norm() < 1e-10 * exact.norm().max(1e-12));
            }
        }
    }

    #[test]
    fn snake_cache_agrees() {
        let l = Lattice::new(2, 2, Boundary::Open, 2).unwrap();
        let st = StringBondState::random(l.clone(), snake_pattern(&l), 3, ParamMode::Complex, 0.5, &mut ChaCha8Rng::seed_from_u64(23)).unwrap();
        let cache = AmplitudeCache::new(&st, &[1, 0, 1, 1]).unwrap();
        assert!(cache.audit(&st) < 1e-12, "{}", cache.audit(&st));
    }
}
