//! Energy minimization: the sampled gradient applied to every site tensor at
//! once, a backtracking schedule for step size, sample count and bond
//! dimension, and the single-tensor generalized-eigenproblem update.

use crate::derive_seed;
use crate::error::{invalid, Result, SbsError};
use crate::hamiltonian::LocalOperator;
use crate::mat::C64;
use crate::par::Execution;
use crate::sampler::{EstimateWithError, SampleBatch, SamplerConfig};
use crate::state::{ParamMode, Slot, StringBondState};
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// Padding scale for newly created bond-dimension entries.
pub const GROWTH_NOISE: f64 = 1e-3;

/// Gradient of the energy over every parameter. Entry `c` is
/// `dE/dRe(A_c) + i dE/dIm(A_c)`.
#[derive(Clone, Debug)]
pub struct GradientEstimate {
    pub grad: Vec<C64>,
    pub energy: EstimateWithError,
    pub samples: usize,
    pub acceptance: f64,
}

impl GradientEstimate {
    /// Gradient over the state's real coordinates (see
    /// [`StringBondState::to_real_vec`]).
    pub fn to_real_vec(&self, mode: ParamMode) -> Vec<f64> {
        match mode {
            ParamMode::Complex => self.grad.iter().flat_map(|g| [g.re, g.im]).collect(),
            ParamMode::Real => self.grad.iter().map(|g| g.re).collect(),
        }
    }

    /// Gradient entries of one slot tensor.
    pub fn slot<'a>(&'a self, state: &StringBondState, slot: Slot) -> &'a [C64] {
        let lay = state.layout(slot);
        &self.grad[lay.offset..lay.offset + state.local_dim() * lay.matrix_len()]
    }
}

/// `G_c = 2 (<conj(O_c) h> - <conj(O_c)> <h>)` with `O_c = b_c`, the
/// log-derivative, and `h` the local energy, all averaged over the batch.
pub fn sampled_gradient(batch: &SampleBatch) -> Result<GradientEstimate> {
    if batch.weight <= 0.0 {
        return Err(SbsError::EmptyBatch);
    }
    let inv = 1.0 / batch.weight;
    let mean_h = batch.sum_h * inv;
    let grad: Vec<C64> = batch.sum_o.iter().zip(&batch.sum_oh).map(|(&o, &oh)| (oh * inv - o * inv * mean_h) * 2.0).collect();
    if grad.iter().any(|g| !g.re.is_finite() || !g.im.is_finite()) {
        return Err(SbsError::NonFinite);
    }
    Ok(GradientEstimate { grad, energy: batch.energy.clone(), samples: batch.energy.samples, acceptance: batch.acceptance })
}

/// Gradient from a Markov-chain batch at the current parameters.
pub fn sample_gradient(state: &StringBondState, h: &LocalOperator, cfg: &SamplerConfig) -> Result<GradientEstimate> {
    sampled_gradient(&SampleBatch::sample(state, h, cfg)?)
}

/// Gradient with `p(n)` summed exactly over every configuration.
pub fn enumerated_gradient(state: &StringBondState, h: &LocalOperator) -> Result<GradientEstimate> {
    sampled_gradient(&SampleBatch::enumerate(state, h)?)
}

/// How the gradient is scaled before the step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// `A <- A - eta * G`.
    None,
    /// Divide by the global 2-norm: the whole parameter vector moves `eta`.
    Global,
    /// Divide each slot tensor's gradient by its own 2-norm: every tensor
    /// moves `eta`.
    PerSlot,
}

impl Normalization {
    pub fn as_str(&self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::Global => "global",
            Normalization::PerSlot => "per_slot",
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = SbsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "global" => Ok(Normalization::Global),
            "per_slot" => Ok(Normalization::PerSlot),
            _ => Err(invalid(format!("unknown normalization '{s}' (none, global, per_slot)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepPolicy {
    pub normalize: Normalization,
    /// Apply [`StringBondState::rescale_strings`] after the update.
    pub rescale: bool,
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy { normalize: Normalization::Global, rescale: true }
    }
}

/// `A <- A - eta * G` on every tensor simultaneously. In real mode only the
/// real part of `G` is used. A non-finite result leaves the state untouched
/// and returns [`SbsError::NonFinite`].
pub fn step(state: &mut StringBondState, grad: &GradientEstimate, eta: f64, policy: StepPolicy) -> Result<()> {
    if grad.grad.len() != state.n_params() {
        return Err(invalid(format!("gradient has {} entries, state has {}", grad.grad.len(), state.n_params())));
    }
    if eta == 0.0 {
        return Ok(());
    }
    let real = state.mode() == ParamMode::Real;
    let project = |g: C64| if real { C64::new(g.re, 0.0) } else { g };
    let norm = |g: &[C64]| g.iter().map(|&z| project(z).norm_sqr()).sum::<f64>().sqrt();
    let inv = |n: f64| if n > 0.0 { eta / n } else { 0.0 };
    let mut scale = vec![eta; grad.grad.len()];
    match policy.normalize {
        Normalization::None => {}
        Normalization::Global => scale.fill(inv(norm(&grad.grad))),
        Normalization::PerSlot => {
            for slot in state.slots() {
                let lay = state.layout(slot);
                let range = lay.offset..lay.offset + state.local_dim() * lay.matrix_len();
                let f = inv(norm(&grad.grad[range.clone()]));
                scale[range].fill(f);
            }
        }
    }
    let updated: Vec<C64> =
        state.params().iter().zip(&grad.grad).zip(&scale).map(|((&a, &g), &f)| a - project(g) * f).collect();
    if updated.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(SbsError::NonFinite);
    }
    state.params_mut().copy_from_slice(&updated);
    if policy.rescale {
        state.rescale_strings();
    }
    Ok(())
}

/// Enlarges the bond dimension, padding with [`GROWTH_NOISE`]-scale noise
/// drawn from `seed`.
pub fn grow_bond_dimension(state: &StringBondState, new_dim: usize, seed: u64) -> Result<StringBondState> {
    state.grow_bond_dimension(new_dim, GROWTH_NOISE, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn singular() -> SbsError {
    SbsError::Singular("triangular solve with the Cholesky factor of Y failed".into())
}

/// Minimizer of `A^H X A / A^H Y A` over the slot tensor, with `X` made
/// Hermitian and `Y` regularized by `1e-8 * tr(Y) / dim`. The result is
/// scaled to the norm of `current` and phase-aligned with it.
pub fn local_eigensolve_update(x: &DMatrix<C64>, y: &DMatrix<C64>, current: &[C64], mode: ParamMode) -> Result<Vec<C64>> {
    let dim = x.nrows();
    if x.shape() != (dim, dim) || y.shape() != (dim, dim) || current.len() != dim {
        return Err(invalid("X, Y and the tensor must share one dimension"));
    }
    let xh = (x + x.adjoint()) * C64::new(0.5, 0.0);
    let mut yh = (y + y.adjoint()) * C64::new(0.5, 0.0);
    let lambda = 1e-8 * yh.trace().re / dim as f64;
    for i in 0..dim {
        yh[(i, i)] += lambda;
    }
    let chol = Cholesky::new(yh).ok_or_else(|| SbsError::Singular("Y is not positive definite after regularization".into()))?;
    let l = chol.l();
    // C = L^-1 X L^-H is Hermitian with the same spectrum as the pencil.
    let linv_x = l.solve_lower_triangular(&xh).ok_or_else(singular)?;
    let c = l.solve_lower_triangular(&linv_x.adjoint()).ok_or_else(singular)?.adjoint();
    let c = (&c + c.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(c);
    let k = (0..dim).min_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).ok_or(SbsError::EmptyBatch)?;
    let v = eig.eigenvectors.column(k).into_owned();
    let a = l.adjoint().solve_upper_triangular(&v).ok_or_else(singular)?;
    let a0 = DVector::from_column_slice(current);
    let overlap = a0.dotc(&a);
    let phase = if overlap.norm() > 0.0 { overlap.conj() / overlap.norm() } else { C64::new(1.0, 0.0) };
    let scale = a0.norm() / a.norm();
    let mut out: Vec<C64> = a.iter().map(|z| z * phase * scale).collect();
    if mode == ParamMode::Real {
        for z in out.iter_mut() {
            *z = C64::new(z.re, 0.0);
        }
    }
    if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(SbsError::NonFinite);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub eta0: f64,
    /// Factor applied to `eta` after a window of clear descent; 1 disables growth.
    pub eta_growth: f64,
    /// Ceiling for grown steps.
    pub eta_max: f64,
    pub policy: StepPolicy,
    pub samples_init: usize,
    /// Factor applied to `M` on backtracking and on bond-dimension growth.
    pub samples_growth: f64,
    pub samples_cap: usize,
    pub bond_dim_step: usize,
    pub bond_dim_cap: usize,
    /// Iterations at which the bond dimension grows by `bond_dim_step`
    /// (a plateau at the current `D` also triggers growth).
    pub bond_dim_milestones: Vec<usize>,
    pub max_iter: usize,
    /// Iterations per window for the backtracking and convergence tests.
    pub window: usize,
    /// Converged once `D` and `M` are at their caps and the windowed mean
    /// energy moves by less than this.
    pub tolerance: f64,
    pub seed: u64,
    pub chains: usize,
    pub burn_in: Option<usize>,
    pub thinning: usize,
    pub execution: Execution,
}

impl OptimizerConfig {
    pub fn new(seed: u64) -> Self {
        OptimizerConfig {
            eta0: 0.1,
            eta_growth: 1.0,
            eta_max: 1.0,
            policy: StepPolicy::default(),
            samples_init: 2000,
            samples_growth: 2.0,
            samples_cap: 10_000,
            bond_dim_step: 2,
            bond_dim_cap: 4,
            bond_dim_milestones: Vec::new(),
            max_iter: 2000,
            window: 20,
            tolerance: 1e-3,
            seed,
            chains: 4,
            burn_in: None,
            thinning: 1,
            execution: Execution::Parallel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.eta0 > 0.0 && self.eta0.is_finite() && self.samples_init > 0 && self.window >= 2 && self.tolerance >= 0.0;
        if !positive {
            return Err(invalid("optimizer: eta0, M and tolerance must be positive and the window at least 2"));
        }
        if !(self.eta_growth >= 1.0 && self.eta_max >= self.eta0) {
            return Err(invalid("optimizer: eta_growth must be at least 1 and eta_max at least eta"));
        }
        if self.samples_growth < 1.0 || self.samples_cap < self.samples_init {
            return Err(invalid("optimizer: the M schedule must be non-decreasing"));
        }
        if self.bond_dim_step == 0 {
            return Err(invalid("optimizer: D step must be positive"));
        }
        if self.bond_dim_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("optimizer: D milestones must be increasing"));
        }
        Ok(())
    }

    fn sampler(&self, samples: usize, iter: usize) -> SamplerConfig {
        SamplerConfig {
            samples,
            burn_in: self.burn_in,
            thinning: self.thinning,
            chains: self.chains,
            seed: derive_seed(self.seed, iter as u64),
            execution: self.execution,
        }
    }
}

/// Schedule position, enough to resume a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Progress {
    /// Next iteration to run.
    pub iter: usize,
    pub eta: f64,
    pub samples: usize,
}

impl Progress {
    pub fn start(cfg: &OptimizerConfig) -> Self {
        Progress { iter: 0, eta: cfg.eta0, samples: cfg.samples_init }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub iter: usize,
    pub energy: f64,
    pub stderr: f64,
    pub acceptance: f64,
    pub eta: f64,
    pub samples: usize,
    pub bond_dim: usize,
    pub wallclock_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIterations,
}

pub struct OptimizeOutcome {
    pub state: StringBondState,
    pub rows: Vec<TrajectoryRow>,
    pub progress: Progress,
    pub stop: StopReason,
}

#[derive(Default)]
struct Window {
    energies: Vec<f64>,
    variances: Vec<f64>,
    previous: Option<(f64, f64)>,
}

impl Window {
    fn push(&mut self, e: f64, se: f64) {
        self.energies.push(e);
        self.variances.push(se * se);
    }

    /// Mean and standard error of the mean once `len` entries are in.
    fn close(&mut self, len: usize) -> Option<((f64, f64), Option<(f64, f64)>)> {
        if self.energies.len() < len {
            return None;
        }
        let n = self.energies.len() as f64;
        let mean = self.energies.iter().sum::<f64>() / n;
        let se = self.variances.iter().sum::<f64>().sqrt() / n;
        self.energies.clear();
        self.variances.clear();
        let prev = self.previous.replace((mean, se));
        Some(((mean, se), prev))
    }

    fn reset(&mut self) {
        *self = Window::default();
    }
}

/// Sampled gradient descent from `progress` until `max_iter` or convergence.
///
/// Each iteration draws a fresh batch with seed `derive_seed(seed, iter)`,
/// so a run resumed from a checkpoint repeats the same iterations. After
/// every window of iterations the windowed mean energy is compared with the
/// previous window: a rise of more than two standard errors halves `eta` and
/// grows `M`; a drop of more than two standard errors grows `eta` by
/// `eta_growth` up to `eta_max`; a change below two standard errors grows `D` if allowed, else
/// grows `M`, else halves `eta`; a change below `tolerance` with `D` and `M`
/// at their caps ends the run. `observe` sees every row and the state after
/// the step.
pub fn optimize(
    mut state: StringBondState,
    h: &LocalOperator,
    cfg: &OptimizerConfig,
    mut progress: Progress,
    mut observe: impl FnMut(&TrajectoryRow, &StringBondState, &Progress) -> Result<()>,
) -> Result<OptimizeOutcome> {
    cfg.validate()?;
    let clock = Instant::now();
    let mut rows = Vec::new();
    let mut window = Window::default();
    let grow_samples = |m: usize| ((m as f64 * cfg.samples_growth).round() as usize).min(cfg.samples_cap);

    while progress.iter < cfg.max_iter {
        let iter = progress.iter;
        if cfg.bond_dim_milestones.contains(&iter) && state.bond_dim() < cfg.bond_dim_cap {
            let new_dim = (state.bond_dim() + cfg.bond_dim_step).min(cfg.bond_dim_cap);
            state = grow_bond_dimension(&state, new_dim, derive_seed(cfg.seed ^ 0xD, iter as u64))?;
            progress.samples = grow_samples(progress.samples);
            window.reset();
        }

        let batch = SampleBatch::sample(&state, h, &cfg.sampler(progress.samples, iter))?;
        let grad = sampled_gradient(&batch)?;
        let row = TrajectoryRow {
            iter,
            energy: grad.energy.mean.re,
            stderr: grad.energy.stderr,
            acceptance: grad.acceptance,
            eta: progress.eta,
            samples: progress.samples,
            bond_dim: state.bond_dim(),
            wallclock_s: clock.elapsed().as_secs_f64(),
        };
        match step(&mut state, &grad, progress.eta, cfg.policy) {
            Ok(()) => {}
            Err(SbsError::NonFinite) => progress.eta *= 0.5,
            Err(e) => return Err(e),
        }
        progress.iter += 1;
        window.push(row.energy, row.stderr);
        observe(&row, &state, &progress)?;
        rows.push(row);

        let Some(((mean, se), prev)) = window.close(cfg.window) else { continue };
        let Some((prev_mean, prev_se)) = prev else { continue };
        let change = mean - prev_mean;
        let noise = 2.0 * (se * se + prev_se * prev_se).sqrt();
        let at_caps = state.bond_dim() >= cfg.bond_dim_cap && progress.samples >= cfg.samples_cap;
        if change > noise {
            progress.eta *= 0.5;
            progress.samples = grow_samples(progress.samples);
        } else if change < -noise {
            progress.eta = (progress.eta * cfg.eta_growth).min(cfg.eta_max.max(progress.eta));
        } else if change.abs() < cfg.tolerance && at_caps {
            return Ok(OptimizeOutcome { state, rows, progress, stop: StopReason::Converged });
        } else if change.abs() <= noise {
            if state.bond_dim() < cfg.bond_dim_cap {
                let new_dim = (state.bond_dim() + cfg.bond_dim_step).min(cfg.bond_dim_cap);
                state = grow_bond_dimension(&state, new_dim, derive_seed(cfg.seed ^ 0xD, progress.iter as u64))?;
                progress.samples = grow_samples(progress.samples);
                window.reset();
            } else if progress.samples < cfg.samples_cap {
                progress.samples = grow_samples(progress.samples);
            } else {
                progress.eta *= 0.5;
            }
        }
    }
    Ok(OptimizeOutcome { state, rows, progress, stop: StopReason::MaxIterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::AmplitudeCache;
    use crate::exact::{dense_expectation, exact_ground_energy, fd_gradient};
    use crate::hamiltonian::{build_frustrated_xx, build_tfi};
    use crate::lattice::{Boundary, Lattice};
    use crate::pattern::{named_pattern, single_site_pattern};
    use crate::sampler::enumerate_records;
    use crate::sampler::estimate_xy;

    fn state(seed: u64, mode: ParamMode, pats: &[&str], d: usize) -> StringBondState {
        let l = Lattice::new(3, 2, Boundary::Open, 2).unwrap();
        let p = named_pattern(&l, pats).unwrap();
        StringBondState::random(l, p, d, mode, 0.3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn tfi() -> LocalOperator {
        build_tfi(&Lattice::new(3, 2, Boundary::Open, 2).unwrap(), 1.0, 0.8).unwrap()
    }

    fn energy(st: &StringBondState, h: &LocalOperator) -> f64 {
        dense_expectation(st, h).unwrap().re
    }

    fn assert_matches_fd(st: &StringBondState, h: &LocalOperator) {
        let g = enumerated_gradient(st, h).unwrap().to_real_vec(st.mode());
        let fd = fd_gradient(st, h, 1e-6).unwrap();
        let scale = fd.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (k, (a, b)) in g.iter().zip(&fd).enumerate() {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-2 * scale), "coordinate {k}: {a} vs {b}");
        }
    }

    #[test]
    fn enumerated_gradient_matches_finite_differences() {
        let l = Lattice::new(3, 2, Boundary::Open, 2).unwrap();
        let fxx = build_frustrated_xx(&l, 1.0, 0.5, None).unwrap();
        for seed in 0..3 {
            assert_matches_fd(&state(seed, ParamMode::Complex, &["lines", "loops"], 2), &tfi());
            assert_matches_fd(&state(seed + 10, ParamMode::Real, &["snake"], 2), &fxx);
        }
    }

    #[test]
    fn identity_hamiltonian_has_zero_gradient() {
        let st = state(1, ParamMode::Complex, &["lines"], 2);
        let id = LocalOperator::scaled_identity(6, 2, 1.7).unwrap();
        let g = enumerated_gradient(&st, &id).unwrap();
        assert!(g.grad.iter().all(|z| z.norm() < 1e-12));
        let sampled = sample_gradient(&st, &id, &SamplerConfig::new(500, 3)).unwrap();
        assert!(sampled.grad.iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn small_steps_descend() {
        let h = tfi();
        for seed in 0..10 {
            let mut st = state(100 + seed, ParamMode::Complex, &["lines", "loops"], 2);
            let before = energy(&st, &h);
            let g = enumerated_gradient(&st, &h).unwrap();
            step(&mut st, &g, 1e-3, StepPolicy { normalize: Normalization::None, rescale: false }).unwrap();
            assert!(energy(&st, &h) < before, "seed {seed}");
        }
    }

    #[test]
    fn step_geometry() {
        let h = tfi();
        let st = state(7, ParamMode::Complex, &["lines"], 2);
        let g = enumerated_gradient(&st, &h).unwrap();
        let mut same = st.clone();
        step(&mut same, &g, 0.0, StepPolicy::default()).unwrap();
        assert_eq!(same.params(), st.params());

        let mut moved = st.clone();
        step(&mut moved, &g, 0.05, StepPolicy { normalize: Normalization::Global, rescale: false }).unwrap();
        let disp: f64 = moved.params().iter().zip(st.params()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!((disp - 0.05).abs() < 1e-12);

        // Two half steps, the second with the gradient at the midpoint.
        let e0 = energy(&st, &h);
        let mut diffs = Vec::new();
        for eta in [1e-2, 5e-3] {
            let plain = StepPolicy { normalize: Normalization::None, rescale: false };
            let mut full = st.clone();
            step(&mut full, &g, eta, plain).unwrap();
            let mut half = st.clone();
            step(&mut half, &g, eta / 2.0, plain).unwrap();
            let mid = enumerated_gradient(&half, &h).unwrap();
            step(&mut half, &mid, eta / 2.0, plain).unwrap();
            diffs.push((energy(&full, &h) - energy(&half, &h)).abs());
            assert!(energy(&full, &h) < e0);
        }
        assert!(diffs[1] < 0.3 * diffs[0], "{diffs:?}");
    }

    #[test]
    fn rescaling_keeps_descent_direction() {
        let h = tfi();
        let st = state(9, ParamMode::Complex, &["lines", "loops"], 2);
        let mut scaled = st.clone();
        for slot in st.slots().collect::<Vec<_>>() {
            let c = 1.0 + 0.1 * (slot.string + slot.position) as f64;
            scaled.tensor_mut(slot).iter_mut().for_each(|z| *z *= c);
        }
        scaled.rescale_strings();
        let mut reference = st.clone();
        reference.rescale_strings();
        let g1 = enumerated_gradient(&reference, &h).unwrap();
        let g2 = enumerated_gradient(&scaled, &h).unwrap();
        for slot in st.slots().collect::<Vec<_>>() {
            let (a, b) = (g1.slot(&st, slot), g2.slot(&st, slot));
            let dot: C64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
            let na = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if na > 1e-12 {
                assert!((dot.re / (na * nb) - 1.0).abs() < 1e-10);
            }
        }
        // Without the rescale, each slot gradient scales by a positive factor.
        let g3 = enumerated_gradient(&scaled, &h).unwrap();
        assert_eq!(g2.grad, g3.grad);
    }

    #[test]
    fn product_eigenstate_is_stationary() {
        // D = 1, every site fixed to level 0: an eigenstate of the h = 0 model.
        let l = Lattice::new(3, 2, Boundary::Open, 2).unwrap();
        let p = single_site_pattern(&l);
        let st = StringBondState::from_fn(l.clone(), p, 1, ParamMode::Complex, |_, k, r, c| {
            let mut m = crate::mat::Mat::zeros(r, c);
            m.data[0] = C64::new(if k == 0 { 1.0 } else { 0.0 }, 0.0);
            m
        })
        .unwrap();
        let h = build_tfi(&l, 1.0, 0.0).unwrap();
        let g = enumerated_gradient(&st, &h).unwrap();
        assert!(g.energy.mean.re + 7.0 < 1e-12);
        // Only the level-0 slots can have nonzero b; the gradient vanishes.
        assert!(g.grad.iter().all(|z| z.norm() < 1e-12));
        let mut cache = AmplitudeCache::new(&st, &[0; 6]).unwrap();
        assert!((h.local_value(&st, &mut cache).unwrap().re + 7.0).abs() < 1e-12);
    }

    #[test]
    fn growth_preserves_energy() {
        let h = tfi();
        for pats in [&["lines", "loops"][..], &["snake"][..]] {
            let st = state(13, ParamMode::Complex, pats, 2);
            let e0 = energy(&st, &h);
            let exact = st.grow_bond_dimension(4, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            assert!((energy(&exact, &h) - e0).abs() < 1e-12 * e0.abs());
            let grown = grow_bond_dimension(&st, 4, 2).unwrap();
            assert!((energy(&grown, &h) - e0).abs() <= 1e-3 * e0.abs());
        }
    }

    #[test]
    fn eigensolve_improves_and_is_stationary_at_optimum() {
        let h = tfi();
        let mut st = state(17, ParamMode::Complex, &["lines", "loops"], 2);
        let slot = Slot { string: 4, position: 1 };
        let before = energy(&st, &h);
        let recs = enumerate_records(&st, &h, slot).unwrap();
        let (x, y) = estimate_xy(&recs).unwrap();
        let a = local_eigensolve_update(&x, &y, st.tensor(slot), st.mode()).unwrap();
        st.tensor_mut(slot).copy_from_slice(&a);
        let after = energy(&st, &h);
        assert!(after < before);
        // Solving again at the new point returns the same tensor up to scale.
        let recs = enumerate_records(&st, &h, slot).unwrap();
        let (x, y) = estimate_xy(&recs).unwrap();
        let again = local_eigensolve_update(&x, &y, st.tensor(slot), st.mode()).unwrap();
        let cur = st.tensor(slot);
        let dot: C64 = cur.iter().zip(&again).map(|(p, q)| p.conj() * q).sum();
        let n1 = cur.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let n2 = again.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!((dot.norm() / (n1 * n2) - 1.0).abs() < 1e-8);
        assert!((energy(&st, &h) - after).abs() < 1e-10);
    }

    #[test]
    fn optimize_descends_small_tfi() {
        let l = Lattice::new(3, 2, Boundary::Open, 2).unwrap();
        let h = build_tfi(&l, 1.0, 1.0).unwrap();
        let p = named_pattern(&l, &["lines", "loops"]).unwrap();
        let st = StringBondState::random(l, p, 2, ParamMode::Real, 0.1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let start = energy(&st, &h);
        let mut cfg = OptimizerConfig::new(5);
        cfg.max_iter = 60;
        cfg.samples_init = 500;
        cfg.samples_cap = 1000;
        cfg.bond_dim_cap = 2;
        let mut seen = 0;
        let out = optimize(st, &h, &cfg, Progress::start(&cfg), |_, _, _| {
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, out.rows.len());
        let end = energy(&out.state, &h);
        let e0 = exact_ground_energy(&h).unwrap();
        assert!(end < start && end >= e0 - 1e-9, "{start} -> {end} (ground {e0})");
    }

    #[test]
    fn clear_descent_grows_the_step_up_to_the_cap() {
        let l = Lattice::new(3, 2, Boundary::Open, 2).unwrap();
        let h = build_tfi(&l, 1.0, 1.0).unwrap();
        let p = named_pattern(&l, &["lines", "loops"]).unwrap();
        let st = StringBondState::random(l, p, 2, ParamMode::Real, 1.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut cfg = OptimizerConfig::new(5);
        cfg.max_iter = 40;
        cfg.window = 5;
        cfg.samples_init = 500;
        cfg.samples_cap = 500;
        cfg.bond_dim_cap = 2;
        cfg.eta0 = 0.05;
        cfg.eta_growth = 1.5;
        cfg.eta_max = 0.1;
        let out = optimize(st, &h, &cfg, Progress::start(&cfg), |_, _, _| Ok(())).unwrap();
        let top = out.rows.iter().map(|r| r.eta).fold(0.0, f64::max);
        assert!(top > cfg.eta0 && top <= cfg.eta_max, "largest step {top}");

        cfg.eta_growth = 0.5;
        assert!(cfg.validate().is_err());
        cfg.eta_growth = 1.0;
        cfg.eta_max = 0.01;
        assert!(cfg.validate().is_err());
    }
}
