//! Run drivers behind the command-line front end: optimize, sweep, measure
//! and the built-in self-check.

use crate::cache::AmplitudeCache;
use crate::derive_seed;
use crate::error::{invalid, Result, SbsError};
use crate::exact::{dense_expectation, dense_wavefunction, fd_gradient, index_to_config};
use crate::hamiltonian::{build_tfi, LocalOperator, Observable};
use crate::io::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::io::config::RunConfig;
use crate::io::csv::{num, CsvWriter};
use crate::lattice::{Boundary, Lattice};
use crate::mat::C64;
use crate::optimizer::{enumerated_gradient, optimize, OptimizeOutcome, Progress, StopReason, TrajectoryRow};
use crate::pattern::named_pattern;
use crate::sampler::{enumerate_estimates, exact_probabilities, sample_observables_with_acceptance, ChainState, START_ATTEMPTS};
use crate::state::{ParamMode, StringBondState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// Seed stream used by measurements, so `measure` and the measurement step of
/// a single-point `sweep` draw identical samples.
pub const MEASURE_STREAM: u64 = 0x4D45_4153;

pub const TRAJECTORY_COLUMNS: [&str; 8] = ["iter", "energy", "stderr", "acceptance", "eta", "M", "D", "wallclock_s"];

pub const SWEEP_COLUMNS: [&str; 13] =
    ["h", "energy", "stderr", "m_x", "m_x_err", "m_z2", "m_z2_err", "acceptance", "D", "M", "iterations", "converged", "status"];

/// Process exit code for an error: 1 for bad input, 2 for runtime failures.
pub fn exit_code(err: &SbsError) -> i32 {
    match err {
        SbsError::InvalidInput(_)
        | SbsError::Pattern(_)
        | SbsError::Parse { .. }
        | SbsError::Version(_)
        | SbsError::Io(_)
        | SbsError::TooLarge { .. } => 1,
        _ => 2,
    }
}

fn single_field(cfg: &RunConfig) -> Result<f64> {
    match cfg.fields[..] {
        [h] => Ok(h),
        _ => Err(invalid("model: this command takes a single `h`; use `sweep` for `h_range`")),
    }
}

fn trajectory_row(row: &TrajectoryRow, wallclock: bool) -> Vec<String> {
    vec![
        row.iter.to_string(),
        num(row.energy),
        num(row.stderr),
        num(row.acceptance),
        num(row.eta),
        row.samples.to_string(),
        row.bond_dim.to_string(),
        num(if wallclock { row.wallclock_s } else { f64::NAN }),
    ]
}

fn units_line() -> String {
    "energies are totals in units of J; stderr from binning; eta is the step length; wallclock_s in seconds (nan when disabled)".into()
}

pub struct OptimizeSummary {
    pub outcome: OptimizeOutcome,
}

impl OptimizeSummary {
    pub fn converged(&self) -> bool {
        self.outcome.stop == StopReason::Converged
    }
}

/// `optimize`: runs the optimizer from a fresh state or a checkpoint, writes
/// the trajectory CSV, periodic checkpoints and the final checkpoint.
pub fn run_optimize(cfg: &RunConfig, resume: Option<&Path>) -> Result<OptimizeSummary> {
    let h = cfg.hamiltonian(single_field(cfg)?)?;
    let (state, progress) = match resume {
        Some(path) => {
            let ck = read_checkpoint(path)?;
            if ck.state.lattice() != &cfg.lattice {
                return Err(invalid(format!("checkpoint {} is for a different lattice", path.display())));
            }
            let progress = ck.progress.unwrap_or_else(|| Progress::start(&cfg.optimizer));
            (ck.state, progress)
        }
        None => (cfg.initial_state()?, Progress::start(&cfg.optimizer)),
    };
    let mut comments = cfg.header("optimize");
    comments.push(units_line());
    let mut csv = CsvWriter::create(&cfg.trajectory, &comments, &TRAJECTORY_COLUMNS)?;
    let seed = cfg.optimizer.seed;
    let every = cfg.checkpoint_every;
    let outcome = optimize(state, &h, &cfg.optimizer, progress, |row, st, p| {
        csv.row(&trajectory_row(row, cfg.wallclock))?;
        if every > 0 && p.iter % every == 0 {
            write_checkpoint(&cfg.checkpoint, &Checkpoint { state: st.clone(), seed, progress: Some(p.clone()) })?;
        }
        Ok(())
    })?;
    write_checkpoint(&cfg.checkpoint, &Checkpoint { state: outcome.state.clone(), seed, progress: Some(outcome.progress.clone()) })?;
    log::info!("optimize: {} iterations, stop {:?}", outcome.rows.len(), outcome.stop);
    Ok(OptimizeSummary { outcome })
}

#[derive(Clone, Debug)]
pub struct Measurement {
    pub name: String,
    pub mean: C64,
    pub stderr: f64,
    pub autocorrelation: f64,
    pub samples: usize,
}

/// Energy followed by the configured observables, sampled with the measure
/// seed stream.
pub fn measure_state(cfg: &RunConfig, state: &StringBondState, h: &LocalOperator, seed: u64) -> Result<(Vec<Measurement>, f64)> {
    let obs: Vec<Observable> = cfg.observables.iter().map(|o| Observable::parse(state.lattice(), o)).collect::<Result<_>>()?;
    let mut ops: Vec<&LocalOperator> = vec![h];
    ops.extend(obs.iter().map(|o| &o.op));
    let sampler = cfg.sampler(cfg.measure_samples, derive_seed(seed, MEASURE_STREAM));
    let (est, acceptance) = sample_observables_with_acceptance(state, &ops, &sampler)?;
    let names = std::iter::once("energy".to_string()).chain(obs.iter().map(|o| o.name.clone()));
    let rows = names
        .zip(est)
        .map(|(name, e)| Measurement { name, mean: e.mean, stderr: e.stderr, autocorrelation: e.autocorrelation, samples: e.samples })
        .collect();
    Ok((rows, acceptance))
}

/// `measure`: energy and observables of a checkpoint.
pub fn run_measure(cfg: &RunConfig, checkpoint: &Path) -> Result<Vec<Measurement>> {
    let ck = read_checkpoint(checkpoint)?;
    let h = cfg.hamiltonian_on(ck.state.lattice(), single_field(cfg)?)?;
    let (rows, acceptance) = measure_state(cfg, &ck.state, &h, cfg.optimizer.seed)?;
    let mut comments = cfg.header("measure");
    comments.push(format!("checkpoint {}; acceptance {}", checkpoint.display(), num(acceptance)));
    comments.push("values are per-configuration estimators averaged over samples; tau is the integrated autocorrelation time in samples".into());
    let mut csv = CsvWriter::create(&cfg.measure, &comments, &["observable", "mean", "mean_im", "stderr", "tau", "samples"])?;
    for m in &rows {
        csv.row(&[m.name.clone(), num(m.mean.re), num(m.mean.im), num(m.stderr), num(m.autocorrelation), m.samples.to_string()])?;
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub h: f64,
    pub energy: f64,
    pub stderr: f64,
    pub m_x: f64,
    pub m_x_err: f64,
    pub m_z2: f64,
    pub m_z2_err: f64,
    pub acceptance: f64,
    pub bond_dim: usize,
    pub samples: usize,
    pub iterations: usize,
    pub converged: bool,
    pub status: String,
}

impl SweepRow {
    fn failed(h: f64, msg: &str) -> Self {
        SweepRow {
            h,
            energy: f64::NAN,
            stderr: f64::NAN,
            m_x: f64::NAN,
            m_x_err: f64::NAN,
            m_z2: f64::NAN,
            m_z2_err: f64::NAN,
            acceptance: f64::NAN,
            bond_dim: 0,
            samples: 0,
            iterations: 0,
            converged: false,
            status: format!("failed: {}", msg.replace([',', '\n'], ";")),
        }
    }

    fn fields(&self) -> Vec<String> {
        vec![
            num(self.h),
            num(self.energy),
            num(self.stderr),
            num(self.m_x),
            num(self.m_x_err),
            num(self.m_z2),
            num(self.m_z2_err),
            num(self.acceptance),
            self.bond_dim.to_string(),
            self.samples.to_string(),
            self.iterations.to_string(),
            u8::from(self.converged).to_string(),
            self.status.clone(),
        ]
    }
}

/// `sweep`: optimizes at each field in turn, warm-starting from the previous
/// optimum unless `cold_start` is set, and measures energy, `m_x` and `m_z^2`.
/// The first point uses the run seed, later points derived seeds. A failing
/// point is recorded with a `failed` status and the sweep continues.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let mut measure_cfg = cfg.clone();
    measure_cfg.observables = vec!["mx".into(), "mz2".into()];
    let mut comments = cfg.header("sweep");
    comments.push(units_line());
    comments.push("m_x is the mean of X per site; m_z2 is the mean of (sum_i Z_i / N)^2".into());
    let mut csv = CsvWriter::create(&cfg.sweep, &comments, &SWEEP_COLUMNS)?;
    let mut rows = Vec::new();
    let mut previous: Option<StringBondState> = None;
    for (k, &field) in cfg.fields.iter().enumerate() {
        let seed = if k == 0 { cfg.optimizer.seed } else { derive_seed(cfg.optimizer.seed, k as u64) };
        let mut opt = cfg.optimizer.clone();
        opt.seed = seed;
        let point = (|| -> Result<(SweepRow, StringBondState)> {
            let h = cfg.hamiltonian(field)?;
            let start = match (&previous, cfg.cold_start) {
                (Some(s), false) => s.clone(),
                _ => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    StringBondState::random(cfg.lattice.clone(), cfg.pattern.clone(), cfg.bond_dim, cfg.mode, cfg.init_noise, &mut rng)?
                }
            };
            let out = optimize(start, &h, &opt, Progress::start(&opt), |_, _, _| Ok(()))?;
            let (m, acceptance) = measure_state(&measure_cfg, &out.state, &h, seed)?;
            let converged = out.stop == StopReason::Converged;
            let row = SweepRow {
                h: field,
                energy: m[0].mean.re,
                stderr: m[0].stderr,
                m_x: m[1].mean.re,
                m_x_err: m[1].stderr,
                m_z2: m[2].mean.re,
                m_z2_err: m[2].stderr,
                acceptance,
                bond_dim: out.state.bond_dim(),
                samples: out.progress.samples,
                iterations: out.rows.len(),
                converged,
                status: if converged { "ok" } else { "max_iter" }.into(),
            };
            Ok((row, out.state))
        })();
        let row = match point {
            Ok((row, state)) => {
                previous = Some(state);
                row
            }
            Err(e) => {
                log::warn!("sweep point h = {field} failed: {e}");
                SweepRow::failed(field, &e.to_string())
            }
        };
        csv.row(&row.fields())?;
        rows.push(row);
    }
    if let Some(state) = previous {
        write_checkpoint(&cfg.checkpoint, &Checkpoint { state, seed: cfg.optimizer.seed, progress: None })?;
    }
    Ok(rows)
}

/// Seconds per Metropolis sweep (`N` single-flip proposals with ratio
/// evaluation and cache updates), averaged over `sweeps` after one warm-up.
pub fn sweep_seconds(state: &StringBondState, sweeps: usize, seed: u64) -> Result<f64> {
    let mut chain = ChainState::start(state, seed, 0, START_ATTEMPTS)?;
    chain.sweep(state)?;
    let t = Instant::now();
    for _ in 0..sweeps {
        chain.sweep(state)?;
    }
    Ok(t.elapsed().as_secs_f64() / sweeps as f64)
}

/// Least-squares slope of `ln t` against `ln D`.
pub fn fit_exponent(dims: &[usize], times: &[f64]) -> f64 {
    let xs: Vec<f64> = dims.iter().map(|&d| (d as f64).ln()).collect();
    let ys: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Sweep-time exponent in `D` on a 6x6 lattice: closed strings (periodic
/// lines + loops) and open strings (open lines + snake).
pub fn scaling_exponents(dims: &[usize], seed: u64) -> Result<(f64, f64)> {
    let fit = |boundary: Boundary, names: &[&str]| -> Result<f64> {
        let l = Lattice::new(6, 6, boundary, 2)?;
        let p = named_pattern(&l, names)?;
        let mut times = Vec::new();
        for &d in dims {
            let st = StringBondState::random(l.clone(), p.clone(), d, ParamMode::Complex, 0.1, &mut ChaCha8Rng::seed_from_u64(seed))?;
            // Enough sweeps for roughly 0.2 s of work at each size.
            let probe = sweep_seconds(&st, 2, seed)?;
            let sweeps = ((0.2 / probe).ceil() as usize).clamp(3, 2000);
            times.push(sweep_seconds(&st, sweeps, seed)?);
        }
        Ok(fit_exponent(dims, &times))
    };
    Ok((fit(Boundary::Periodic, &["lines", "loops"])?, fit(Boundary::Open, &["lines", "snake"])?))
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CheckOptions {
    /// Corrupt the cache-update path (suffix refresh skipped) to confirm the
    /// cache check catches it.
    pub fault_cache: bool,
    /// Skip the timing fit.
    pub skip_timing: bool,
}

fn check_cache(fault: bool) -> Result<CheckResult> {
    let l = Lattice::new(4, 4, Boundary::Periodic, 2)?;
    let p = named_pattern(&l, &["lines", "loops"])?;
    let st = StringBondState::random(l, p, 4, ParamMode::Complex, 0.3, &mut ChaCha8Rng::seed_from_u64(11))?;
    let mut chain = ChainState::start(&st, 12, 0, START_ATTEMPTS)?;
    chain.cache_mut().set_fault_skip_suffix(fault);
    let mut accepted = 0;
    while accepted < 2000 {
        accepted += usize::from(chain.step(&st)?);
    }
    let drift = chain.cache().audit(&st);
    Ok(CheckResult { name: "cache consistency", passed: drift <= 1e-8, detail: format!("relative drift {drift:.2e} after {accepted} accepted flips") })
}

fn check_ratios() -> Result<CheckResult> {
    let l = Lattice::new(3, 3, Boundary::Periodic, 2)?;
    let p = named_pattern(&l, &["lines", "loops"])?;
    let st = StringBondState::random(l, p, 3, ParamMode::Complex, 0.5, &mut ChaCha8Rng::seed_from_u64(13))?;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let cfg: Vec<u8> = (0..9).map(|_| rng.random_range(0..2u8)).collect();
        let mut cache = AmplitudeCache::new(&st, &cfg)?;
        for x in 0..9 {
            let r = cache.ratio_flip(&st, x)?;
            let mut c2 = cfg.clone();
            c2[x] ^= 1;
            let exact = st.amplitude(&c2).to_complex() / st.amplitude(&cfg).to_complex();
            worst = worst.max((r - exact).norm() / exact.norm());
        }
    }
    Ok(CheckResult { name: "ratio vs from-scratch", passed: worst <= 1e-10, detail: format!("max relative error {worst:.2e}") })
}

fn check_gradient() -> Result<CheckResult> {
    let l = Lattice::new(3, 2, Boundary::Open, 2)?;
    let p = named_pattern(&l, &["lines", "loops"])?;
    let st = StringBondState::random(l.clone(), p, 2, ParamMode::Complex, 0.3, &mut ChaCha8Rng::seed_from_u64(15))?;
    let h = build_tfi(&l, 1.0, 0.9)?;
    let g = enumerated_gradient(&st, &h)?.to_real_vec(st.mode());
    let fd = fd_gradient(&st, &h, 1e-6)?;
    let scale = fd.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let worst = g.iter().zip(&fd).map(|(a, b)| (a - b).abs() / b.abs().max(1e-2 * scale)).fold(0.0, f64::max);
    Ok(CheckResult { name: "gradient vs finite differences", passed: worst <= 1e-6, detail: format!("max relative error {worst:.2e}") })
}

fn check_detailed_balance() -> Result<CheckResult> {
    let l = Lattice::new(3, 2, Boundary::Open, 2)?;
    let p = named_pattern(&l, &["lines", "loops"])?;
    let st = StringBondState::random(l, p, 2, ParamMode::Complex, 0.5, &mut ChaCha8Rng::seed_from_u64(16))?;
    let probs = exact_probabilities(&st)?;
    let n = st.n_sites();
    let mut cfg = vec![0u8; n];
    let mut worst: f64 = 0.0;
    for (i, &p_i) in probs.iter().enumerate() {
        index_to_config(i, n, 2, &mut cfg);
        let mut cache = AmplitudeCache::new(&st, &cfg)?;
        for x in 0..n {
            let j = i ^ (1 << (n - 1 - x));
            let forward = p_i * cache.ratio_flip(&st, x)?.norm_sqr().min(1.0) / n as f64;
            let backward = probs[j] * (p_i / probs[j]).min(1.0) / n as f64;
            worst = worst.max((forward - backward).abs() / forward.max(backward));
        }
    }
    Ok(CheckResult { name: "detailed balance", passed: worst <= 1e-10, detail: format!("max relative flow mismatch {worst:.2e}") })
}

fn check_parity() -> Result<CheckResult> {
    let mut bad = 0;
    let mut total = 0;
    for (lx, ly) in [(2, 2), (3, 3)] {
        let l = Lattice::new(lx, ly, Boundary::Open, 2)?;
        let st = StringBondState::parity_state(l.clone())?;
        let psi = dense_wavefunction(&st)?;
        let full = 2f64.powi(l.plaquettes().len() as i32);
        let mut cfg = vec![0u8; l.n_sites()];
        for (i, a) in psi.amplitudes.iter().enumerate() {
            index_to_config(i, l.n_sites(), 2, &mut cfg);
            let even = l.plaquettes().iter().all(|pl| pl.iter().map(|&s| cfg[s] as u32).sum::<u32>() % 2 == 0);
            total += 1;
            if *a != C64::new(if even { full } else { 0.0 }, 0.0) {
                bad += 1;
            }
        }
    }
    Ok(CheckResult { name: "toric-code parity", passed: bad == 0, detail: format!("{bad} of {total} amplitudes wrong") })
}

fn check_estimators() -> Result<CheckResult> {
    let l = Lattice::new(3, 2, Boundary::Open, 2)?;
    let p = named_pattern(&l, &["snake"])?;
    let st = StringBondState::random(l.clone(), p, 3, ParamMode::Complex, 0.5, &mut ChaCha8Rng::seed_from_u64(17))?;
    let h = build_tfi(&l, 1.0, 1.3)?;
    let e1 = enumerate_estimates(&st, &[&h])?[0];
    let e2 = dense_expectation(&st, &h)?;
    let diff = (e1 - e2).norm() / e2.norm();
    Ok(CheckResult { name: "enumeration vs dense oracle", passed: diff <= 1e-10, detail: format!("relative difference {diff:.2e}") })
}

/// Runs the invariant suite and writes a table to `out`.
pub fn run_check(out: &mut dyn Write, opts: CheckOptions) -> Result<Vec<CheckResult>> {
    let checks: Vec<Box<dyn Fn() -> Result<CheckResult>>> = vec![
        Box::new(move || check_cache(opts.fault_cache)),
        Box::new(check_ratios),
        Box::new(check_gradient),
        Box::new(check_detailed_balance),
        Box::new(check_parity),
        Box::new(check_estimators),
    ];
    let mut results = Vec::new();
    writeln!(out, "{:<32} {:<6} detail", "check", "result")?;
    for c in checks {
        let r = c().unwrap_or_else(|e| CheckResult { name: "error", passed: false, detail: e.to_string() });
        writeln!(out, "{:<32} {:<6} {}", r.name, if r.passed { "pass" } else { "FAIL" }, r.detail)?;
        results.push(r);
    }
    if !opts.skip_timing {
        let (closed, open) = scaling_exponents(&[4, 8, 16], 18)?;
        writeln!(out, "{:<32} {:<6} closed strings D^{closed:.2}, open strings D^{open:.2}", "sweep cost exponent", "info")?;
    }
    Ok(results)
}
