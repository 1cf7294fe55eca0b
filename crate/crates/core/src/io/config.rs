//! Run configuration: TOML with `[lattice]`, `[model]`, `[pattern]`,
//! `[sampler]`, `[optimizer]`, `[measure]` and `[output]` sections.
//! Relative input paths (pattern and frustration files) are resolved against
//! the directory of the config file; output paths against `[output] dir`.
//! `sampler.seed` is mandatory.

use crate::error::{invalid, Result};
use crate::hamiltonian::{build_frustrated_xx, build_tfi, parse_bond_signs, LocalHamiltonian, Observable};
use crate::lattice::{Boundary, Lattice};
use crate::optimizer::{OptimizerConfig, StepPolicy};
use crate::par::Execution;
use crate::pattern::{load_pattern, named_pattern, StringPattern};
use crate::sampler::SamplerConfig;
use crate::state::{ParamMode, StringBondState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    lattice: RawLattice,
    model: RawModel,
    pattern: RawPattern,
    sampler: RawSampler,
    #[serde(default)]
    optimizer: RawOptimizer,
    #[serde(default)]
    measure: RawMeasure,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLattice {
    #[serde(rename = "Lx")]
    lx: usize,
    #[serde(rename = "Ly")]
    ly: usize,
    boundary: String,
    #[serde(default = "two")]
    d: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    name: String,
    #[serde(rename = "J", default = "one")]
    j: f64,
    h: Option<f64>,
    h_range: Option<Vec<f64>>,
    frustration: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPattern {
    #[serde(default)]
    strings: Vec<String>,
    file: Option<PathBuf>,
    #[serde(rename = "D", default = "two")]
    bond_dim: usize,
    #[serde(rename = "D_step", default = "two")]
    bond_dim_step: usize,
    #[serde(rename = "D_cap")]
    bond_dim_cap: Option<usize>,
    #[serde(rename = "D_milestones", default)]
    bond_dim_milestones: Vec<usize>,
    #[serde(default = "real")]
    mode: String,
    #[serde(default = "default_noise")]
    init_noise: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSampler {
    #[serde(rename = "M", default = "default_m")]
    samples: usize,
    #[serde(rename = "M_growth", default = "two_f")]
    samples_growth: f64,
    #[serde(rename = "M_cap")]
    samples_cap: Option<usize>,
    burn_in: Option<usize>,
    #[serde(default = "one_u")]
    thinning: usize,
    #[serde(default = "four")]
    chains: usize,
    seed: u64,
    #[serde(default = "parallel")]
    execution: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawOptimizer {
    eta: f64,
    eta_growth: f64,
    eta_max: Option<f64>,
    normalize: String,
    rescale: bool,
    max_iter: usize,
    window: usize,
    tolerance: f64,
    checkpoint_every: usize,
    cold_start: bool,
}

impl Default for RawOptimizer {
    fn default() -> Self {
        let d = OptimizerConfig::new(0);
        RawOptimizer {
            eta: d.eta0,
            eta_growth: d.eta_growth,
            eta_max: None,
            normalize: d.policy.normalize.as_str().into(),
            rescale: d.policy.rescale,
            max_iter: d.max_iter,
            window: d.window,
            tolerance: d.tolerance,
            checkpoint_every: 0,
            cold_start: false,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawMeasure {
    observables: Vec<String>,
    #[serde(rename = "M")]
    samples: Option<usize>,
}

impl Default for RawMeasure {
    fn default() -> Self {
        RawMeasure { observables: vec!["mx".into(), "mz2".into()], samples: None }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawOutput {
    dir: PathBuf,
    trajectory: PathBuf,
    checkpoint: PathBuf,
    sweep: PathBuf,
    measure: PathBuf,
    wallclock: bool,
}

impl Default for RawOutput {
    fn default() -> Self {
        RawOutput {
            dir: PathBuf::from("."),
            trajectory: "trajectory.csv".into(),
            checkpoint: "state.sbs".into(),
            sweep: "sweep.csv".into(),
            measure: "measure.csv".into(),
            wallclock: true,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn two_f() -> f64 {
    2.0
}
fn one_u() -> usize {
    1
}
fn two() -> usize {
    2
}
fn four() -> usize {
    4
}
fn default_m() -> usize {
    2000
}
fn default_noise() -> f64 {
    crate::state::DEFAULT_INIT_NOISE
}
fn real() -> String {
    "real".into()
}
fn parallel() -> String {
    "parallel".into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Tfi,
    FrustratedXx,
}

/// A validated run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    /// First 16 hex digits of the SHA-256 of the config text.
    pub hash: String,
    pub lattice: Lattice,
    pub model: ModelKind,
    pub j: f64,
    /// Field values: one for `h`, several for `h_range`.
    pub fields: Vec<f64>,
    pub bond_signs: Option<Vec<f64>>,
    pub pattern: StringPattern,
    pub bond_dim: usize,
    pub mode: ParamMode,
    pub init_noise: f64,
    pub optimizer: OptimizerConfig,
    pub checkpoint_every: usize,
    pub cold_start: bool,
    pub observables: Vec<String>,
    pub measure_samples: usize,
    pub output_dir: PathBuf,
    pub trajectory: PathBuf,
    pub checkpoint: PathBuf,
    pub sweep: PathBuf,
    pub measure: PathBuf,
    pub wallclock: bool,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses config text; `base` resolves relative input paths.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| invalid(format!("config: {}", e.to_string().trim_end())))?;
        let hash = hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string();

        let boundary: Boundary = raw.lattice.boundary.parse()?;
        let lattice = Lattice::new(raw.lattice.lx, raw.lattice.ly, boundary, raw.lattice.d)?;

        let model = match raw.model.name.as_str() {
            "tfi" => ModelKind::Tfi,
            "frustrated_xx" => ModelKind::FrustratedXx,
            other => return Err(invalid(format!("model.name: unknown model `{other}` (tfi, frustrated_xx)"))),
        };
        if lattice.local_dim() != 2 {
            return Err(invalid("lattice.d: the shipped models are spin-1/2 (d = 2)"));
        }
        let fields = match (raw.model.h, raw.model.h_range) {
            (Some(h), None) => vec![h],
            (None, Some(r)) if !r.is_empty() => r,
            (None, _) => return Err(invalid("model: one of `h` or a non-empty `h_range` is required")),
            (Some(_), Some(_)) => return Err(invalid("model: give either `h` or `h_range`, not both")),
        };
        if fields.iter().any(|h| !h.is_finite()) || !raw.model.j.is_finite() {
            return Err(invalid("model: J and h must be finite"));
        }
        if fields.windows(2).any(|w| w[1] <= w[0]) && fields.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("model.h_range: field values must be monotone"));
        }
        let bond_signs = match &raw.model.frustration {
            Some(f) if model == ModelKind::FrustratedXx => {
                let p = resolve(base, f);
                let text = std::fs::read_to_string(&p).map_err(|e| invalid(format!("model.frustration: {}: {e}", p.display())))?;
                Some(parse_bond_signs(&text, &lattice)?)
            }
            Some(_) => return Err(invalid("model.frustration applies only to frustrated_xx")),
            None => None,
        };

        let mut pattern: Option<StringPattern> = None;
        if !raw.pattern.strings.is_empty() {
            let names: Vec<&str> = raw.pattern.strings.iter().map(String::as_str).collect();
            pattern = Some(named_pattern(&lattice, &names)?);
        }
        if let Some(f) = &raw.pattern.file {
            let p = resolve(base, f);
            let text = std::fs::read_to_string(&p).map_err(|e| invalid(format!("pattern.file: {}: {e}", p.display())))?;
            let loaded = load_pattern(&text, lattice.n_sites())?;
            pattern = Some(match pattern {
                Some(named) => StringPattern::combine(&[named, loaded])?,
                None => loaded,
            });
        }
        let pattern = pattern.ok_or_else(|| invalid("pattern: give `strings` and/or `file`"))?;
        let mode = match raw.pattern.mode.as_str() {
            "real" => ParamMode::Real,
            "complex" => ParamMode::Complex,
            other => return Err(invalid(format!("pattern.mode: `{other}` (real, complex)"))),
        };
        if raw.pattern.bond_dim == 0 {
            return Err(invalid("pattern.D must be positive"));
        }

        let execution = match raw.sampler.execution.as_str() {
            "parallel" => Execution::Parallel,
            "sequential" => Execution::Sequential,
            other => return Err(invalid(format!("sampler.execution: `{other}` (parallel, sequential)"))),
        };
        let samples_cap = raw.sampler.samples_cap.unwrap_or(raw.sampler.samples);
        let optimizer = OptimizerConfig {
            eta0: raw.optimizer.eta,
            eta_growth: raw.optimizer.eta_growth,
            // Grown steps stay within a factor 8 of the initial step by default.
            eta_max: raw.optimizer.eta_max.unwrap_or(8.0 * raw.optimizer.eta),
            policy: StepPolicy { normalize: raw.optimizer.normalize.parse()?, rescale: raw.optimizer.rescale },
            samples_init: raw.sampler.samples,
            samples_growth: raw.sampler.samples_growth,
            samples_cap,
            bond_dim_step: raw.pattern.bond_dim_step,
            bond_dim_cap: raw.pattern.bond_dim_cap.unwrap_or(raw.pattern.bond_dim),
            bond_dim_milestones: raw.pattern.bond_dim_milestones,
            max_iter: raw.optimizer.max_iter,
            window: raw.optimizer.window,
            tolerance: raw.optimizer.tolerance,
            seed: raw.sampler.seed,
            chains: raw.sampler.chains,
            burn_in: raw.sampler.burn_in,
            thinning: raw.sampler.thinning,
            execution,
        };
        optimizer.validate()?;
        if optimizer.bond_dim_cap < raw.pattern.bond_dim {
            return Err(invalid("pattern.D_cap must be at least D"));
        }
        let measure_samples = raw.measure.samples.unwrap_or(samples_cap);
        SamplerConfig::new(measure_samples, 0).validate()?;
        for o in &raw.measure.observables {
            Observable::parse(&lattice, o)?;
        }

        let dir = raw.output.dir;
        Ok(RunConfig {
            hash,
            model,
            j: raw.model.j,
            fields,
            bond_signs,
            pattern,
            bond_dim: raw.pattern.bond_dim,
            mode,
            init_noise: raw.pattern.init_noise,
            optimizer,
            checkpoint_every: raw.optimizer.checkpoint_every,
            cold_start: raw.optimizer.cold_start,
            observables: raw.measure.observables,
            measure_samples,
            trajectory: dir.join(raw.output.trajectory),
            checkpoint: dir.join(raw.output.checkpoint),
            sweep: dir.join(raw.output.sweep),
            measure: dir.join(raw.output.measure),
            output_dir: dir,
            wallclock: raw.output.wallclock,
            lattice,
        })
    }

    pub fn hamiltonian(&self, h: f64) -> Result<LocalHamiltonian> {
        self.hamiltonian_on(&self.lattice, h)
    }

    pub fn hamiltonian_on(&self, lattice: &Lattice, h: f64) -> Result<LocalHamiltonian> {
        match self.model {
            ModelKind::Tfi => build_tfi(lattice, self.j, h),
            ModelKind::FrustratedXx => build_frustrated_xx(lattice, self.j, h, self.bond_signs.as_deref()),
        }
    }

    /// Identity-plus-noise starting state drawn from the run seed.
    pub fn initial_state(&self) -> Result<StringBondState> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.optimizer.seed);
        StringBondState::random(self.lattice.clone(), self.pattern.clone(), self.bond_dim, self.mode, self.init_noise, &mut rng)
    }

    pub fn sampler(&self, samples: usize, seed: u64) -> SamplerConfig {
        SamplerConfig {
            samples,
            burn_in: self.optimizer.burn_in,
            thinning: self.optimizer.thinning,
            chains: self.optimizer.chains,
            seed,
            execution: self.optimizer.execution,
        }
    }

    pub fn header(&self, command: &str) -> Vec<String> {
        vec![
            format!("sbs {command}; config hash {}", self.hash),
            format!(
                "lattice {}x{} {}; model {}; J = {}",
                self.lattice.lx(),
                self.lattice.ly(),
                self.lattice.boundary(),
                match self.model {
                    ModelKind::Tfi => "tfi",
                    ModelKind::FrustratedXx => "frustrated_xx",
                },
                self.j
            ),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[lattice]
Lx = 3
Ly = 3
boundary = "periodic"

[model]
name = "tfi"
h = 2.0

[pattern]
strings = ["lines", "loops"]
D = 2
D_cap = 4

[sampler]
M = 2000
M_cap = 10000
seed = 7
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::parse(MINIMAL, Path::new(".")).unwrap();
        assert_eq!(c.lattice.n_sites(), 9);
        assert_eq!(c.fields, vec![2.0]);
        assert_eq!(c.pattern.len(), 6 + 9);
        assert_eq!(c.optimizer.seed, 7);
        assert_eq!(c.optimizer.bond_dim_cap, 4);
        assert_eq!(c.measure_samples, 10000);
        assert_eq!(c.hash.len(), 16);
        assert_eq!(c.optimizer.eta_growth, 1.0);
        assert_eq!(c.optimizer.eta_max, 8.0 * c.optimizer.eta0);
    }

    #[test]
    fn step_growth_keys() {
        let text = format!("{MINIMAL}\n[optimizer]\neta = 0.2\neta_growth = 1.25\neta_max = 0.5\n");
        let c = RunConfig::parse(&text, Path::new(".")).unwrap();
        assert_eq!((c.optimizer.eta0, c.optimizer.eta_growth, c.optimizer.eta_max), (0.2, 1.25, 0.5));
        assert!(RunConfig::parse(&text.replace("eta_max = 0.5", "eta_max = 0.1"), Path::new(".")).is_err());
    }

    #[test]
    fn missing_seed_names_the_key() {
        let text = MINIMAL.replace("seed = 7", "");
        let err = RunConfig::parse(&text, Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn unknown_keys_and_values_are_rejected() {
        assert!(RunConfig::parse(&MINIMAL.replace("D = 2", "D = 2\nbond = 3"), Path::new(".")).is_err());
        assert!(RunConfig::parse(&MINIMAL.replace("\"tfi\"", "\"heisenberg\""), Path::new(".")).is_err());
        assert!(RunConfig::parse(&MINIMAL.replace("h = 2.0", "h_range = [1.0, 3.0, 2.0]"), Path::new(".")).is_err());
    }

    #[test]
    fn hash_tracks_the_text() {
        let a = RunConfig::parse(MINIMAL, Path::new(".")).unwrap();
        let b = RunConfig::parse(&MINIMAL.replace("seed = 7", "seed = 8"), Path::new(".")).unwrap();
        assert_ne!(a.hash, b.hash);
    }
}
