//! The string-bond wavefunction: one tensor of `d` matrices per (string,
//! position) slot, amplitude = product over strings of matrix-product traces.

use crate::error::{invalid, Result, SbsError};
use crate::lattice::Lattice;
use crate::mat::{matmul_into, trace, LogValue, Mat, MatRef, C64, ONE, ZERO};
use crate::pattern::{StringPattern, Topology};
use rand::Rng;
use rand_distr::StandardNormal;

/// Whether parameters range over complex numbers or are pinned real.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamMode {
    Complex,
    Real,
}

impl ParamMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParamMode::Complex => "complex",
            ParamMode::Real => "real",
        }
    }
}

/// A site tensor: position `position` of string `string`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slot {
    pub string: usize,
    pub position: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotLayout {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl SlotLayout {
    pub fn matrix_len(&self) -> usize {
        self.rows * self.cols
    }
}

/// Initial matrices are `identity + init_noise * gaussian`.
pub const DEFAULT_INIT_NOISE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct StringBondState {
    lattice: Lattice,
    pattern: StringPattern,
    bond_dim: usize,
    mode: ParamMode,
    layout: Vec<Vec<SlotLayout>>,
    params: Vec<C64>,
}

fn slot_shape(topology: Topology, len: usize, pos: usize, d: usize) -> (usize, usize) {
    match topology {
        Topology::Closed => (d, d),
        Topology::Open => {
            let rows = if pos == 0 { 1 } else { d };
            let cols = if pos + 1 == len { 1 } else { d };
            (rows, cols)
        }
    }
}

impl StringBondState {
    /// All-zero parameters with the right shapes.
    pub fn zeros(lattice: Lattice, pattern: StringPattern, bond_dim: usize, mode: ParamMode) -> Result<Self> {
        if bond_dim == 0 {
            return Err(invalid("bond dimension must be positive"));
        }
        if pattern.n_sites() != lattice.n_sites() {
            return Err(invalid(format!(
                "pattern covers {} sites but lattice has {}",
                pattern.n_sites(),
                lattice.n_sites()
            )));
        }
        let d = lattice.local_dim();
        let mut offset = 0;
        let mut layout = Vec::with_capacity(pattern.len());
        for s in pattern.strings() {
            let mut row = Vec::with_capacity(s.len());
            for pos in 0..s.len() {
                let (rows, cols) = slot_shape(s.topology, s.len(), pos, bond_dim);
                row.push(SlotLayout { offset, rows, cols });
                offset += d * rows * cols;
            }
            layout.push(row);
        }
        Ok(StringBondState { lattice, pattern, bond_dim, mode, layout, params: vec![ZERO; offset] })
    }

    /// Near-uniform start: each matrix is the (rectangular) identity plus
    /// `noise` times a Gaussian, complex or real according to `mode`.
    pub fn random<R: Rng + ?Sized>(
        lattice: Lattice,
        pattern: StringPattern,
        bond_dim: usize,
        mode: ParamMode,
        noise: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut st = Self::zeros(lattice, pattern, bond_dim, mode)?;
        let d = st.local_dim();
        for slot in st.slots().collect::<Vec<_>>() {
            let lay = st.layout(slot);
            for k in 0..d {
                for i in 0..lay.rows {
                    for j in 0..lay.cols {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = match mode {
                            ParamMode::Complex => rng.sample(StandardNormal),
                            ParamMode::Real => 0.0,
                        };
                        let base = if i == j { 1.0 } else { 0.0 };
                        let idx = st.param_index(slot, k, i, j);
                        st.params[idx] = C64::new(base + noise * re, noise * im);
                    }
                }
            }
        }
        Ok(st)
    }

    /// Builds a state whose matrix at (slot, level) is produced by `f`.
    pub fn from_fn(
        lattice: Lattice,
        pattern: StringPattern,
        bond_dim: usize,
        mode: ParamMode,
        mut f: impl FnMut(Slot, usize, usize, usize) -> Mat,
    ) -> Result<Self> {
        let mut st = Self::zeros(lattice, pattern, bond_dim, mode)?;
        for slot in st.slots().collect::<Vec<_>>() {
            let lay = st.layout(slot);
            for k in 0..st.local_dim() {
                let m = f(slot, k, lay.rows, lay.cols);
                if (m.rows, m.cols) != (lay.rows, lay.cols) {
                    return Err(invalid(format!(
                        "matrix for {slot:?} level {k} has shape {}x{}, expected {}x{}",
                        m.rows, m.cols, lay.rows, lay.cols
                    )));
                }
                let off = lay.offset + k * lay.matrix_len();
                st.params[off..off + lay.matrix_len()].copy_from_slice(&m.data);
            }
        }
        Ok(st)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    pub fn pattern(&self) -> &StringPattern {
        &self.pattern
    }
    pub fn bond_dim(&self) -> usize {
        self.bond_dim
    }
    pub fn mode(&self) -> ParamMode {
        self.mode
    }
    pub fn local_dim(&self) -> usize {
        self.lattice.local_dim()
    }
    pub fn n_sites(&self) -> usize {
        self.lattice.n_sites()
    }
    pub fn n_strings(&self) -> usize {
        self.pattern.len()
    }
    pub fn string_len(&self, s: usize) -> usize {
        self.layout[s].len()
    }
    pub fn topology(&self, s: usize) -> Topology {
        self.pattern.strings()[s].topology
    }
    pub fn string_sites(&self, s: usize) -> &[usize] {
        &self.pattern.strings()[s].sites
    }

    pub fn layout(&self, slot: Slot) -> SlotLayout {
        self.layout[slot.string][slot.position]
    }

    pub fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        self.layout
            .iter()
            .enumerate()
            .flat_map(|(s, row)| (0..row.len()).map(move |p| Slot { string: s, position: p }))
    }

    /// Lattice site carried by a slot.
    pub fn slot_site(&self, slot: Slot) -> usize {
        self.pattern.strings()[slot.string].sites[slot.position]
    }

    /// Number of complex parameters.
    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[C64] {
        &self.params
    }

    /// Mutable parameters. In real mode callers must keep imaginary parts zero.
    pub fn params_mut(&mut self) -> &mut [C64] {
        &mut self.params
    }

    /// Flat index of entry `(row, col)` of the level-`level` matrix of `slot`.
    pub fn param_index(&self, slot: Slot, level: usize, row: usize, col: usize) -> usize {
        let lay = self.layout(slot);
        lay.offset + level * lay.matrix_len() + row * lay.cols + col
    }

    /// Inverse of [`param_index`](Self::param_index).
    pub fn param_location(&self, index: usize) -> (Slot, usize, usize, usize) {
        let s = self.layout.partition_point(|row| row[0].offset <= index) - 1;
        let p = self.layout[s].partition_point(|l| l.offset <= index) - 1;
        let lay = self.layout[s][p];
        let local = index - lay.offset;
        let level = local / lay.matrix_len();
        let within = local % lay.matrix_len();
        (Slot { string: s, position: p }, level, within / lay.cols, within % lay.cols)
    }

    /// The `d * rows * cols` entries of one slot, level-major.
    pub fn tensor(&self, slot: Slot) -> &[C64] {
        let lay = self.layout(slot);
        &self.params[lay.offset..lay.offset + self.local_dim() * lay.matrix_len()]
    }

    pub fn tensor_mut(&mut self, slot: Slot) -> &mut [C64] {
        let lay = self.layout(slot);
        let n = self.local_dim() * lay.matrix_len();
        &mut self.params[lay.offset..lay.offset + n]
    }

    pub fn matrix(&self, slot: Slot, level: usize) -> MatRef<'_> {
        let lay = self.layout(slot);
        let off = lay.offset + level * lay.matrix_len();
        MatRef { rows: lay.rows, cols: lay.cols, data: &self.params[off..off + lay.matrix_len()] }
    }

    /// Number of real coordinates: two per entry in complex mode, one in real mode.
    pub fn n_real_params(&self) -> usize {
        match self.mode {
            ParamMode::Complex => 2 * self.params.len(),
            ParamMode::Real => self.params.len(),
        }
    }

    /// Real coordinate vector, real and imaginary parts interleaved in
    /// complex mode.
    pub fn to_real_vec(&self) -> Vec<f64> {
        match self.mode {
            ParamMode::Complex => self.params.iter().flat_map(|z| [z.re, z.im]).collect(),
            ParamMode::Real => self.params.iter().map(|z| z.re).collect(),
        }
    }

    pub fn set_real_vec(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_real_params() {
            return Err(invalid(format!("expected {} coordinates, got {}", self.n_real_params(), v.len())));
        }
        match self.mode {
            ParamMode::Complex => {
                for (z, c) in self.params.iter_mut().zip(v.chunks_exact(2)) {
                    *z = C64::new(c[0], c[1]);
                }
            }
            ParamMode::Real => {
                for (z, &x) in self.params.iter_mut().zip(v) {
                    *z = C64::new(x, 0.0);
                }
            }
        }
        Ok(())
    }

    /// Maps a real coordinate to (complex parameter index, is-imaginary-part).
    pub fn real_coordinate(&self, k: usize) -> (usize, bool) {
        match self.mode {
            ParamMode::Complex => (k / 2, k % 2 == 1),
            ParamMode::Real => (k, false),
        }
    }

    pub fn validate_config(&self, config: &[u8]) -> Result<()> {
        if config.len() != self.n_sites() {
            return Err(invalid(format!("configuration length {} != N = {}", config.len(), self.n_sites())));
        }
        if let Some(i) = config.iter().position(|&k| k as usize >= self.local_dim()) {
            return Err(invalid(format!("site {i} has level {} >= d", config[i])));
        }
        Ok(())
    }

    /// Value of one string's factor for a configuration, from scratch.
    pub fn string_value(&self, s: usize, config: &[u8]) -> C64 {
        let sites = self.string_sites(s);
        let mut acc = self.matrix(Slot { string: s, position: 0 }, config[sites[0]] as usize).to_owned();
        let mut tmp = Mat::zeros(0, 0);
        for (p, &x) in sites.iter().enumerate().skip(1) {
            matmul_into(acc.view(), self.matrix(Slot { string: s, position: p }, config[x] as usize), &mut tmp);
            std::mem::swap(&mut acc, &mut tmp);
        }
        trace(acc.view())
    }

    /// `<n|psi>` in log form, from scratch.
    pub fn amplitude(&self, config: &[u8]) -> LogValue {
        let mut total = LogValue::ONE;
        for s in 0..self.n_strings() {
            total = total.mul(LogValue::from_complex(self.string_value(s, config)));
            if total.is_zero() {
                break;
            }
        }
        total
    }

    /// Fails if both the all-zero and a random configuration have zero amplitude.
    pub fn check_nonvanishing<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<()> {
        let zeros = vec![0u8; self.n_sites()];
        if !self.amplitude(&zeros).is_zero() {
            return Ok(());
        }
        let d = self.local_dim();
        let rand_cfg: Vec<u8> = (0..self.n_sites()).map(|_| rng.random_range(0..d) as u8).collect();
        if !self.amplitude(&rand_cfg).is_zero() {
            return Ok(());
        }
        Err(SbsError::ZeroAmplitude)
    }

    /// Multiplies every slot tensor by a positive scalar so that its mean
    /// squared Frobenius norm per level equals `min(rows, cols)`, the value for
    /// an identity block. Returns, per string, the log of the factor by which
    /// that string's value was multiplied. Ratios, local energies and all
    /// normalized expectations are unchanged.
    pub fn rescale_strings(&mut self) -> Vec<f64> {
        let d = self.local_dim() as f64;
        let mut logs = vec![0.0; self.n_strings()];
        for slot in self.slots().collect::<Vec<_>>() {
            let lay = self.layout(slot);
            let target = lay.rows.min(lay.cols) as f64;
            let t = self.tensor_mut(slot);
            let norm2: f64 = t.iter().map(|z| z.norm_sqr()).sum::<f64>() / d;
            if norm2 > 0.0 && norm2.is_finite() {
                let c = (target / norm2).sqrt();
                for z in t.iter_mut() {
                    *z *= c;
                }
                logs[slot.string] += c.ln();
            }
        }
        logs
    }

    /// Embeds every matrix in the top-left block of a larger one; the padding
    /// is `noise` times a Gaussian (complex or real per mode).
    pub fn grow_bond_dimension<R: Rng + ?Sized>(&self, new_dim: usize, noise: f64, rng: &mut R) -> Result<Self> {
        if new_dim <= self.bond_dim {
            return Err(invalid(format!("new bond dimension {new_dim} must exceed {}", self.bond_dim)));
        }
        let mode = self.mode;
        let draw = |rng: &mut R| -> C64 {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = if mode == ParamMode::Complex { rng.sample(StandardNormal) } else { 0.0 };
            C64::new(noise * re, noise * im)
        };
        let mut grown = Self::zeros(self.lattice.clone(), self.pattern.clone(), new_dim, mode)?;
        for slot in self.slots().collect::<Vec<_>>() {
            let old = self.layout(slot);
            let new = grown.layout(slot);
            for k in 0..self.local_dim() {
                for i in 0..new.rows {
                    for j in 0..new.cols {
                        let v = if i < old.rows && j < old.cols {
                            self.params[self.param_index(slot, k, i, j)]
                        } else {
                            draw(rng)
                        };
                        let idx = grown.param_index(slot, k, i, j);
                        grown.params[idx] = v;
                    }
                }
            }
        }
        Ok(grown)
    }

    /// Plaquette loops with `M_0 = 1` and `M_1 = X` (D = 2): the amplitude is
    /// `2^(#plaquettes)` when every plaquette has even parity and 0 otherwise.
    pub fn parity_state(lattice: Lattice) -> Result<Self> {
        let pattern = crate::pattern::loops_pattern(&lattice)?;
        Self::from_fn(lattice, pattern, 2, ParamMode::Real, |_, k, _, _| {
            if k == 0 {
                Mat::identity(2)
            } else {
                Mat { rows: 2, cols: 2, data: vec![ZERO, ONE, ONE, ZERO] }
            }
        })
    }

    /// Sets every matrix of every slot to the same value for all levels,
    /// a convenience for tests and diagnostics.
    pub fn uniform_identity(lattice: Lattice, pattern: StringPattern, bond_dim: usize) -> Result<Self> {
        Self::from_fn(lattice, pattern, bond_dim, ParamMode::Real, |_, _, r, c| {
            let mut m = Mat::zeros(r, c);
            for i in 0..r.min(c) {
                m.data[i * c + i] = ONE;
            }
            m
        })
    }
}
