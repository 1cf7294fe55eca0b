//! Local operators in diagonal-times-flip form and the two benchmark models.
//!
//! A [`LocalTerm`] acts on a few sites. Each [`Branch`] flips the sites in its
//! mask (`k -> d-1-k`) and carries a coefficient that depends on the local
//! configuration of the *row* state: `<n| T |flip(n)> = coeff(n|support)`.
//! The local-configuration index is `sum_k n[support[k]] * d^k`.

use crate::cache::AmplitudeCache;
use crate::error::{invalid, Result, SbsError};
use crate::lattice::{Lattice, Orientation};
use crate::mat::{C64, ZERO};
use crate::state::StringBondState;

pub const MAX_SUPPORT: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub flip_mask: u8,
    pub coeffs: Vec<C64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalTerm {
    pub support: Vec<usize>,
    pub branches: Vec<Branch>,
}

impl LocalTerm {
    pub fn new(support: Vec<usize>, branches: Vec<Branch>, d: usize) -> Result<Self> {
        if support.is_empty() || support.len() > MAX_SUPPORT {
            return Err(invalid(format!("term support must have 1..={MAX_SUPPORT} sites")));
        }
        for (i, s) in support.iter().enumerate() {
            if support[..i].contains(s) {
                return Err(invalid(format!("term support repeats site {s}")));
            }
        }
        let n_local = d.pow(support.len() as u32);
        for b in &branches {
            if b.coeffs.len() != n_local {
                return Err(invalid(format!("branch has {} coefficients, expected {n_local}", b.coeffs.len())));
            }
            if (b.flip_mask as usize) >> support.len() != 0 {
                return Err(invalid("flip mask exceeds support"));
            }
        }
        Ok(LocalTerm { support, branches })
    }

    /// Purely diagonal term.
    pub fn diagonal(support: Vec<usize>, d: usize, f: impl Fn(&[u8]) -> C64) -> Result<Self> {
        let coeffs = local_configs(support.len(), d).map(|c| f(&c)).collect();
        Self::new(support, vec![Branch { flip_mask: 0, coeffs }], d)
    }

    pub fn local_index(&self, config: &[u8], d: usize) -> usize {
        self.support.iter().rev().fold(0, |acc, &s| acc * d + config[s] as usize)
    }

    /// Row-`config` matrix elements: `(flipped config changes, coefficient)`.
    pub fn connected<'a>(&'a self, config: &'a [u8], d: usize) -> impl Iterator<Item = (Vec<(usize, u8)>, C64)> + 'a {
        let li = self.local_index(config, d);
        self.branches.iter().filter(move |b| b.coeffs[li] != ZERO).map(move |b| {
            let changes = self
                .support
                .iter()
                .enumerate()
                .filter(|(k, _)| b.flip_mask >> k & 1 == 1)
                .map(|(_, &s)| (s, (d - 1) as u8 - config[s]))
                .collect();
            (changes, b.coeffs[li])
        })
    }
}

/// All local configurations of `len` sites in index order.
pub fn local_configs(len: usize, d: usize) -> impl Iterator<Item = Vec<u8>> {
    (0..d.pow(len as u32)).map(move |mut idx| {
        (0..len)
            .map(|_| {
                let l = (idx % d) as u8;
                idx /= d;
                l
            })
            .collect()
    })
}

/// A sum of local terms on a fixed site set; used for Hamiltonians and observables.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalOperator {
    n_sites: usize,
    local_dim: usize,
    terms: Vec<LocalTerm>,
    incidence: Vec<Vec<usize>>,
}

pub type LocalHamiltonian = LocalOperator;

impl LocalOperator {
    pub fn new(n_sites: usize, local_dim: usize, terms: Vec<LocalTerm>) -> Result<Self> {
        let mut incidence = vec![Vec::new(); n_sites];
        for (ti, t) in terms.iter().enumerate() {
            for &s in &t.support {
                if s >= n_sites {
                    return Err(invalid(format!("term {ti} touches site {s} outside the lattice")));
                }
                incidence[s].push(ti);
            }
        }
        Ok(LocalOperator { n_sites, local_dim, terms, incidence })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }
    pub fn local_dim(&self) -> usize {
        self.local_dim
    }
    pub fn terms(&self) -> &[LocalTerm] {
        &self.terms
    }
    pub fn terms_at(&self, site: usize) -> &[usize] {
        &self.incidence[site]
    }

    /// `c * Identity`, as one constant diagonal term per site.
    pub fn scaled_identity(n_sites: usize, d: usize, c: f64) -> Result<Self> {
        let per = C64::new(c / n_sites as f64, 0.0);
        let terms = (0..n_sites).map(|s| LocalTerm::diagonal(vec![s], d, |_| per)).collect::<Result<_>>()?;
        Self::new(n_sites, d, terms)
    }

    /// Multiplies every coefficient by `c`.
    pub fn scaled(mut self, c: f64) -> Self {
        for t in &mut self.terms {
            for b in &mut t.branches {
                for z in &mut b.coeffs {
                    *z *= c;
                }
            }
        }
        self
    }

    /// `<n|O|psi> / <n|psi>` from amplitude ratios out of the cache.
    pub fn local_value(&self, state: &StringBondState, cache: &mut AmplitudeCache) -> Result<C64> {
        if cache.is_zero() {
            return Err(SbsError::ZeroAmplitude);
        }
        let d = self.local_dim;
        let mut total = ZERO;
        let mut changes: Vec<(usize, u8)> = Vec::with_capacity(MAX_SUPPORT);
        for t in &self.terms {
            let li = t.local_index(cache.config(), d);
            for b in &t.branches {
                let c = b.coeffs[li];
                if c == ZERO {
                    continue;
                }
                if b.flip_mask == 0 {
                    total += c;
                    continue;
                }
                changes.clear();
                for (k, &s) in t.support.iter().enumerate() {
                    if b.flip_mask >> k & 1 == 1 {
                        changes.push((s, (d - 1) as u8 - cache.config()[s]));
                    }
                }
                total += c * cache.ratio(state, &changes)?;
            }
        }
        Ok(total)
    }

    /// Checks every term is Hermitian on its own support.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        let d = self.local_dim;
        self.terms.iter().all(|t| {
            let n = t.support.len();
            let dim = d.pow(n as u32);
            let mut m = vec![ZERO; dim * dim];
            for (row, cfg) in local_configs(n, d).enumerate() {
                for b in &t.branches {
                    let col: usize = cfg
                        .iter()
                        .enumerate()
                        .rev()
                        .fold(0, |acc, (k, &l)| acc * d + if b.flip_mask >> k & 1 == 1 { d - 1 - l as usize } else { l as usize });
                    m[row * dim + col] += b.coeffs[row];
                }
            }
            (0..dim).all(|i| (0..dim).all(|j| (m[i * dim + j] - m[j * dim + i].conj()).norm() <= tol))
        })
    }
}

fn z_value(level: u8) -> f64 {
    if level == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `H = -J sum_<ij> Z_i Z_j - h sum_i X_i` in the Z basis (level 0 is `z = +1`).
pub fn build_tfi(lattice: &Lattice, j: f64, h: f64) -> Result<LocalHamiltonian> {
    if lattice.local_dim() != 2 {
        return Err(invalid("transverse-field Ising requires d = 2"));
    }
    let mut terms = Vec::new();
    for b in lattice.bonds() {
        terms.push(LocalTerm::diagonal(vec![b.a, b.b], 2, |c| C64::new(-j * z_value(c[0]) * z_value(c[1]), 0.0))?);
    }
    for s in 0..lattice.n_sites() {
        terms.push(LocalTerm::new(vec![s], vec![Branch { flip_mask: 1, coeffs: vec![C64::new(-h, 0.0); 2] }], 2)?);
    }
    LocalOperator::new(lattice.n_sites(), 2, terms)
}

/// Bond signs with every vertical bond in odd columns negative and all
/// others positive. Every plaquette then holds exactly one negative bond.
pub fn default_frustration(lattice: &Lattice) -> Vec<f64> {
    lattice
        .bonds()
        .iter()
        .map(|b| {
            let (x, _) = lattice.coords(b.a);
            if b.orientation == Orientation::Vertical && x % 2 == 1 {
                -1.0
            } else {
                1.0
            }
        })
        .collect()
}

/// Every plaquette must carry an odd number of negative bonds.
pub fn validate_frustration(lattice: &Lattice, signs: &[f64]) -> Result<()> {
    if signs.len() != lattice.bonds().len() {
        return Err(invalid(format!("{} bond signs given for {} bonds", signs.len(), lattice.bonds().len())));
    }
    for (pi, p) in lattice.plaquettes().iter().enumerate() {
        let negatives = (0..4)
            .filter(|&k| {
                let bi = lattice.bond_index(p[k], p[(k + 1) % 4]).expect("plaquette bond");
                signs[bi] < 0.0
            })
            .count();
        if negatives % 2 == 0 {
            return Err(invalid(format!("plaquette {pi} {p:?} has {negatives} negative bonds; not frustrated")));
        }
    }
    Ok(())
}

/// Reads bond signs as lines `a b sign`; unlisted bonds default to `+1`.
pub fn parse_bond_signs(text: &str, lattice: &Lattice) -> Result<Vec<f64>> {
    let mut signs = vec![1.0; lattice.bonds().len()];
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let perr = |msg: String| SbsError::Parse { line: ln + 1, msg };
        if toks.len() != 3 {
            return Err(perr("expected `site_a site_b sign`".into()));
        }
        let a: usize = toks[0].parse().map_err(|_| perr(format!("bad site `{}`", toks[0])))?;
        let b: usize = toks[1].parse().map_err(|_| perr(format!("bad site `{}`", toks[1])))?;
        let v: f64 = toks[2].parse().map_err(|_| perr(format!("bad sign `{}`", toks[2])))?;
        let bi = lattice.bond_index(a, b).ok_or_else(|| perr(format!("({a}, {b}) is not a bond")))?;
        signs[bi] = v.signum();
    }
    Ok(signs)
}

/// `H = sum_<ij> J_ij (X_i X_j + Y_i Y_j) - h sum_i Z_i` with `J_ij = sign_ij * J`.
/// `signs` defaults to [`default_frustration`] and must frustrate every plaquette.
pub fn build_frustrated_xx(lattice: &Lattice, j: f64, h: f64, signs: Option<&[f64]>) -> Result<LocalHamiltonian> {
    if lattice.local_dim() != 2 {
        return Err(invalid("frustrated XX requires d = 2"));
    }
    let default;
    let signs = match signs {
        Some(s) => s,
        None => {
            default = default_frustration(lattice);
            &default
        }
    };
    validate_frustration(lattice, signs)?;
    let mut terms = Vec::new();
    for (b, &sg) in lattice.bonds().iter().zip(signs) {
        let jij = sg * j;
        // X X + Y Y = 2 (S+S- + S-S+): nonzero only on antiparallel pairs.
        let coeffs = local_configs(2, 2).map(|c| C64::new(if c[0] != c[1] { 2.0 * jij } else { 0.0 }, 0.0)).collect();
        terms.push(LocalTerm::new(vec![b.a, b.b], vec![Branch { flip_mask: 0b11, coeffs }], 2)?);
    }
    for s in 0..lattice.n_sites() {
        terms.push(LocalTerm::diagonal(vec![s], 2, |c| C64::new(-h * z_value(c[0]), 0.0))?);
    }
    LocalOperator::new(lattice.n_sites(), 2, terms)
}

/// A product of Pauli operators, e.g. `("ZZ", [0, 1])` or `("X", [3])`.
/// Letters: `I`, `X`, `Y`, `Z`; the word length must match `sites`.
pub fn observable_term(name: &str, sites: &[usize]) -> Result<LocalTerm> {
    let word: Vec<char> = name.trim().chars().map(|c| c.to_ascii_uppercase()).collect();
    if word.len() != sites.len() {
        return Err(invalid(format!("Pauli word `{name}` has {} letters for {} sites", word.len(), sites.len())));
    }
    if let Some(c) = word.iter().find(|c| !matches!(c, 'I' | 'X' | 'Y' | 'Z')) {
        return Err(invalid(format!("unknown operator `{c}` in `{name}`")));
    }
    let mask = word.iter().enumerate().fold(0u8, |m, (k, &c)| if matches!(c, 'X' | 'Y') { m | 1 << k } else { m });
    let coeffs = local_configs(word.len(), 2)
        .map(|cfg| {
            word.iter().zip(&cfg).fold(C64::new(1.0, 0.0), |acc, (&c, &l)| {
                acc * match c {
                    'Z' => C64::new(z_value(l), 0.0),
                    'Y' if l == 0 => C64::new(0.0, -1.0),
                    'Y' => C64::new(0.0, 1.0),
                    _ => C64::new(1.0, 0.0),
                }
            })
        })
        .collect();
    LocalTerm::new(sites.to_vec(), vec![Branch { flip_mask: mask, coeffs }], 2)
}

/// A named observable: an operator whose expectation is reported.
#[derive(Clone, Debug)]
pub struct Observable {
    pub name: String,
    pub op: LocalOperator,
}

impl Observable {
    /// `m_x = (1/N) sum_i X_i`.
    pub fn mx(lattice: &Lattice) -> Result<Self> {
        Self::site_average(lattice, "mx", "X")
    }

    /// `m_z = (1/N) sum_i Z_i`.
    pub fn mz(lattice: &Lattice) -> Result<Self> {
        Self::site_average(lattice, "mz", "Z")
    }

    fn site_average(lattice: &Lattice, name: &str, letter: &str) -> Result<Self> {
        let n = lattice.n_sites();
        let terms = (0..n).map(|s| observable_term(letter, &[s])).collect::<Result<_>>()?;
        Ok(Observable { name: name.into(), op: LocalOperator::new(n, 2, terms)?.scaled(1.0 / n as f64) })
    }

    /// `m_z^2 = (1/N^2) sum_ij Z_i Z_j`.
    pub fn mz2(lattice: &Lattice) -> Result<Self> {
        let n = lattice.n_sites();
        let mut terms = vec![LocalTerm::diagonal(vec![0], 2, |_| C64::new(n as f64, 0.0))?];
        for i in 0..n {
            for j in i + 1..n {
                terms.push(LocalTerm::diagonal(vec![i, j], 2, |c| C64::new(2.0 * z_value(c[0]) * z_value(c[1]), 0.0))?);
            }
        }
        Ok(Observable { name: "mz2".into(), op: LocalOperator::new(n, 2, terms)?.scaled(1.0 / (n * n) as f64) })
    }

    /// Mean over plaquettes of `Z Z Z Z` around the plaquette.
    pub fn plaquette_parity(lattice: &Lattice) -> Result<Self> {
        let ps = lattice.plaquettes();
        if ps.is_empty() {
            return Err(invalid("lattice has no plaquettes"));
        }
        let terms = ps.iter().map(|p| observable_term("ZZZZ", p)).collect::<Result<_>>()?;
        Ok(Observable {
            name: "plaquette_parity".into(),
            op: LocalOperator::new(lattice.n_sites(), 2, terms)?.scaled(1.0 / ps.len() as f64),
        })
    }

    /// A single Pauli product.
    pub fn pauli(lattice: &Lattice, word: &str, sites: &[usize]) -> Result<Self> {
        let name = format!("{word}@{}", sites.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","));
        Ok(Observable { name, op: LocalOperator::new(lattice.n_sites(), 2, vec![observable_term(word, sites)?])? })
    }

    /// Parses `mx`, `mz`, `mz2`, `plaquette_parity` or `WORD@i,j,...`.
    pub fn parse(lattice: &Lattice, spec: &str) -> Result<Self> {
        match spec.trim() {
            "mx" => Self::mx(lattice),
            "mz" => Self::mz(lattice),
            "mz2" => Self::mz2(lattice),
            "plaquette_parity" => Self::plaquette_parity(lattice),
            other => {
                let (word, sites) = other
                    .split_once('@')
                    .ok_or_else(|| invalid(format!("unknown observable `{other}`")))?;
                let sites = sites
                    .split(',')
                    .map(|t| t.trim().parse::<usize>().map_err(|_| invalid(format!("bad site `{t}` in `{other}`"))))
                    .collect::<Result<Vec<_>>>()?;
                Self::pauli(lattice, word, &sites)
            }
        }
    }
}
