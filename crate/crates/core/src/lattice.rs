//! Square lattices: sites, nearest-neighbour bonds and plaquettes.
//!
//! Sites are indexed row-major with site 0 at (0, 0): `site = y * lx + x`.

use crate::error::{invalid, Result};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Boundary {
    Open,
    Periodic,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Boundary::Open => write!(f, "open"),
            Boundary::Periodic => write!(f, "periodic"),
        }
    }
}

impl FromStr for Boundary {
    type Err = crate::SbsError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "open" | "obc" => Ok(Boundary::Open),
            "periodic" | "pbc" => Ok(Boundary::Periodic),
            other => Err(invalid(format!("unknown boundary `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub orientation: Orientation,
    /// Indices into [`Lattice::plaquettes`] of every plaquette containing this bond.
    pub plaquettes: Vec<usize>,
}

/// Four sites in cyclic order: site, right, right-down, down.
pub type Plaquette = [usize; 4];

#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    lx: usize,
    ly: usize,
    boundary: Boundary,
    local_dim: usize,
    bonds: Vec<Bond>,
    plaquettes: Vec<Plaquette>,
}

impl Lattice {
    /// Builds an `lx` x `ly` square lattice.
    ///
    /// A periodic extent of 2 would produce the same bond twice and is rejected.
    /// A periodic extent of 1 contributes no bonds in that direction, which
    /// makes `1 x L` periodic lattices rings.
    pub fn new(lx: usize, ly: usize, boundary: Boundary, local_dim: usize) -> Result<Self> {
        if lx == 0 || ly == 0 {
            return Err(invalid("lattice extents must be positive"));
        }
        if local_dim < 2 {
            return Err(invalid("local dimension must be at least 2"));
        }
        if boundary == Boundary::Periodic && (lx == 2 || ly == 2) {
            return Err(invalid(format!(
                "periodic lattice {lx}x{ly} rejected: each periodic extent must be 1 or at least 3"
            )));
        }
        let mut lat = Lattice { lx, ly, boundary, local_dim, bonds: Vec::new(), plaquettes: Vec::new() };
        lat.build_plaquettes();
        lat.build_bonds();
        Ok(lat)
    }

    pub fn lx(&self) -> usize {
        self.lx
    }
    pub fn ly(&self) -> usize {
        self.ly
    }
    pub fn boundary(&self) -> Boundary {
        self.boundary
    }
    pub fn local_dim(&self) -> usize {
        self.local_dim
    }
    pub fn n_sites(&self) -> usize {
        self.lx * self.ly
    }
    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }
    pub fn plaquettes(&self) -> &[Plaquette] {
        &self.plaquettes
    }

    pub fn site(&self, x: usize, y: usize) -> usize {
        y * self.lx + x
    }

    pub fn coords(&self, site: usize) -> (usize, usize) {
        (site % self.lx, site / self.lx)
    }

    pub fn right(&self, site: usize) -> Option<usize> {
        let (x, y) = self.coords(site);
        neighbor(x, self.lx, self.boundary).map(|nx| self.site(nx, y))
    }

    pub fn down(&self, site: usize) -> Option<usize> {
        let (x, y) = self.coords(site);
        neighbor(y, self.ly, self.boundary).map(|ny| self.site(x, ny))
    }

    /// Index of the bond joining `a` and `b`, in either order.
    pub fn bond_index(&self, a: usize, b: usize) -> Option<usize> {
        self.bonds.iter().position(|bd| (bd.a == a && bd.b == b) || (bd.a == b && bd.b == a))
    }

    fn build_plaquettes(&mut self) {
        for s in 0..self.n_sites() {
            if let (Some(r), Some(d)) = (self.right(s), self.down(s)) {
                let rd = self.down(r).expect("down neighbour of right neighbour");
                self.plaquettes.push([s, r, rd, d]);
            }
        }
    }

    fn build_bonds(&mut self) {
        for s in 0..self.n_sites() {
            if let Some(r) = self.right(s) {
                self.bonds.push(Bond { a: s, b: r, orientation: Orientation::Horizontal, plaquettes: vec![] });
            }
            if let Some(d) = self.down(s) {
                self.bonds.push(Bond { a: s, b: d, orientation: Orientation::Vertical, plaquettes: vec![] });
            }
        }
        for (pi, p) in self.plaquettes.clone().iter().enumerate() {
            for k in 0..4 {
                let (a, b) = (p[k], p[(k + 1) % 4]);
                let bi = self.bond_index(a, b).expect("plaquette edge is a bond");
                self.bonds[bi].plaquettes.push(pi);
            }
        }
    }
}

fn neighbor(c: usize, extent: usize, boundary: Boundary) -> Option<usize> {
    if c + 1 < extent {
        Some(c + 1)
    } else if boundary == Boundary::Periodic && extent >= 3 {
        Some(0)
    } else {
        None
    }
}
