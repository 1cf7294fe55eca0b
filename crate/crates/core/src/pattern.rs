//! String layouts: which ordered site subsets carry a matrix-product factor.

use crate::error::{Result, SbsError};
use crate::lattice::{Boundary, Lattice};
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Topology {
    /// Trace of a product of square matrices.
    Closed,
    /// Boundary row vector, square bulk matrices, boundary column vector.
    Open,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SiteString {
    pub sites: Vec<usize>,
    pub topology: Topology,
}

impl SiteString {
    pub fn closed(sites: Vec<usize>) -> Self {
        SiteString { sites, topology: Topology::Closed }
    }
    pub fn open(sites: Vec<usize>) -> Self {
        SiteString { sites, topology: Topology::Open }
    }
    pub fn len(&self) -> usize {
        self.sites.len()
    }
    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

/// A validated set of strings together with its per-site incidence index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StringPattern {
    n_sites: usize,
    strings: Vec<SiteString>,
    /// site -> [(string id, position within string)]
    incidence: Vec<Vec<(usize, usize)>>,
}

impl StringPattern {
    pub fn new(n_sites: usize, strings: Vec<SiteString>) -> Result<Self> {
        let mut incidence = vec![Vec::new(); n_sites];
        for (si, s) in strings.iter().enumerate() {
            if s.is_empty() {
                return Err(SbsError::Pattern(format!("string {si} is empty")));
            }
            for (pos, &site) in s.sites.iter().enumerate() {
                if site >= n_sites {
                    return Err(SbsError::Pattern(format!(
                        "string {si}: site {site} out of range (N = {n_sites})"
                    )));
                }
                if s.sites[..pos].contains(&site) {
                    return Err(SbsError::Pattern(format!("string {si}: site {site} repeated")));
                }
                incidence[site].push((si, pos));
            }
        }
        if let Some(site) = incidence.iter().position(|v| v.is_empty()) {
            return Err(SbsError::Pattern(format!("site {site} is not covered by any string")));
        }
        Ok(StringPattern { n_sites, strings, incidence })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }
    pub fn strings(&self) -> &[SiteString] {
        &self.strings
    }
    pub fn len(&self) -> usize {
        self.strings.len()
    }
    pub fn is_empty(&self) -> bool {
        self.strings.is_empty()
    }
    pub fn incidence(&self, site: usize) -> &[(usize, usize)] {
        &self.incidence[site]
    }

    /// Union of several layouts over the same sites, strings kept in order.
    pub fn combine(parts: &[StringPattern]) -> Result<Self> {
        let n = parts.first().map(|p| p.n_sites).ok_or_else(|| SbsError::Pattern("no patterns to combine".into()))?;
        if parts.iter().any(|p| p.n_sites != n) {
            return Err(SbsError::Pattern("combined patterns disagree on site count".into()));
        }
        StringPattern::new(n, parts.iter().flat_map(|p| p.strings.iter().cloned()).collect())
    }

    /// Descriptor text accepted by [`load_pattern`].
    pub fn to_descriptor(&self) -> String {
        let mut out = String::new();
        for s in &self.strings {
            let tag = match s.topology {
                Topology::Closed => "closed",
                Topology::Open => "open",
            };
            let _ = write!(out, "{tag}:");
            for site in &s.sites {
                let _ = write!(out, " {site}");
            }
            out.push('\n');
        }
        out
    }
}

/// One string per row and per column; closed on periodic lattices.
/// Lines of length one are skipped unless the lattice is a single site.
pub fn lines_pattern(lattice: &Lattice) -> StringPattern {
    let (lx, ly) = (lattice.lx(), lattice.ly());
    let topo = match lattice.boundary() {
        Boundary::Periodic => Topology::Closed,
        Boundary::Open => Topology::Open,
    };
    let mut strings = Vec::new();
    if lx >= 2 {
        for y in 0..ly {
            strings.push(SiteString { sites: (0..lx).map(|x| lattice.site(x, y)).collect(), topology: topo });
        }
    }
    if ly >= 2 {
        for x in 0..lx {
            strings.push(SiteString { sites: (0..ly).map(|y| lattice.site(x, y)).collect(), topology: topo });
        }
    }
    if strings.is_empty() {
        strings.push(SiteString::closed(vec![0]));
    }
    StringPattern::new(lattice.n_sites(), strings).expect("lines cover every site")
}

/// One closed four-site loop per plaquette. Sites outside every plaquette
/// (only possible on degenerate lattices) make the pattern invalid on its own;
/// combine it with lines in that case.
pub fn loops_pattern(lattice: &Lattice) -> Result<StringPattern> {
    let strings = lattice.plaquettes().iter().map(|p| SiteString::closed(p.to_vec())).collect();
    StringPattern::new(lattice.n_sites(), strings)
}

/// A single open boustrophedon string through every site.
pub fn snake_pattern(lattice: &Lattice) -> StringPattern {
    let mut sites = Vec::with_capacity(lattice.n_sites());
    for y in 0..lattice.ly() {
        if y % 2 == 0 {
            sites.extend((0..lattice.lx()).map(|x| lattice.site(x, y)));
        } else {
            sites.extend((0..lattice.lx()).rev().map(|x| lattice.site(x, y)));
        }
    }
    StringPattern::new(lattice.n_sites(), vec![SiteString::open(sites)]).expect("snake covers every site")
}

/// One closed string of length one per site.
pub fn single_site_pattern(lattice: &Lattice) -> StringPattern {
    let strings = (0..lattice.n_sites()).map(|s| SiteString::closed(vec![s])).collect();
    StringPattern::new(lattice.n_sites(), strings).expect("one string per site")
}

/// Parses a descriptor: one string per line, `closed: i0 i1 ...` or
/// `open: i0 i1 ...`; blank lines and lines starting with `#` are skipped.
pub fn load_pattern(descriptor: &str, n_sites: usize) -> Result<StringPattern> {
    let mut strings = Vec::new();
    for (lineno, raw) in descriptor.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (tag, rest) = line.split_once(':').ok_or_else(|| SbsError::Parse {
            line: lineno + 1,
            msg: "expected `closed:` or `open:` prefix".into(),
        })?;
        let topology = match tag.trim() {
            "closed" => Topology::Closed,
            "open" => Topology::Open,
            other => {
                return Err(SbsError::Parse { line: lineno + 1, msg: format!("unknown topology `{other}`") })
            }
        };
        let sites = rest
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| SbsError::Parse { line: lineno + 1, msg: format!("bad site index `{t}`") })
            })
            .collect::<Result<Vec<_>>>()?;
        strings.push(SiteString { sites, topology });
    }
    StringPattern::new(n_sites, strings)
}

/// Builds a pattern from generator names (`lines`, `loops`, `snake`, `single`).
pub fn named_pattern(lattice: &Lattice, names: &[&str]) -> Result<StringPattern> {
    let parts = names
        .iter()
        .map(|n| match n.trim() {
            "lines" => Ok(lines_pattern(lattice)),
            "loops" => loops_pattern(lattice),
            "snake" => Ok(snake_pattern(lattice)),
            "single" | "single_site" => Ok(single_site_pattern(lattice)),
            other => Err(SbsError::Pattern(format!("unknown pattern generator `{other}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    StringPattern::combine(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(lx: usize, ly: usize, bc: Boundary) -> Lattice {
        Lattice::new(lx, ly, bc, 2).unwrap()
    }

    fn rebuilt_incidence(p: &StringPattern) -> Vec<Vec<(usize, usize)>> {
        let mut inc = vec![Vec::new(); p.n_sites()];
        for (si, s) in p.strings().iter().enumerate() {
            for (pos, &x) in s.sites.iter().enumerate() {
                inc[x].push((si, pos));
            }
        }
        inc
    }

    #[test]
    fn lines_shapes() {
        let p = lines_pattern(&lat(10, 10, Boundary::Periodic));
        assert_eq!(p.len(), 20);
        assert!(p.strings().iter().all(|s| s.len() == 10 && s.topology == Topology::Closed));
        let p = lines_pattern(&lat(8, 8, Boundary::Open));
        assert_eq!(p.len(), 16);
        assert!(p.strings().iter().all(|s| s.len() == 8 && s.topology == Topology::Open));
        let p = lines_pattern(&lat(1, 5, Boundary::Open));
        assert_eq!(p.len(), 1);
        assert_eq!(p.strings()[0].len(), 5);
    }

    #[test]
    fn loops_shapes() {
        let l = lat(3, 3, Boundary::Periodic);
        let p = loops_pattern(&l).unwrap();
        assert_eq!(p.len(), 9);
        assert!(p.strings().iter().all(|s| s.len() == 4 && s.topology == Topology::Closed));
        let both = named_pattern(&lat(10, 10, Boundary::Periodic), &["lines", "loops"]).unwrap();
        assert_eq!(both.len(), 120);
        let p = loops_pattern(&lat(2, 2, Boundary::Open)).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn snake_order() {
        let p = snake_pattern(&lat(2, 2, Boundary::Open));
        assert_eq!(p.strings()[0].sites, vec![0, 1, 3, 2]);
        let p = snake_pattern(&lat(3, 3, Boundary::Open));
        assert_eq!(p.strings()[0].len(), 9);
        assert!((0..9).all(|x| p.incidence(x).len() == 1));
    }

    #[test]
    fn single_site_shapes() {
        let p = single_site_pattern(&lat(2, 2, Boundary::Open));
        assert_eq!(p.len(), 4);
        assert!((0..4).all(|x| p.incidence(x).len() == 1));
    }

    #[test]
    fn descriptor_errors() {
        let p = load_pattern("open: 0 1\nclosed: 2 3\n", 4).unwrap();
        assert_eq!(p.len(), 2);
        let e = load_pattern("open: 0 1 2\n", 4).unwrap_err().to_string();
        assert!(e.contains("site 3"), "{e}");
        let e = load_pattern("closed: 0 1 0\nopen: 2 3", 4).unwrap_err().to_string();
        assert!(e.contains("site 0 repeated"), "{e}");
        let e = load_pattern("open: 0 1 9\nopen: 2 3", 4).unwrap_err().to_string();
        assert!(e.contains("out of range"), "{e}");
        assert!(load_pattern("# comment\n\nclosed: 0 1 2 3\n", 4).is_ok());
    }

    #[test]
    fn descriptor_round_trip() {
        let p = named_pattern(&lat(3, 3, Boundary::Open), &["lines", "loops"]).unwrap();
        assert_eq!(load_pattern(&p.to_descriptor(), 9).unwrap(), p);
    }

    #[test]
    fn incidence_and_coverage() {
        for (lx, ly) in [(3, 3), (4, 4), (3, 5), (6, 6)] {
            for bc in [Boundary::Open, Boundary::Periodic] {
                let l = lat(lx, ly, bc);
                let lines = lines_pattern(&l);
                assert!((0..l.n_sites()).all(|x| lines.incidence(x).len() == 2));
                let both = named_pattern(&l, &["lines", "loops"]).unwrap();
                assert!((0..l.n_sites()).all(|x| (2..=6).contains(&both.incidence(x).len())));
                for p in [&lines, &both, &snake_pattern(&l), &single_site_pattern(&l)] {
                    assert_eq!(rebuilt_incidence(p), p.incidence);
                }
            }
        }
    }
}
