//! Versioned plain-text checkpoints.
//!
//! ```text
//! SBSv1 Lx Ly boundary d D seed
//! mode real|complex
//! progress iter eta M          (optional)
//! pattern <number of strings>
//! closed: 0 1 2
//! ...
//! matrices <number of matrices>
//! <one line per matrix: rows*cols tokens `re+imj`, row-major>
//! ```
//!
//! Matrices are listed in (string, position, level) order. Every number is
//! written with 17 significant digits, so a read/write round trip is exact.

use crate::error::{invalid, Result, SbsError};
use crate::lattice::{Boundary, Lattice};
use crate::mat::C64;
use crate::optimizer::Progress;
use crate::pattern::load_pattern;
use crate::state::{ParamMode, StringBondState};
use std::fmt::Write as _;
use std::path::Path;

pub const CHECKPOINT_VERSION: &str = "SBSv1";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub state: StringBondState,
    pub seed: u64,
    pub progress: Option<Progress>,
}

fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn format_c64(z: C64) -> String {
    let im = format_f64(z.im);
    let sign = if im.starts_with('-') { "" } else { "+" };
    format!("{}{sign}{im}j", format_f64(z.re))
}

fn parse_c64(tok: &str, line: usize) -> Result<C64> {
    let err = || SbsError::Parse { line, msg: format!("bad complex entry `{tok}`") };
    let body = tok.strip_suffix('j').ok_or_else(err)?;
    // The imaginary part starts at the last sign that does not follow an exponent marker.
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'))
        .ok_or_else(err)?;
    let re: f64 = body[..split].parse().map_err(|_| err())?;
    let im: f64 = body[split..].parse().map_err(|_| err())?;
    Ok(C64::new(re, im))
}

pub fn checkpoint_to_string(ck: &Checkpoint) -> String {
    let st = &ck.state;
    let l = st.lattice();
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_VERSION} {} {} {} {} {} {}", l.lx(), l.ly(), l.boundary(), l.local_dim(), st.bond_dim(), ck.seed);
    let _ = writeln!(out, "mode {}", st.mode().as_str());
    if let Some(p) = &ck.progress {
        let _ = writeln!(out, "progress {} {} {}", p.iter, format_f64(p.eta), p.samples);
    }
    let _ = writeln!(out, "pattern {}", st.n_strings());
    out.push_str(&st.pattern().to_descriptor());
    let slots: Vec<_> = st.slots().collect();
    let _ = writeln!(out, "matrices {}", slots.len() * st.local_dim());
    for slot in slots {
        for k in 0..st.local_dim() {
            let m = st.matrix(slot, k);
            let line: Vec<String> = m.data.iter().map(|&z| format_c64(z)).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(ck))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    parse_checkpoint(&std::fs::read_to_string(path)?)
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| lines.next().ok_or_else(|| SbsError::Parse { line: 0, msg: format!("missing {what}") });
    let parse_err = |line: usize, msg: String| SbsError::Parse { line, msg };

    let (ln, header) = next("header")?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.first() != Some(&CHECKPOINT_VERSION) {
        return Err(SbsError::Version(fields.first().unwrap_or(&"<empty>").to_string()));
    }
    if fields.len() != 7 {
        return Err(parse_err(ln, "header needs `SBSv1 Lx Ly boundary d D seed`".into()));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| parse_err(ln, format!("bad number `{s}`")));
    let (lx, ly) = (num(fields[1])?, num(fields[2])?);
    let boundary: Boundary = fields[3].parse()?;
    let d = num(fields[4])?;
    let bond_dim = num(fields[5])?;
    let seed: u64 = fields[6].parse().map_err(|_| parse_err(ln, format!("bad seed `{}`", fields[6])))?;
    let lattice = Lattice::new(lx, ly, boundary, d)?;

    let (ln, mode_line) = next("mode line")?;
    let mode = match mode_line.split_whitespace().collect::<Vec<_>>()[..] {
        ["mode", "real"] => ParamMode::Real,
        ["mode", "complex"] => ParamMode::Complex,
        _ => return Err(parse_err(ln, format!("expected `mode real|complex`, found `{mode_line}`"))),
    };

    let (mut ln, mut line) = next("pattern block")?;
    let mut progress = None;
    if line.starts_with("progress") {
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || parse_err(ln, format!("expected `progress iter eta M`, found `{line}`"));
        if f.len() != 4 {
            return Err(bad());
        }
        progress = Some(Progress {
            iter: f[1].parse().map_err(|_| bad())?,
            eta: f[2].parse().map_err(|_| bad())?,
            samples: f[3].parse().map_err(|_| bad())?,
        });
        (ln, line) = next("pattern block")?;
    }
    let n_strings: usize = line
        .strip_prefix("pattern ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(ln, format!("expected `pattern <count>`, found `{line}`")))?;
    let mut descriptor = String::new();
    for _ in 0..n_strings {
        descriptor.push_str(next("pattern line")?.1);
        descriptor.push('\n');
    }
    let pattern = load_pattern(&descriptor, lattice.n_sites())?;

    let mut state = StringBondState::zeros(lattice, pattern, bond_dim, mode)?;
    let (ln, line) = next("matrices block")?;
    let n_mats: usize = line
        .strip_prefix("matrices ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(ln, format!("expected `matrices <count>`, found `{line}`")))?;
    let slots: Vec<_> = state.slots().collect();
    if n_mats != slots.len() * d {
        return Err(parse_err(ln, format!("expected {} matrices, found count {n_mats}", slots.len() * d)));
    }
    for slot in slots {
        let lay = state.layout(slot);
        for k in 0..d {
            let (ln, line) = next("matrix line")?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != lay.matrix_len() {
                return Err(parse_err(ln, format!("expected {} entries, found {}", lay.matrix_len(), toks.len())));
            }
            for (e, tok) in toks.iter().enumerate() {
                let z = parse_c64(tok, ln)?;
                if mode == ParamMode::Real && z.im != 0.0 {
                    return Err(parse_err(ln, "imaginary entry in a real-mode checkpoint".into()));
                }
                let idx = state.param_index(slot, k, e / lay.cols, e % lay.cols);
                state.params_mut()[idx] = z;
            }
        }
    }
    if let Some((ln, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(invalid(format!("unexpected content at line {ln}: `{extra}`")));
    }
    Ok(Checkpoint { state, seed, progress })
}
