//! Brute-force reference implementations over the full basis. Nothing here
//! touches the amplitude cache or the Monte Carlo machinery, so it can serve
//! as an independent check on both.

use crate::error::{Result, SbsError};
use crate::hamiltonian::LocalOperator;
use crate::mat::{C64, ZERO};
use crate::par::{chunks, map_indexed, Execution};
use crate::state::{Slot, StringBondState};
use crate::pattern::Topology;
use nalgebra::{DMatrix, DVector};

/// Largest basis handled by enumeration and iterative diagonalization.
pub const MAX_ENUMERATION_STATES: u128 = 1 << 20;
/// Largest basis handled by dense diagonalization.
pub const MAX_DENSE_STATES: u128 = 1 << 10;

/// Residual tolerance of the iterative ground-state solver.
pub const LANCZOS_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct DenseState {
    pub amplitudes: Vec<C64>,
    pub norm2: f64,
}

pub fn basis_size(n_sites: usize, d: usize) -> u128 {
    (d as u128).checked_pow(n_sites as u32).unwrap_or(u128::MAX)
}

pub fn check_enumerable(n_sites: usize, d: usize, limit: u128) -> Result<usize> {
    let states = basis_size(n_sites, d);
    if states > limit {
        return Err(SbsError::TooLarge { states, limit });
    }
    Ok(states as usize)
}

/// Configuration of basis index `idx`; site 0 is the most significant digit.
pub fn index_to_config(mut idx: usize, n_sites: usize, d: usize, out: &mut [u8]) {
    for s in (0..n_sites).rev() {
        out[s] = (idx % d) as u8;
        idx /= d;
    }
}

pub fn config_to_index(config: &[u8], d: usize) -> usize {
    config.iter().fold(0, |acc, &l| acc * d + l as usize)
}

/// Naive string contraction: dense products, no caching, no log domain.
fn naive_amplitude(state: &StringBondState, config: &[u8]) -> C64 {
    let mut total = C64::new(1.0, 0.0);
    for s in 0..state.n_strings() {
        let sites = state.string_sites(s);
        let first = state.matrix(Slot { string: s, position: 0 }, config[sites[0]] as usize);
        let mut acc: Vec<C64> = first.data.to_vec();
        let (rows, mut cols) = (first.rows, first.cols);
        for (p, &x) in sites.iter().enumerate().skip(1) {
            let m = state.matrix(Slot { string: s, position: p }, config[x] as usize);
            let mut next = vec![ZERO; rows * m.cols];
            for i in 0..rows {
                for j in 0..m.cols {
                    for k in 0..cols {
                        next[i * m.cols + j] += acc[i * cols + k] * m.data[k * m.cols + j];
                    }
                }
            }
            acc = next;
            cols = m.cols;
        }
        let value = match state.topology(s) {
            Topology::Closed => (0..rows).map(|i| acc[i * cols + i]).sum(),
            Topology::Open => acc[0],
        };
        total *= value;
    }
    total
}

/// Every amplitude in lexicographic order.
pub fn dense_wavefunction(state: &StringBondState) -> Result<DenseState> {
    let (n, d) = (state.n_sites(), state.local_dim());
    let dim = check_enumerable(n, d, MAX_ENUMERATION_STATES)?;
    let ranges = chunks(dim, 64);
    let parts = map_indexed(ranges.len(), Execution::Parallel, |c| {
        let mut cfg = vec![0u8; n];
        ranges[c]
            .clone()
            .map(|i| {
                index_to_config(i, n, d, &mut cfg);
                naive_amplitude(state, &cfg)
            })
            .collect::<Vec<_>>()
    });
    let amplitudes: Vec<C64> = parts.into_iter().flatten().collect();
    let norm2 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
    Ok(DenseState { amplitudes, norm2 })
}

/// `O |psi>` on the full basis, branch by branch.
pub fn apply_operator(op: &LocalOperator, psi: &[C64]) -> Vec<C64> {
    let (n, d) = (op.n_sites(), op.local_dim());
    let ranges = chunks(psi.len(), 64);
    let parts = map_indexed(ranges.len(), Execution::Parallel, |c| {
        let mut cfg = vec![0u8; n];
        let mut other = vec![0u8; n];
        ranges[c]
            .clone()
            .map(|i| {
                index_to_config(i, n, d, &mut cfg);
                let mut acc = ZERO;
                for t in op.terms() {
                    for (changes, coeff) in t.connected(&cfg, d) {
                        other.copy_from_slice(&cfg);
                        for (s, l) in changes {
                            other[s] = l;
                        }
                        acc += coeff * psi[config_to_index(&other, d)];
                    }
                }
                acc
            })
            .collect::<Vec<_>>()
    });
    parts.into_iter().flatten().collect()
}

/// `<psi|O|psi> / <psi|psi>` by dense linear algebra.
pub fn dense_expectation(state: &StringBondState, op: &LocalOperator) -> Result<C64> {
    let psi = dense_wavefunction(state)?;
    if !(psi.norm2 > 0.0) {
        return Err(SbsError::ZeroAmplitude);
    }
    let hpsi = apply_operator(op, &psi.amplitudes);
    let num: C64 = psi.amplitudes.iter().zip(&hpsi).map(|(a, b)| a.conj() * b).sum();
    Ok(num / psi.norm2)
}

/// Full matrix of an operator, for small systems.
pub fn dense_matrix(op: &LocalOperator) -> Result<DMatrix<C64>> {
    let dim = check_enumerable(op.n_sites(), op.local_dim(), MAX_DENSE_STATES)?;
    let mut m = DMatrix::from_element(dim, dim, ZERO);
    let mut e = vec![ZERO; dim];
    for col in 0..dim {
        e.fill(ZERO);
        e[col] = C64::new(1.0, 0.0);
        let v = apply_operator(op, &e);
        for (row, z) in v.into_iter().enumerate() {
            m[(row, col)] = z;
        }
    }
    Ok(m)
}

/// Smallest eigenvalue of a Hermitian operator: dense diagonalization up to
/// [`MAX_DENSE_STATES`], restarted Lanczos with full reorthogonalization up
/// to [`MAX_ENUMERATION_STATES`] (residual at most [`LANCZOS_TOLERANCE`]).
pub fn exact_ground_energy(op: &LocalOperator) -> Result<f64> {
    let states = basis_size(op.n_sites(), op.local_dim());
    if states <= MAX_DENSE_STATES {
        let m = dense_matrix(op)?;
        let eig = m.symmetric_eigen();
        return Ok(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min));
    }
    let dim = check_enumerable(op.n_sites(), op.local_dim(), MAX_ENUMERATION_STATES)?;
    lanczos_ground_energy(|v| apply_operator(op, v), dim, LANCZOS_TOLERANCE)
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Restarted Lanczos for the lowest eigenvalue of a Hermitian map.
pub fn lanczos_ground_energy(apply: impl Fn(&[C64]) -> Vec<C64>, dim: usize, tol: f64) -> Result<f64> {
    // Krylov basis capped at ~256 MiB.
    let budget = (256usize << 20) / (16 * dim.max(1));
    let k_max = dim.min(80).min(budget.max(12));
    // Deterministic start vector with support on every basis state.
    let mut v0: Vec<C64> = (0..dim).map(|i| C64::new(1.0 + 0.37 * ((i * 7919) % 101) as f64 / 101.0, 0.0)).collect();
    let n0 = norm(&v0);
    v0.iter_mut().for_each(|z| *z /= n0);
    let mut last_residual = f64::INFINITY;
    for _restart in 0..200 {
        let mut basis: Vec<Vec<C64>> = vec![v0.clone()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        for j in 0..k_max {
            let mut w = apply(&basis[j]);
            let a = dot(&basis[j], &w).re;
            alpha.push(a);
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(v, &w);
                    w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
                }
            }
            let b = norm(&w);
            if j + 1 == k_max || b < 1e-12 {
                beta.push(b);
                break;
            }
            beta.push(b);
            w.iter_mut().for_each(|z| *z /= b);
            basis.push(w);
        }
        let k = alpha.len();
        let t = DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let eig = t.symmetric_eigen();
        let (imin, theta) = eig
            .eigenvalues
            .iter()
            .cloned()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, e)| if e < acc.1 { (i, e) } else { acc });
        let y = eig.eigenvectors.column(imin);
        let mut x = vec![ZERO; dim];
        for (i, v) in basis.iter().enumerate() {
            x.iter_mut().zip(v).for_each(|(a, b)| *a += b * y[i]);
        }
        let nx = norm(&x);
        x.iter_mut().for_each(|z| *z /= nx);
        let hx = apply(&x);
        let residual = norm(&hx.iter().zip(&x).map(|(a, b)| a - b * theta).collect::<Vec<_>>());
        last_residual = residual;
        if residual <= tol || k == dim {
            return Ok(theta);
        }
        v0 = x;
    }
    Err(SbsError::NotConverged { residual: last_residual })
}

/// Central finite differences of the dense energy over every real coordinate.
pub fn fd_gradient(state: &StringBondState, op: &LocalOperator, eps: f64) -> Result<Vec<f64>> {
    check_enumerable(state.n_sites(), state.local_dim(), MAX_ENUMERATION_STATES)?;
    let base = state.to_real_vec();
    let out = map_indexed(base.len(), Execution::Parallel, |k| -> Result<f64> {
        let mut plus = state.clone();
        let mut minus = state.clone();
        let mut v = base.clone();
        v[k] = base[k] + eps;
        plus.set_real_vec(&v)?;
        v[k] = base[k] - eps;
        minus.set_real_vec(&v)?;
        let ep = dense_expectation(&plus, op)?.re;
        let em = dense_expectation(&minus, op)?.re;
        Ok((ep - em) / (2.0 * eps))
    });
    out.into_iter().collect()
}

/// Dense vector as an nalgebra column, for linear-algebra based checks.
pub fn as_dvector(psi: &DenseState) -> DVector<C64> {
    DVector::from_vec(psi.amplitudes.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{build_frustrated_xx, build_tfi};
    use crate::lattice::{Boundary, Lattice};
    use crate::mat::{Mat, ONE};
    use crate::pattern::{loops_pattern, named_pattern, snake_pattern};
    use crate::state::ParamMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pauli_x() -> Mat {
        Mat { rows: 2, cols: 2, data: vec![ZERO, ONE, ONE, ZERO] }
    }

    #[test]
    fn parity_state_dense_vector() {
        let l = Lattice::new(2, 2, Boundary::Open, 2).unwrap();
        let st = StringBondState::from_fn(l.clone(), loops_pattern(&l).unwrap(), 2, ParamMode::Real, |_, k, _, _| {
            if k == 0 { Mat::identity(2) } else { pauli_x() }
        })
        .unwrap();
        let psi = dense_wavefunction(&st).unwrap();
        let mut cfg = [0u8; 4];
        for (i, a) in psi.amplitudes.iter().enumerate() {
            index_to_config(i, 4, 2, &mut cfg);
            let even = cfg.iter().map(|&x| x as u32).sum::<u32>() % 2 == 0;
            assert_eq!(*a, if even { C64::new(2.0, 0.0) } else { ZERO });
        }
    }

    #[test]
    fn ghz_snake() {
        let l = Lattice::new(3, 2, Boundary::Open, 2).unwrap();
        // Bulk matrices project onto level k; boundary vectors select it.
        let st = StringBondState::from_fn(l.clone(), snake_pattern(&l), 2, ParamMode::Real, |_, k, r, c| {
            let mut m = Mat::zeros(r, c);
            if r == 2 && c == 2 {
                m.data[k * 2 + k] = ONE;
            } else {
                m.data[k] = ONE;
            }
            m
        })
        .unwrap();
        let psi = dense_wavefunction(&st).unwrap();
        for (i, a) in psi.amplitudes.iter().enumerate() {
            let expect = if i == 0 || i == 63 { 1.0 } else { 0.0 };
            assert!((a - C64::new(expect, 0.0)).norm() < 1e-14, "{i}");
        }
        let h = build_tfi(&l, 1.0, 0.0).unwrap();
        assert!((dense_expectation(&st, &h).unwrap().re + l.bonds().len() as f64).abs() < 1e-12);
    }

    #[test]
    fn identity_expectation_and_variational_bound() {
        let l = Lattice::new(3, 2, Boundary::Open, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let st = StringBondState::random(l.clone(), named_pattern(&l, &["lines", "loops"]).unwrap(), 2, ParamMode::Complex, 0.5, &mut rng).unwrap();
        let id = LocalOperator::scaled_identity(6, 2, -3.0).unwrap();
        assert!((dense_expectation(&st, &id).unwrap() + 3.0).norm() < 1e-12);
        for h in [build_tfi(&l, 1.0, 0.7).unwrap(), build_frustrated_xx(&l, 1.0, 0.5, None).unwrap()] {
            let e0 = exact_ground_energy(&h).unwrap();
            assert!(dense_expectation(&st, &h).unwrap().re >= e0 - 1e-10);
        }
    }

    #[test]
    fn dense_matrix_is_hermitian() {
        let l = Lattice::new(3, 2, Boundary::Open, 2).unwrap();
        for h in [build_tfi(&l, 1.0, 0.7).unwrap(), build_frustrated_xx(&l, 1.0, 0.5, None).unwrap()] {
            let m = dense_matrix(&h).unwrap();
            assert!((&m - m.adjoint()).norm() < 1e-12);
        }
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        let l = Lattice::new(3, 3, Boundary::Open, 2).unwrap();
        for h in [build_tfi(&l, 1.0, 1.3).unwrap(), build_frustrated_xx(&l, 1.0, 0.5, None).unwrap()] {
            let dense = exact_ground_energy(&h).unwrap();
            let iter = lanczos_ground_energy(|v| apply_operator(&h, v), 512, 1e-9).unwrap();
            assert!((dense - iter).abs() < 1e-8, "{dense} {iter}");
        }
    }

    #[test]
    fn too_large_is_rejected() {
        let l = Lattice::new(7, 3, Boundary::Open, 2).unwrap();
        let st = StringBondState::uniform_identity(l.clone(), snake_pattern(&l), 1).unwrap();
        assert!(matches!(dense_wavefunction(&st), Err(SbsError::TooLarge { .. })));
    }

    #[test]
    fn fd_step_robustness() {
        let l = Lattice::new(2, 2, Boundary::Open, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let st = StringBondState::random(l.clone(), named_pattern(&l, &["lines"]).unwrap(), 2, ParamMode::Complex, 0.5, &mut rng).unwrap();
        let h = build_tfi(&l, 1.0, 0.9).unwrap();
        let g5 = fd_gradient(&st, &h, 1e-5).unwrap();
        let g7 = fd_gradient(&st, &h, 1e-7).unwrap();
        let scale = g5.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (a, b) in g5.iter().zip(&g7) {
            assert!((a - b).abs() <= 1e-4 * a.abs().max(scale));
        }
        let id = LocalOperator::scaled_identity(4, 2, 1.5).unwrap();
        assert!(fd_gradient(&st, &id, 1e-5).unwrap().iter().all(|g| g.abs() < 1e-9));
    }
}
