//! Smallest eigenvalues of a sparse symmetric positive semi-definite matrix.
//!
//! Small systems use a dense symmetric eigensolver. Larger ones use
//! shift-invert block subspace iteration with Rayleigh-Ritz extraction, which
//! resolves repeated eigenvalues without special handling.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::spectral::sparse::{CsrMatrix, EnvelopeCholesky};

/// Systems up to this size are solved densely.
pub const DENSE_MAX: usize = 400;
/// Residual tolerance relative to the largest wanted eigenvalue.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Shift for the factorization, relative to the largest diagonal entry.
pub const SHIFT_SCALE: f64 = -1e-8;
pub const MAX_ITERATIONS: usize = 2000;

/// `k` algebraically smallest eigenvalues of the symmetric matrix `a`,
/// ascending. Values within round-off of zero are clamped to zero.
pub fn smallest_eigenvalues(a: &CsrMatrix, k: usize) -> Result<Vec<f64>> {
    let n = a.dim();
    if k == 0 {
        return Ok(Vec::new());
    }
    if n < k {
        return Err(CoreError::InvalidArgument(format!("system of size {n} has fewer than {k} eigenvalues")));
    }
    let block = (2 * k).max(k + 10);
    let mut values = if n <= DENSE_MAX || 3 * block >= n { dense(a, k) } else { subspace(a, k, block)? };
    let scale = values.last().map_or(0.0, |v: &f64| v.abs()).max(f64::MIN_POSITIVE);
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-10 * scale.max(1.0) {
                log::warn!("clamping eigenvalue {v:e} to zero");
            }
            *v = 0.0;
        }
    }
    Ok(values)
}

fn dense(a: &CsrMatrix, k: usize) -> Vec<f64> {
    let mut m = a.to_dense();
    let t = m.transpose();
    m += t;
    m *= 0.5;
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev.truncate(k);
    ev
}

fn matmul_sparse(a: &CsrMatrix, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for j in 0..x.ncols() {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        let mut y = vec![0.0; x.nrows()];
        a.matvec(&col, &mut y);
        out.column_mut(j).copy_from_slice(&y);
    }
    out
}

fn subspace(a: &CsrMatrix, k: usize, block: usize) -> Result<Vec<f64>> {
    let n = a.dim();
    let max_diag = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let shift = SHIFT_SCALE * max_diag;
    let chol = EnvelopeCholesky::factor(a, -shift)?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut x = DMatrix::from_fn(n, block, |_, _| rng.random::<f64>() - 0.5);
    let mut work = Vec::with_capacity(n);
    let mut worst = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        for j in 0..block {
            let mut col: Vec<f64> = x.column(j).iter().copied().collect();
            chol.solve_in_place(&mut col, &mut work);
            x.column_mut(j).copy_from_slice(&col);
        }
        let q = x.clone().qr().q();
        let aq = matmul_sparse(a, &q);
        let mut h = q.transpose() * &aq;
        let ht = h.transpose();
        h += ht;
        h *= 0.5;
        let eig = SymmetricEigen::new(h);
        let mut idx: Vec<usize> = (0..block).collect();
        idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let w = DMatrix::from_fn(block, block, |r, c| eig.eigenvectors[(r, idx[c])]);
        let theta: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
        x = &q * &w;
        let ax = &aq * &w;
        let tol = RESIDUAL_TOL * theta[k - 1].abs().max(f64::MIN_POSITIVE);
        worst = (0..k)
            .map(|i| (ax.column(i) - x.column(i) * theta[i]).norm())
            .fold(0.0, f64::max);
        if worst <= tol {
            return Ok(theta[..k].to_vec());
        }
    }
    Err(CoreError::ConvergenceFailure { iterations: MAX_ITERATIONS, residual: worst })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, t)
    }

    #[test]
    fn path_graph_closed_form() {
        // Dirichlet path: 2 - 2 cos(j pi / (n + 1)).
        for n in [50, 900] {
            let ev = smallest_eigenvalues(&path(n), 6).unwrap();
            for (j, v) in ev.iter().enumerate() {
                let want = 2.0 - 2.0 * ((j + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
                assert!((v - want).abs() <= 1e-10 * want.max(1e-3), "n={n} j={j}: {v} vs {want}");
            }
        }
    }

    #[test]
    fn repeated_eigenvalues_from_two_copies() {
        let n = 700;
        let p = path(n);
        let mut t = Vec::new();
        for i in 0..n {
            for (c, v) in p.row(i) {
                t.push((i, c, v));
                t.push((i + n, c + n, v));
            }
        }
        let two = CsrMatrix::from_triplets(2 * n, t);
        let single = smallest_eigenvalues(&p, 5).unwrap();
        let double = smallest_eigenvalues(&two, 10).unwrap();
        for i in 0..10 {
            assert!((double[i] - single[i / 2]).abs() <= 1e-9 * single[i / 2]);
        }
    }
}
