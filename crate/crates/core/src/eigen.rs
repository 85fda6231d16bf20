//! Dense symmetric eigensolvers.
//!
//! [`sym_eig`] is a cyclic Jacobi solver. It is accurate to the last few ulps and
//! easy to audit, but each sweep costs `O(n^3)` with poor locality, so
//! [`sym_eig_auto`] switches to Householder tridiagonalisation + implicit QR
//! (via `nalgebra`) above [`JACOBI_MAX_DIM`].

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MAX_SWEEPS: usize = 100;
pub const JACOBI_MAX_DIM: usize = 160;

/// Eigenpairs sorted by descending eigenvalue; eigenvectors are the columns of `vectors`.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

fn check_symmetric(s: &Matrix) -> Result<()> {
    let n = s.rows();
    if s.cols() != n {
        return Err(Error::domain(format!("eigensolve needs a square matrix, got {}x{}", n, s.cols())));
    }
    let tol = 1e-9 * s.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (s.get(i, j) - s.get(j, i)).abs();
            if d > tol {
                return Err(Error::domain(format!(
                    "matrix not symmetric: |s[{i},{j}] - s[{j},{i}]| = {d:e}"
                )));
            }
        }
    }
    Ok(())
}

/// Cyclic Jacobi eigensolver.
///
/// Sweeps over all `(p, q)` pairs in row order until the largest off-diagonal
/// magnitude drops to `1e-11 * ||s||_F`, giving up after [`MAX_SWEEPS`].
pub fn sym_eig(s: &Matrix) -> Result<EigenDecomposition> {
    check_symmetric(s)?;
    let n = s.rows();
    // symmetrise so the rotations see an exactly symmetric matrix
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (s.get(i, j) + s.get(j, i));
        }
    }
    // rows of `vt` are the eigenvectors being accumulated
    let mut vt = vec![0.0; n * n];
    for i in 0..n {
        vt[i * n + i] = 1.0;
    }

    let threshold = 1e-11 * s.frobenius_norm();
    let off_max = |a: &[f64]| {
        let mut m = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                m = m.max(a[i * n + j].abs());
            }
        }
        m
    };

    let mut sweeps = 0;
    loop {
        let off = off_max(&a);
        if off <= threshold {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::Convergence {
                sweeps,
                residual: off,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - sn * akq;
                    a[k * n + q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - sn * aqk;
                    a[q * n + k] = sn * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;

                let (head, tail) = vt.split_at_mut(q * n);
                let vp = &mut head[p * n..(p + 1) * n];
                let vq = &mut tail[..n];
                for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - sn * yq;
                    *y = sn * xp + c * yq;
                }
            }
        }
    }

    let values: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    Ok(sorted(values, |i, k| vt[i * n + k], n))
}

/// Jacobi for small matrices, tridiagonal QR above [`JACOBI_MAX_DIM`].
pub fn sym_eig_auto(s: &Matrix) -> Result<EigenDecomposition> {
    if s.rows() <= JACOBI_MAX_DIM {
        return sym_eig(s);
    }
    check_symmetric(s)?;
    let n = s.rows();
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (s.get(i, j) + s.get(j, i)));
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 0).ok_or(Error::Convergence {
        sweeps: 0,
        residual: f64::NAN,
    })?;
    let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let vecs = &eig.eigenvectors;
    Ok(sorted(values, |i, k| vecs[(k, i)], n))
}

/// Sort eigenpairs by descending value. `component(i, k)` is entry `k` of eigenvector `i`.
fn sorted(values: Vec<f64>, component: impl Fn(usize, usize) -> f64, n: usize) -> EigenDecomposition {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // stable sort keeps ties in solver order, which is itself deterministic
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut vectors = Matrix::zeros(n, order.len());
    for (col, &i) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, col, component(i, k));
        }
    }
    EigenDecomposition {
        values: order.iter().map(|&i| values[i]).collect(),
        vectors,
    }
}
