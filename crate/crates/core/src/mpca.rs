//! Mode-2 multilinear PCA.
//!
//! A single column basis is fitted on the joint source+target tensor: every
//! mode-2 vector (one sensor row of one image) is a sample, the mean mode-2
//! vector is removed, and the leading eigenvectors of the mode-2 scatter are
//! kept until the requested percentage of variance is reached. Rows and slices
//! pass through untouched, so an `i1 x i2 x i3` tensor projects to
//! `i1 x p2 x i3`.
//!
//! When there are fewer mode-2 vectors than columns (the usual case for
//! grayscale images 10,568 pixels wide) the eigenproblem is solved on the Gram
//! matrix of the centred vectors and the eigenvectors are lifted back, which
//! yields the same nonzero spectrum at a fraction of the cost.

use nalgebra::DMatrix;

use crate::eigen::sym_eig_auto;
use crate::error::{Error, Result};
use crate::tensor::{concat_slices, Matrix, Tensor3};

/// Relative cut-off below which an eigenvalue counts as numerically zero.
pub const ZERO_EIGEN_REL: f64 = 1e-12;

/// Fitted mode-2 projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeBasis {
    /// `i2 x p2`, orthonormal columns.
    pub basis: Matrix,
    /// Full descending spectrum of the mode-2 scatter (length `min(i2, #vectors)`), clamped at 0.
    pub spectrum: Vec<f64>,
    /// Length-`i2` centring offset (all zeros when fitted uncentred).
    pub mean: Vec<f64>,
    pub retained_fraction: f64,
    pub q_percent: f64,
}

impl ModeBasis {
    pub fn i2(&self) -> usize {
        self.basis.rows()
    }

    pub fn p2(&self) -> usize {
        self.basis.cols()
    }

    pub fn retained_eigenvalues(&self) -> &[f64] {
        &self.spectrum[..self.p2()]
    }

    /// Stable 64-bit fingerprint of the basis contents (FNV-1a over the raw bits).
    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::seed::Fnv1a::new();
        h.write_u64(self.i2() as u64);
        h.write_u64(self.p2() as u64);
        for v in self.basis.as_slice().iter().chain(&self.mean) {
            h.write_u64(v.to_bits());
        }
        h.finish()
    }
}

#[derive(Clone, Debug)]
pub struct JointFitResult {
    pub basis: ModeBasis,
    pub projected_source: Tensor3,
    pub projected_target: Tensor3,
    pub p2: usize,
}

/// Mode-2 scatter `sum_q (v_q - m)(v_q - m)^T`, with `m` the mean mode-2 vector
/// when `center` is set and zero otherwise.
pub fn mode2_scatter(t: &Tensor3, center: bool) -> Matrix {
    let (_, i2, _) = t.dims();
    let mean = if center { mode2_mean(t) } else { vec![0.0; i2] };
    let mut s = vec![0.0; i2 * i2];
    let mut centred = vec![0.0; i2];
    for v in t.mode2_vectors() {
        for ((c, x), m) in centred.iter_mut().zip(v).zip(&mean) {
            *c = x - m;
        }
        for i in 0..i2 {
            let ci = centred[i];
            if ci == 0.0 {
                continue;
            }
            let row = &mut s[i * i2..(i + 1) * i2];
            for (o, cj) in row.iter_mut().zip(&centred) {
                *o += ci * cj;
            }
        }
    }
    let mut m = Matrix::zeros(i2, i2);
    for i in 0..i2 {
        for j in 0..i2 {
            m.set(i, j, 0.5 * (s[i * i2 + j] + s[j * i2 + i]));
        }
    }
    m
}

pub fn mode2_mean(t: &Tensor3) -> Vec<f64> {
    let (_, i2, _) = t.dims();
    let mut mean = vec![0.0; i2];
    for v in t.mode2_vectors() {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = t.mode2_count() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Smallest count whose leading eigenvalues hold at least `q_percent` of the total.
///
/// A zero spectrum keeps one component; `q_percent = 100` keeps every eigenvalue
/// above `1e-12 * lambda_max`.
pub fn select_components(eigenvalues: &[f64], q_percent: f64) -> Result<usize> {
    if !(q_percent > 0.0 && q_percent <= 100.0) {
        return Err(Error::domain(format!("q_percent must lie in (0, 100], got {q_percent}")));
    }
    if eigenvalues.is_empty() {
        return Err(Error::domain("empty spectrum"));
    }
    if eigenvalues.iter().any(|&l| l < 0.0 || !l.is_finite()) {
        return Err(Error::domain("eigenvalues must be finite and nonnegative"));
    }
    if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::domain("eigenvalues must be sorted descending"));
    }
    let total: f64 = eigenvalues.iter().sum();
    if total == 0.0 {
        return Ok(1);
    }
    let nonzero = eigenvalues
        .iter()
        .filter(|&&l| l > ZERO_EIGEN_REL * eigenvalues[0])
        .count();
    if q_percent == 100.0 {
        return Ok(nonzero);
    }
    let mut cum = 0.0;
    for (i, &l) in eigenvalues.iter().enumerate() {
        cum += l;
        // cross-multiplied so exact thresholds such as 9/10 vs 90% compare exactly
        if cum * 100.0 >= q_percent * total {
            return Ok(i + 1);
        }
    }
    Ok(nonzero)
}

/// Fit the centred mode-2 basis on `source` followed by `target` and project both.
pub fn fit_joint(source: &Tensor3, target: &Tensor3, q_percent: f64) -> Result<JointFitResult> {
    fit_joint_with(source, target, q_percent, true)
}

pub fn fit_joint_with(
    source: &Tensor3,
    target: &Tensor3,
    q_percent: f64,
    center: bool,
) -> Result<JointFitResult> {
    let (s1, s2, _) = source.dims();
    let (t1, t2, _) = target.dims();
    if s1 != t1 || s2 != t2 {
        return Err(Error::shape(format!(
            "source {:?} and target {:?} must share rows and columns",
            source.dims(),
            target.dims()
        )));
    }
    let joint = concat_slices(source, target)?;
    let basis = fit_basis(&joint, q_percent, center)?;
    let projected_source = project(source, &basis)?;
    let projected_target = project(target, &basis)?;
    Ok(JointFitResult {
        p2: basis.p2(),
        basis,
        projected_source,
        projected_target,
    })
}

/// Fit a mode-2 basis on a single tensor.
pub fn fit_basis(t: &Tensor3, q_percent: f64, center: bool) -> Result<ModeBasis> {
    if !(q_percent > 0.0 && q_percent <= 100.0) {
        return Err(Error::domain(format!("q_percent must lie in (0, 100], got {q_percent}")));
    }
    let (_, i2, _) = t.dims();
    let n = t.mode2_count();
    let mean = if center { mode2_mean(t) } else { vec![0.0; i2] };
    let xt = centred_columns(t, &mean);

    let (spectrum, vectors) = if n < i2 {
        // Gram route: eigenvectors u of X X^T lift to X^T u / sqrt(lambda)
        let x = xt.transpose();
        let gram = &x * &xt;
        let eig = sym_eig_auto(&symmetric_from(&gram))?;
        let spectrum = clamp(eig.values);
        let p2 = select_components(&spectrum, q_percent)?;
        let u = DMatrix::from_fn(n, p2, |i, j| eig.vectors.get(i, j));
        let mut w = &xt * &u;
        for (j, &lambda) in spectrum.iter().take(p2).enumerate() {
            let mut col = w.column_mut(j);
            if lambda > ZERO_EIGEN_REL * spectrum[0] && lambda > 0.0 {
                col /= lambda.sqrt();
            } else {
                // only reachable for an all-zero spectrum, where any unit vector will do
                col.fill(0.0);
                col[j % i2] = 1.0;
            }
        }
        (spectrum, w)
    } else {
        let scatter = &xt * xt.transpose();
        let eig = sym_eig_auto(&symmetric_from(&scatter))?;
        let spectrum = clamp(eig.values);
        let p2 = select_components(&spectrum, q_percent)?;
        let w = DMatrix::from_fn(i2, p2, |i, j| eig.vectors.get(i, j));
        (spectrum, w)
    };

    let p2 = vectors.ncols();
    let mut basis = Matrix::zeros(i2, p2);
    for j in 0..p2 {
        let col = vectors.column(j);
        // sign convention: the largest-magnitude entry (first on ties) is positive
        let mut pivot = 0;
        for i in 1..i2 {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..i2 {
            basis.set(i, j, sign * col[i]);
        }
    }

    let total: f64 = spectrum.iter().sum();
    let retained_fraction = if total > 0.0 {
        spectrum[..p2].iter().sum::<f64>() / total
    } else {
        1.0
    };
    Ok(ModeBasis {
        basis,
        spectrum,
        mean,
        retained_fraction,
        q_percent,
    })
}

/// Map every mode-2 vector `v` to `B^T (v - mean)`.
pub fn project(t: &Tensor3, basis: &ModeBasis) -> Result<Tensor3> {
    let (i1, i2, i3) = t.dims();
    if i2 != basis.i2() {
        return Err(Error::shape(format!(
            "project: tensor has i2 = {i2}, basis expects {}",
            basis.i2()
        )));
    }
    let xt = centred_columns(t, &basis.mean);
    let b = to_dmatrix(&basis.basis);
    let pt = b.transpose() * xt;
    Tensor3::from_vec((i1, basis.p2(), i3), pt.as_slice().to_vec())
}

/// Map every projected vector `w` to `B w + mean`.
pub fn reconstruct(p: &Tensor3, basis: &ModeBasis) -> Result<Tensor3> {
    let (i1, p2, i3) = p.dims();
    if p2 != basis.p2() {
        return Err(Error::shape(format!(
            "reconstruct: tensor has {p2} components, basis has {}",
            basis.p2()
        )));
    }
    let pt = DMatrix::from_column_slice(p2, i1 * i3, p.as_slice());
    let b = to_dmatrix(&basis.basis);
    let mut xt = b * pt;
    for mut col in xt.column_iter_mut() {
        for (x, m) in col.iter_mut().zip(&basis.mean) {
            *x += m;
        }
    }
    Tensor3::from_vec((i1, basis.i2(), i3), xt.as_slice().to_vec())
}

/// `i2 x n` column-major matrix whose column `q` is mode-2 vector `q` minus `mean`.
fn centred_columns(t: &Tensor3, mean: &[f64]) -> DMatrix<f64> {
    let (_, i2, _) = t.dims();
    let mut xt = DMatrix::from_column_slice(i2, t.mode2_count(), t.as_slice());
    for mut col in xt.column_iter_mut() {
        for (x, m) in col.iter_mut().zip(mean) {
            *x -= m;
        }
    }
    xt
}

fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn symmetric_from(m: &DMatrix<f64>) -> Matrix {
    let n = m.nrows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, 0.5 * (m[(i, j)] + m[(j, i)]));
        }
    }
    out
}

fn clamp(values: Vec<f64>) -> Vec<f64> {
    values.into_iter().map(|l| l.max(0.0)).collect()
}
