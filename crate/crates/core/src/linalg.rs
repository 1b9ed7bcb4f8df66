//! Small dense linear-algebra helpers shared across modules.
//!
//! Everything here is deterministic for fixed input: orthonormalization is
//! modified Gram-Schmidt with one re-orthogonalization pass, kernels and
//! ranks go through the Gram matrix of the (small) input, and the matrix
//! exponential is scaling-and-squaring on a truncated series.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::error::Error;
use crate::Result;

/// Relative singular-value threshold used for rank decisions on small
/// matrices (on the sigma scale). Ranks are computed through Gram matrices,
/// whose eigensolve noise sits near machine epsilon times the largest
/// eigenvalue, i.e. ~1e-16 relative on the squared scale; the threshold must
/// stay clearly above that.
pub const RANK_REL_TOL: f64 = 1e-6;

/// Weighted inner product `sum w_i x_i y_i`.
pub fn weighted_dot(x: &DVector<f64>, y: &DVector<f64>, w: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..w.len() {
        acc += w[i] * x[i] * y[i];
    }
    acc
}

pub fn weighted_norm(x: &DVector<f64>, w: &[f64]) -> f64 {
    weighted_dot(x, x, w).sqrt()
}

/// Orthonormalize `vectors` against the weighted inner product. Returns the
/// matrix with orthonormal columns; errors on a dependent input vector.
pub fn weighted_orthonormalize(vectors: &[DVector<f64>], w: &[f64]) -> Result<DMatrix<f64>> {
    let n = w.len();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(vectors.len());
    for (idx, v) in vectors.iter().enumerate() {
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: v.len() });
        }
        let scale = weighted_norm(v, w);
        if scale == 0.0 {
            return Err(Error::DependentBasis(idx));
        }
        let mut u = v / scale;
        // two MGS passes keep the Gram identity at the 1e-12 level
        for _ in 0..2 {
            for q in &cols {
                let c = weighted_dot(&u, q, w);
                u -= q * c;
            }
        }
        let rem = weighted_norm(&u, w);
        if rem <= 1e-10 {
            return Err(Error::DependentBasis(idx));
        }
        cols.push(u / rem);
    }
    Ok(if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    })
}

/// Eigenvalues ascending with matching eigenvectors, from a symmetric matrix.
pub fn sym_eigen_sorted(s: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = s.nrows();
    let eig = s.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).expect("finite eigenvalues"));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Euclidean kernel basis of `a` (rows = constraints), via the spectral
/// decomposition of `a^T a`. Suitable for the small matrices that occur in
/// trace-space computations.
pub fn kernel_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::identity(d, d);
    }
    let gram = a.transpose() * a;
    let (values, vectors) = sym_eigen_sorted(gram);
    let lambda_max = values[d - 1].max(0.0);
    let thr = (RANK_REL_TOL * RANK_REL_TOL) * lambda_max;
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for k in 0..d {
        if values[k] <= thr {
            cols.push(vectors.column(k).into_owned());
        }
    }
    if cols.is_empty() {
        DMatrix::zeros(d, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Numerical rank of `a` on the sigma scale with relative threshold
/// [`RANK_REL_TOL`].
pub fn rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let (r, c) = (a.nrows(), a.ncols());
    let gram = if r <= c { a * a.transpose() } else { a.transpose() * a };
    let m = gram.nrows();
    let (values, _) = sym_eigen_sorted(gram);
    let lambda_max = values[m - 1].max(0.0);
    if lambda_max == 0.0 {
        return 0;
    }
    let thr = (RANK_REL_TOL * RANK_REL_TOL) * lambda_max;
    values.iter().filter(|&&v| v > thr).count()
}

/// Minimum-norm solution of `a x = b` for a full-row-rank `a` (small), via
/// the pseudoinverse `a^T (a a^T)^{-1}` computed spectrally. Returns `None`
/// when `b` is not in the range of `a` (to `RANK_REL_TOL`).
pub fn min_norm_solution(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let k = a.nrows();
    if k == 0 {
        return Some(DVector::zeros(a.ncols()));
    }
    let gram = a * a.transpose();
    let (values, vectors) = sym_eigen_sorted(gram);
    let lambda_max = values[k - 1].max(0.0);
    let thr = (RANK_REL_TOL * RANK_REL_TOL) * lambda_max;
    // y = (a a^T)^+ b
    let mut y = DVector::zeros(k);
    for i in 0..k {
        let q = vectors.column(i);
        if values[i] > thr && values[i] > 0.0 {
            y += q * (q.dot(b) / values[i]);
        }
    }
    let x = a.transpose() * &y;
    let resid = (a * &x - b).norm();
    if resid <= 1e-8 * (1.0 + b.norm()) {
        Some(x)
    } else {
        None
    }
}

/// Matrix exponential `exp(a)` by scaling and squaring on a truncated Taylor
/// series; intended for the small coupling matrices.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = a.amax() * n as f64;
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil().max(0.0) as u32 } else { 0 };
    let scaled = a / (2.0_f64).powi(s as i32);
    let mut term = DMatrix::identity(n, n);
    let mut acc = DMatrix::identity(n, n);
    for k in 1..=30 {
        term = (&term * &scaled) / k as f64;
        acc += &term;
        if term.amax() <= 1e-18 * acc.amax() {
            break;
        }
    }
    for _ in 0..s {
        acc = &acc * &acc;
    }
    acc
}

/// Least-squares slope of `log(y)` against `log(x)`; used to fit convergence
/// rates. Points with non-positive `y` are dropped.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y > 0.0)
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in pts {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}
