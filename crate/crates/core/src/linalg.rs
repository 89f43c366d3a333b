//! Dense positive-definite linear algebra.
//!
//! Everything here works on `nalgebra::DMatrix<f64>` and is written out by
//! hand so that a failed factorization can report which pivot broke.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = G`.
///
/// Only the lower triangle of `g` is read.
pub fn cholesky(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = g.nrows();
    if g.ncols() != n {
        return Err(Error::shape("cholesky", "square matrix", format!("{}x{}", n, g.ncols())));
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = g[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite {
                pivot: j,
                value: d,
                dim: None,
            });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = g[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solve `L X = B` for lower-triangular `L`, overwriting `b`.
pub fn forward_substitute(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut s = b[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * b[(k, c)];
            }
            b[(i, c)] = s / l[(i, i)];
        }
    }
}

/// Solve `Lᵀ X = B` for lower-triangular `L`, overwriting `b`.
pub fn backward_substitute(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    for c in 0..b.ncols() {
        for i in (0..n).rev() {
            let mut s = b[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * b[(k, c)];
            }
            b[(i, c)] = s / l[(i, i)];
        }
    }
}

/// Solve `G X = B` given the Cholesky factor of `G`.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() != l.nrows() {
        return Err(Error::shape(
            "cholesky_solve",
            format!("{} rows", l.nrows()),
            format!("{} rows", b.nrows()),
        ));
    }
    let mut x = b.clone();
    forward_substitute(l, &mut x);
    backward_substitute(l, &mut x);
    Ok(x)
}

/// `log det G` from its Cholesky factor.
pub fn cholesky_logdet(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Inverse of `G` from its Cholesky factor.
pub fn cholesky_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = DMatrix::identity(n, n);
    forward_substitute(l, &mut x);
    backward_substitute(l, &mut x);
    x
}
