//! Small numerical helpers used throughout the crate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

/// Complementary error function, Abramowitz & Stegun 7.1.26.
///
/// Absolute error below 1.5e-7, which is ample for the 1e-3 norm-leakage
/// guards it backs.
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 { poly } else { 2.0 - poly }
}

/// Rank-one kernel `u v^H`.
pub fn outer(u: &DVector<C64>, v: &DVector<C64>) -> DMatrix<C64> {
    let n = u.len();
    DMatrix::from_fn(n, n, |j, k| u[j] * v[k].conj())
}

/// Largest absolute deviation from Hermiticity, `max |K - K^H|`.
pub fn hermiticity_deviation(kernel: &DMatrix<C64>) -> f64 {
    let n = kernel.nrows();
    let mut dev: f64 = 0.0;
    for j in 0..n {
        for k in j..n {
            dev = dev.max((kernel[(j, k)] - kernel[(k, j)].conj()).norm());
        }
    }
    dev
}

/// Average a kernel with its conjugate transpose.
pub fn hermitize(kernel: &DMatrix<C64>) -> DMatrix<C64> {
    let n = kernel.nrows();
    DMatrix::from_fn(n, n, |j, k| 0.5 * (kernel[(j, k)] + kernel[(k, j)].conj()))
}

/// Eigendecomposition of a Hermitian matrix; returns (eigenvalues, eigenvectors)
/// with real eigenvalues in nalgebra's ordering and eigenvectors as columns.
pub fn eigh(matrix: &DMatrix<C64>) -> (DVector<f64>, DMatrix<C64>) {
    let eig = hermitize(matrix).symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

/// Hermitian matrix square root via eigendecomposition. Eigenvalues at or
/// below the roundoff floor are treated as zero.
pub fn sqrtm_psd(matrix: &DMatrix<C64>) -> DMatrix<C64> {
    let (vals, vecs) = eigh(matrix);
    let floor = 1e-14 * vals.iter().cloned().fold(0.0_f64, f64::max);
    let n = matrix.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (i, &lambda) in vals.iter().enumerate() {
        if lambda > floor {
            let col = vecs.column(i);
            let s = lambda.sqrt();
            for j in 0..n {
                for k in 0..n {
                    out[(j, k)] += C64::from(s) * col[j] * col[k].conj();
                }
            }
        }
    }
    out
}
