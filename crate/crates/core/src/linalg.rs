//! Small dense helpers on top of nalgebra shared by every module.

use nalgebra::{DMatrix, DVector};

pub use nalgebra::Complex;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
#[cfg(test)]
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// `(A + Aᴴ) / 2`.
pub fn hermitize(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

/// Frobenius norm of `A − Aᴴ`.
pub fn hermitian_defect(a: &CMat) -> f64 {
    (a - a.adjoint()).norm()
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order. The input is Hermitized first.
pub fn hermitian_eigen(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    let eig = hermitize(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Eigenvalues of a Hermitian matrix, descending.
pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let mut v: Vec<f64> = hermitize(a).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|x, y| y.total_cmp(x));
    v
}

/// `V · diag(d) · Vᴴ` for real weights `d`.
pub fn weighted_outer(v: &CMat, d: &[f64]) -> CMat {
    let mut scaled = v.clone();
    for (mut col, &w) in scaled.column_iter_mut().zip(d) {
        col.scale_mut(w);
    }
    &scaled * v.adjoint()
}

pub(crate) fn real_trace(a: &CMat) -> f64 {
    a.diagonal().iter().map(|c| c.re).sum()
}

pub(crate) fn frobenius(a: &CMat) -> f64 {
    a.norm()
}

/// Number of eigenvalues exceeding `rel_tol · trace` of a Hermitian PSD matrix.
pub fn numerical_rank(a: &CMat, rel_tol: f64) -> usize {
    let tr = real_trace(a).abs().max(f64::MIN_POSITIVE);
    hermitian_eigenvalues(a)
        .into_iter()
        .filter(|&l| l > rel_tol * tr)
        .count()
}
