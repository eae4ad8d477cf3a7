//! Small dense complex helpers shared by the optimization modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
pub use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `w w^H`.
pub fn outer(w: &CVector) -> CMatrix {
    w * w.adjoint()
}

/// `v^H A v`, real part (exact for Hermitian `A`).
pub fn quad_form(a: &CMatrix, v: &CVector) -> f64 {
    let n = v.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..n {
        let mut col = Complex64::new(0.0, 0.0);
        for i in 0..n {
            col += v[i].conj() * a[(i, j)];
        }
        acc += col * v[j];
    }
    acc.re
}

/// `|a^H b|^2`.
#[inline]
pub fn abs2_inner(a: &CVector, b: &CVector) -> f64 {
    a.dotc(b).norm_sqr()
}

/// `Re tr(A B)`; equals `tr(A B)` when both are Hermitian.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..n {
            let x = a[(i, k)];
            let y = b[(k, i)];
            acc += x.re * y.re - x.im * y.im;
        }
    }
    acc
}

pub fn trace_real(a: &CMatrix) -> f64 {
    (0..a.nrows()).map(|i| a[(i, i)].re).sum()
}

/// Largest absolute entry of `A - A^H`.
pub fn hermitian_deviation(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    dev
}

pub fn symmetrize(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order.
pub fn hermitian_eigen(a: &CMatrix) -> (DVector<f64>, CMatrix) {
    let eig = SymmetricEigen::new(symmetrize(a));
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn min_eigenvalue(a: &CMatrix) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let (values, _) = hermitian_eigen(a);
    values[values.len() - 1]
}

/// Cholesky factor `L` (lower, real positive diagonal) of a Hermitian
/// positive definite matrix; `None` when a pivot is not positive. Only the
/// lower triangle is read.
pub fn hermitian_cholesky(a: &CMatrix) -> Option<CMatrix> {
    let n = a.nrows();
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = Complex64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// `log det A` for Hermitian positive definite `A`.
pub fn hpd_logdet(a: &CMatrix) -> Option<f64> {
    let l = hermitian_cholesky(a)?;
    Some((0..a.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum())
}

/// Inverse of a Hermitian positive definite matrix, returned Hermitian.
pub fn hpd_inverse(a: &CMatrix) -> Option<CMatrix> {
    let n = a.nrows();
    let l = hermitian_cholesky(a)?;
    let linv = l.solve_lower_triangular(&CMatrix::identity(n, n))?;
    Some(symmetrize(&(linv.adjoint() * linv)))
}

/// Frobenius norm of a real matrix difference helper.
pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
