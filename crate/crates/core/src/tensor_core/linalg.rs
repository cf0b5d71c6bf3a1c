//! Dense complex linear algebra used throughout the crate: products,
//! thin QR, reduced SVD, orthonormal range, Hermitian eigendecomposition.
//!
//! Factor phases are not canonical; callers compare spans, projectors or
//! reconstructions, never raw factor entries.

use std::any::TypeId;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::scalar::{cabs, czero, Real, C};

/// Dense complex matrix, column-major.
pub type Matrix<T> = DMatrix<C<T>>;

/// `c <- alpha * a * b + beta * c` on raw column-major storage with explicit
/// strides. Dispatches to the packed complex kernels of `matrixmultiply` for
/// `f32`/`f64` and falls back to a plain loop otherwise.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_raw<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: C<T>,
    a: &[C<T>],
    rsa: isize,
    csa: isize,
    b: &[C<T>],
    rsb: isize,
    csb: isize,
    beta: C<T>,
    c: &mut [C<T>],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = (i as isize * rsc + j as isize * csc) as usize;
                c[idx] = if beta == czero() { czero() } else { c[idx] * beta };
            }
        }
        return;
    }
    let tid = TypeId::of::<T>();
    // SAFETY: `Complex<T>` is `repr(C)` with fields `re, im`, so for T = f64
    // (f32) it has the layout of `[f64; 2]` (`[f32; 2]`). Slices are borrowed
    // for the duration of the call and strides stay within their bounds.
    unsafe {
        if tid == TypeId::of::<f64>() {
            let al = *(&alpha as *const C<T> as *const [f64; 2]);
            let be = *(&beta as *const C<T> as *const [f64; 2]);
            matrixmultiply::zgemm(
                matrixmultiply::CGemmOption::Standard,
                matrixmultiply::CGemmOption::Standard,
                m,
                k,
                n,
                al,
                a.as_ptr() as *const [f64; 2],
                rsa,
                csa,
                b.as_ptr() as *const [f64; 2],
                rsb,
                csb,
                be,
                c.as_mut_ptr() as *mut [f64; 2],
                rsc,
                csc,
            );
            return;
        }
        if tid == TypeId::of::<f32>() {
            let al = *(&alpha as *const C<T> as *const [f32; 2]);
            let be = *(&beta as *const C<T> as *const [f32; 2]);
            matrixmultiply::cgemm(
                matrixmultiply::CGemmOption::Standard,
                matrixmultiply::CGemmOption::Standard,
                m,
                k,
                n,
                al,
                a.as_ptr() as *const [f32; 2],
                rsa,
                csa,
                b.as_ptr() as *const [f32; 2],
                rsb,
                csb,
                be,
                c.as_mut_ptr() as *mut [f32; 2],
                rsc,
                csc,
            );
            return;
        }
    }
    for i in 0..m {
        for j in 0..n {
            let mut acc = czero::<T>();
            for l in 0..k {
                acc += a[(i as isize * rsa + l as isize * csa) as usize]
                    * b[(l as isize * rsb + j as isize * csb) as usize];
            }
            let idx = (i as isize * rsc + j as isize * csc) as usize;
            c[idx] = if beta == czero() { alpha * acc } else { alpha * acc + beta * c[idx] };
        }
    }
}

/// Shape of an operand as seen by [`matmul_ext`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    /// `A`
    N,
    /// `Aᵀ`
    T,
    /// `Aᴴ`
    H,
    /// `conj(A)`
    Conj,
}

fn conj_copy<T: Real>(a: &Matrix<T>) -> Matrix<T> {
    a.map(|z| z.conj())
}

/// `op(a) * op(b)`.
pub fn matmul_ext<T: Real>(a: &Matrix<T>, opa: Op, b: &Matrix<T>, opb: Op) -> Matrix<T> {
    let conj_a;
    let conj_b;
    let a_src: &Matrix<T> = match opa {
        Op::H | Op::Conj => {
            conj_a = conj_copy(a);
            &conj_a
        }
        _ => a,
    };
    let b_src: &Matrix<T> = match opb {
        Op::H | Op::Conj => {
            conj_b = conj_copy(b);
            &conj_b
        }
        _ => b,
    };
    let (ar, ac) = (a.nrows(), a.ncols());
    let (br, bc) = (b.nrows(), b.ncols());
    let (m, k, rsa, csa) = match opa {
        Op::N | Op::Conj => (ar, ac, 1isize, ar as isize),
        Op::T | Op::H => (ac, ar, ar as isize, 1isize),
    };
    let (k2, n, rsb, csb) = match opb {
        Op::N | Op::Conj => (br, bc, 1isize, br as isize),
        Op::T | Op::H => (bc, br, br as isize, 1isize),
    };
    assert_eq!(k, k2, "matmul inner dimensions differ: {k} vs {k2}");
    let mut out = Matrix::<T>::zeros(m, n);
    gemm_raw(
        m,
        k,
        n,
        C::new(T::one(), T::zero()),
        a_src.as_slice(),
        rsa,
        csa,
        b_src.as_slice(),
        rsb,
        csb,
        czero(),
        out.as_mut_slice(),
        1,
        m as isize,
    );
    out
}

#[inline]
pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    matmul_ext(a, Op::N, b, Op::N)
}

/// `aᴴ b`.
#[inline]
pub fn adj_mul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    matmul_ext(a, Op::H, b, Op::N)
}

/// Frobenius norm.
pub fn fro_norm<T: Real>(a: &Matrix<T>) -> T {
    a.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt()
}

/// Spectral norm (largest singular value).
pub fn spectral_norm<T: Real>(a: &Matrix<T>) -> T {
    if a.is_empty() {
        return T::zero();
    }
    let s = a.clone().singular_values();
    s.iter().fold(T::zero(), |m, &x| if x > m { x } else { m })
}

/// Thin QR factorization `M = Q R` with `cols(Q) = min(rows, cols)`.
pub fn qr_thin<T: Real>(m: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
    if m.ncols() == 0 {
        return (Matrix::zeros(m.nrows(), 0), Matrix::zeros(0, 0));
    }
    let qr = m.clone().qr();
    (qr.q(), qr.r())
}

/// Reduced SVD `M = P diag(sigma) Vh` with `sigma` sorted descending.
pub fn svd_reduced<T: Real>(m: &Matrix<T>) -> (Matrix<T>, Vec<T>, Matrix<T>) {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return (Matrix::zeros(rows, 0), Vec::new(), Matrix::zeros(0, cols));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let vt = svd.v_t.expect("right singular vectors requested");
    let s: Vec<T> = svd.singular_values.iter().copied().collect();
    let order = descending_order(&s);
    let mut p = Matrix::zeros(rows, k);
    let mut vh = Matrix::zeros(k, cols);
    let mut sigma = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        p.set_column(dst, &u.column(src));
        vh.set_row(dst, &vt.row(src));
        sigma.push(s[src]);
    }
    (p, sigma, vh)
}

/// Left singular vectors and singular values only, `M = P diag(sigma) (..)`.
///
/// Wide inputs are first compressed by a QR of `Mᴴ`, so the SVD is taken of
/// a square `rows x rows` factor.
pub fn left_svd<T: Real>(m: &Matrix<T>) -> (Matrix<T>, Vec<T>) {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return (Matrix::zeros(rows, 0), Vec::new());
    }
    if cols > rows {
        // M^H = Q R  =>  M = R^H Q^H, and Q^H has orthonormal rows.
        let (_, r) = qr_thin(&m.adjoint());
        let (p, s, _) = svd_reduced(&r.adjoint());
        return (p, s);
    }
    if rows > cols {
        let (q, r) = qr_thin(m);
        let (pr, s, _) = svd_reduced(&r);
        return (matmul(&q, &pr), s);
    }
    let (p, s, _) = svd_reduced(m);
    (p, s)
}

fn descending_order<T: Real>(s: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal));
    order
}

/// Default relative tolerance for [`orthonormal_range`].
pub const RANGE_REL_TOL: f64 = 1e-12;

/// Orthonormal basis of the numerical range of `M`: left singular vectors
/// whose singular values exceed `rel_tol * sigma_max`.
pub fn orthonormal_range<T: Real>(m: &Matrix<T>, rel_tol: T) -> Matrix<T> {
    let (p, s) = left_svd(m);
    let smax = s.first().copied().unwrap_or_else(T::zero);
    if smax <= T::zero() {
        return Matrix::zeros(m.nrows(), 0);
    }
    let keep = s.iter().take_while(|&&x| x > rel_tol * smax).count();
    p.columns(0, keep).into_owned()
}

/// Horizontal concatenation `(a, b)`.
pub fn hcat<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    assert_eq!(a.nrows(), b.nrows(), "hcat row mismatch");
    let mut out = Matrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigh<T: Real>(h: &Matrix<T>) -> (Vec<T>, Matrix<T>) {
    let n = h.nrows();
    let eig = SymmetricEigen::new(h.clone());
    let vals: Vec<T> = eig.eigenvalues.iter().copied().collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut vecs = Matrix::zeros(n, n);
    let mut sorted = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
        sorted.push(vals[src]);
    }
    (sorted, vecs)
}

/// Deviation from orthonormal columns, `max |QᴴQ - I|`.
pub fn orthonormality_defect<T: Real>(q: &Matrix<T>) -> T {
    let g = adj_mul(q, q);
    let mut worst = T::zero();
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { T::one() } else { T::zero() };
            let d = cabs(g[(i, j)] - C::new(target, T::zero()));
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_core::random::random_matrix;

    fn rel_err(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
        fro_norm(&(a - b)) / fro_norm(b).max(1e-300)
    }

    #[test]
    fn gemm_matches_nalgebra_all_ops() {
        let a = random_matrix::<f64>(4, 3, 1);
        let b = random_matrix::<f64>(3, 5, 2);
        let reference = &a * &b;
        assert!(rel_err(&matmul(&a, &b), &reference) < 1e-14);
        let at = a.transpose();
        assert!(rel_err(&matmul_ext(&at, Op::T, &b, Op::N), &reference) < 1e-14);
        let ah = a.adjoint();
        assert!(rel_err(&matmul_ext(&ah, Op::H, &b, Op::N), &reference) < 1e-14);
        let bc = b.map(|z| z.conj());
        assert!(rel_err(&matmul_ext(&a, Op::N, &bc, Op::Conj), &reference) < 1e-14);
        let bh = b.adjoint();
        assert!(rel_err(&matmul_ext(&a, Op::N, &bh, Op::H), &reference) < 1e-14);
    }

    #[test]
    fn gemm_f32_path() {
        let a = random_matrix::<f32>(6, 4, 3);
        let b = random_matrix::<f32>(4, 2, 4);
        let r = &a * &b;
        let m = matmul(&a, &b);
        assert!(fro_norm(&(m - &r)) < 1e-5 * fro_norm(&r));
    }

    #[test]
    fn qr_identity() {
        let m = Matrix::<f64>::identity(3, 3);
        let (q, r) = qr_thin(&m);
        assert!(rel_err(&matmul(&q, &r), &m) < 1e-15);
        // Up to column phases, Q is the identity.
        for i in 0..3 {
            assert!((q[(i, i)].norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn qr_zero_column_reconstructs() {
        let mut m = random_matrix::<f64>(5, 3, 9);
        m.column_mut(1).fill(czero());
        let (q, r) = qr_thin(&m);
        assert!(fro_norm(&(matmul(&q, &r) - &m)) < 1e-13);
        assert!(orthonormality_defect(&q) < 1e-12);
    }

    #[test]
    fn qr_random_tall() {
        let m = random_matrix::<f64>(8, 3, 11);
        let (q, r) = qr_thin(&m);
        assert_eq!(q.ncols(), 3);
        assert!(orthonormality_defect(&q) < 1e-12);
        assert!(rel_err(&matmul(&q, &r), &m) < 1e-12);
    }

    #[test]
    fn svd_diagonal() {
        let mut m = Matrix::<f64>::zeros(2, 2);
        m[(0, 0)] = C::new(1.0, 0.0);
        m[(1, 1)] = C::new(3.0, 0.0);
        let (_, s, _) = svd_reduced(&m);
        assert!((s[0] - 3.0).abs() < 1e-14 && (s[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn svd_zero_matrix() {
        let m = Matrix::<f64>::zeros(3, 2);
        let (_, s, _) = svd_reduced(&m);
        assert!(s.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn svd_random_wide() {
        let m = random_matrix::<f64>(4, 6, 5);
        let (p, s, vh) = svd_reduced(&m);
        let sig = Matrix::from_diagonal(&nalgebra::DVector::from_iterator(
            s.len(),
            s.iter().map(|&x| C::new(x, 0.0)),
        ));
        assert!(rel_err(&(&p * sig * &vh), &m) < 1e-12);
        assert!(orthonormality_defect(&p) < 1e-12);
        assert!(orthonormality_defect(&vh.adjoint()) < 1e-12);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn left_svd_agrees_with_full_svd() {
        for &(r, c) in &[(3usize, 9usize), (9, 3), (4, 4)] {
            let m = random_matrix::<f64>(r, c, (r * 10 + c) as u64);
            let (p, s) = left_svd(&m);
            let (_, s_ref, _) = svd_reduced(&m);
            for (a, b) in s.iter().zip(&s_ref) {
                assert!((a - b).abs() < 1e-12);
            }
            // P P^H M == M
            let proj = &p * p.adjoint() * &m;
            assert!(rel_err(&proj, &m) < 1e-12);
        }
    }

    #[test]
    fn range_of_orthonormal_columns() {
        let (q, _) = qr_thin(&random_matrix::<f64>(6, 3, 21));
        let u = orthonormal_range(&q, 1e-12);
        assert_eq!(u.ncols(), 3);
        let pu = &u * u.adjoint();
        let pq = &q * q.adjoint();
        assert!(fro_norm(&(pu - pq)) < 1e-12);
    }

    #[test]
    fn range_of_duplicated_column() {
        let v = random_matrix::<f64>(5, 1, 3);
        let m = hcat(&v, &v);
        assert_eq!(orthonormal_range(&m, 1e-12).ncols(), 1);
    }

    #[test]
    fn range_contains_old_basis() {
        let n = 10;
        let r = 3;
        let k = random_matrix::<f64>(n, r, 31);
        let (u0, _) = qr_thin(&random_matrix::<f64>(n, r, 32));
        let u = orthonormal_range(&hcat(&k, &u0), 1e-12);
        assert_eq!(u.ncols(), 2 * r);
        let back = &u * (u.adjoint() * &u0);
        assert!(fro_norm(&(back - &u0)) < 1e-12);
    }

    #[test]
    fn hermitian_eigh_reconstructs() {
        let a = random_matrix::<f64>(5, 5, 8);
        let h = &a + a.adjoint();
        let (vals, vecs) = hermitian_eigh(&h);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let d = Matrix::from_diagonal(&nalgebra::DVector::from_iterator(
            5,
            vals.iter().map(|&x| C::new(x, 0.0)),
        ));
        assert!(rel_err(&(&vecs * d * vecs.adjoint()), &h) < 1e-12);
    }
}
