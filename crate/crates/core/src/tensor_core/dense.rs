//! Dense complex tensors with first-index-fastest (reverse lexicographic)
//! linearization.
//!
//! For `dims = (n_0, ..., n_{d-1})` the entry with multi-index `k` lives at
//! `k_0 + n_0 (k_1 + n_1 (k_2 + ...))`. The `i`th matricization has rows
//! indexed by `k_i` and columns by the remaining indices in the same order.

use num_traits::Zero;

use super::linalg::{gemm_raw, matmul_ext, Matrix, Op};
use crate::error::{Result, TtnError};
use crate::scalar::{cabs, cone, czero, Real, C};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor<T: Real> {
    dims: Vec<usize>,
    data: Vec<C<T>>,
}

/// `(prod dims[..i], dims[i], prod dims[i+1..])`.
#[inline]
fn split(dims: &[usize], i: usize) -> (usize, usize, usize) {
    let left: usize = dims[..i].iter().product();
    let right: usize = dims[i + 1..].iter().product();
    (left, dims[i], right)
}

impl<T: Real> DenseTensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<C<T>>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(TtnError::ShapeMismatch(format!(
                "dims {dims:?} need {n} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Self { dims: dims.to_vec(), data: vec![czero(); n] }
    }

    /// Tensor with entries `f(multi_index)`.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> C<T>) -> Self {
        let n: usize = dims.iter().product();
        let mut idx = vec![0usize; dims.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for (k, &nk) in idx.iter_mut().zip(dims) {
                *k += 1;
                if *k < nk {
                    break;
                }
                *k = 0;
            }
        }
        Self { dims: dims.to_vec(), data }
    }

    /// Order-2 tensor holding the entries of `m`.
    pub fn from_matrix(m: &Matrix<T>) -> Self {
        Self { dims: vec![m.nrows(), m.ncols()], data: m.as_slice().to_vec() }
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[C<T>] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [C<T>] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C<T>> {
        self.data
    }

    /// Linear offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        for k in (0..idx.len()).rev() {
            off = off * self.dims[k] + idx[k];
        }
        off
    }

    #[inline]
    pub fn get(&self, idx: &[usize]) -> C<T> {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: &[usize], v: C<T>) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    /// Same data with new dims of equal total size.
    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        Self::new(dims.to_vec(), self.data)
    }

    fn check_mode(&self, i: usize) -> Result<()> {
        if i >= self.dims.len() {
            return Err(TtnError::InvalidMode { mode: i, order: self.dims.len() });
        }
        Ok(())
    }

    /// `mat_i(A)`, shape `n_i x prod_{j != i} n_j`.
    pub fn matricize(&self, i: usize) -> Result<Matrix<T>> {
        self.check_mode(i)?;
        let (left, n, right) = split(&self.dims, i);
        if left == 1 {
            return Ok(Matrix::from_column_slice(n, right, &self.data));
        }
        let mut m = Matrix::zeros(n, left * right);
        let out = m.as_mut_slice();
        for r in 0..right {
            for k in 0..n {
                let src = &self.data[left * (k + n * r)..left * (k + n * r + 1)];
                for (l, &v) in src.iter().enumerate() {
                    out[k + n * (l + left * r)] = v;
                }
            }
        }
        Ok(m)
    }

    /// Inverse of [`matricize`](Self::matricize): `ten_i(M)` with target dims.
    pub fn tensorize(m: &Matrix<T>, i: usize, dims: &[usize]) -> Result<Self> {
        if i >= dims.len() {
            return Err(TtnError::InvalidMode { mode: i, order: dims.len() });
        }
        let (left, n, right) = split(dims, i);
        if m.nrows() != n || m.ncols() != left * right {
            return Err(TtnError::ShapeMismatch(format!(
                "cannot tensorize {}x{} matrix along mode {i} into {dims:?}",
                m.nrows(),
                m.ncols()
            )));
        }
        if left == 1 {
            return Self::new(dims.to_vec(), m.as_slice().to_vec());
        }
        let src = m.as_slice();
        let mut data = vec![czero(); src.len()];
        for r in 0..right {
            for k in 0..n {
                for l in 0..left {
                    data[l + left * (k + n * r)] = src[k + n * (l + left * r)];
                }
            }
        }
        Self::new(dims.to_vec(), data)
    }

    /// `A x_i M = ten_i(M mat_i(A))`.
    pub fn mode_product(&self, i: usize, m: &Matrix<T>) -> Result<Self> {
        self.check_mode(i)?;
        let (left, n, right) = split(&self.dims, i);
        if m.ncols() != n {
            return Err(TtnError::ShapeMismatch(format!(
                "mode {i} has size {n} but matrix is {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let p = m.nrows();
        let mut dims = self.dims.clone();
        dims[i] = p;
        let mut out = vec![czero(); left * p * right];
        if left == 1 {
            // out (p x right) = M (p x n) * A (n x right)
            gemm_raw(
                p,
                n,
                right,
                cone(),
                m.as_slice(),
                1,
                p as isize,
                &self.data,
                1,
                n as isize,
                czero(),
                &mut out,
                1,
                p as isize,
            );
        } else {
            for r in 0..right {
                // block (left x n) * M^T (n x p)
                let a = &self.data[left * n * r..left * n * (r + 1)];
                let c = &mut out[left * p * r..left * p * (r + 1)];
                gemm_raw(
                    left,
                    n,
                    p,
                    cone(),
                    a,
                    1,
                    left as isize,
                    m.as_slice(),
                    p as isize,
                    1,
                    czero(),
                    c,
                    1,
                    left as isize,
                );
            }
        }
        Ok(Self { dims, data: out })
    }

    /// Successive mode products `A x_{i1} M1 x_{i2} M2 ...`.
    pub fn mode_products<'a>(
        &self,
        factors: impl IntoIterator<Item = (usize, &'a Matrix<T>)>,
    ) -> Result<Self> {
        let mut out: Option<Self> = None;
        for (i, m) in factors {
            out = Some(out.as_ref().unwrap_or(self).mode_product(i, m)?);
        }
        Ok(out.unwrap_or_else(|| self.clone()))
    }

    /// Permuted tensor with `out.dims[k] = self.dims[perm[k]]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let d = self.order();
        let mut seen = vec![false; d];
        if perm.len() != d || perm.iter().any(|&p| p >= d || std::mem::replace(&mut seen[p], true)) {
            return Err(TtnError::ShapeMismatch(format!("{perm:?} is not a permutation of 0..{d}")));
        }
        let dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        let mut strides = vec![1usize; d];
        for k in 1..d {
            strides[k] = strides[k - 1] * self.dims[k - 1];
        }
        let pstrides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; d];
        let mut src = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[src]);
            for k in 0..d {
                idx[k] += 1;
                src += pstrides[k];
                if idx[k] < dims[k] {
                    break;
                }
                src -= pstrides[k] * dims[k];
                idx[k] = 0;
            }
        }
        Ok(Self { dims, data })
    }

    pub fn scale(&self, s: C<T>) -> Self {
        Self { dims: self.dims.clone(), data: self.data.iter().map(|&z| z * s).collect() }
    }

    pub fn conj(&self) -> Self {
        Self { dims: self.dims.clone(), data: self.data.iter().map(|z| z.conj()).collect() }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: C<T>, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(TtnError::ShapeMismatch(format!(
                "axpy dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(-cone::<T>(), other)?;
        Ok(out)
    }

    /// Euclidean norm of the vectorized tensor.
    pub fn norm(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt()
    }

    /// `<self, other> = sum conj(self) * other`.
    pub fn inner(&self, other: &Self) -> Result<C<T>> {
        if self.data.len() != other.data.len() {
            return Err(TtnError::ShapeMismatch(format!(
                "inner dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self.data.iter().zip(&other.data).fold(C::zero(), |acc, (a, b)| acc + a.conj() * b))
    }

    /// `conj(mat_i(a)) mat_i(b)^T`: contraction over every mode except `i`.
    pub fn mode_gram(a: &Self, b: &Self, i: usize) -> Result<Matrix<T>> {
        a.check_mode(i)?;
        b.check_mode(i)?;
        let (la, na, ra) = split(&a.dims, i);
        let (lb, nb, rb) = split(&b.dims, i);
        if la * ra != lb * rb {
            return Err(TtnError::ShapeMismatch(format!(
                "mode_gram on mode {i}: {:?} vs {:?}",
                a.dims, b.dims
            )));
        }
        if i == 0 {
            let k = ra;
            let ac: Vec<C<T>> = a.data.iter().map(|z| z.conj()).collect();
            let mut out = Matrix::zeros(na, nb);
            gemm_raw(
                na,
                k,
                nb,
                cone(),
                &ac,
                1,
                na as isize,
                &b.data,
                nb as isize,
                1,
                czero(),
                out.as_mut_slice(),
                1,
                na as isize,
            );
            return Ok(out);
        }
        let ma = a.matricize(i)?;
        let mb = b.matricize(i)?;
        Ok(matmul_ext(&ma, Op::Conj, &mb, Op::T))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| {
                let d = cabs(*a - *b);
                if d > m {
                    d
                } else {
                    m
                }
            })
    }
}

/// Kronecker product `a (x) b`, with `b`'s index running fastest within blocks.
pub fn kron<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    a.kronecker(b)
}

/// `U_i mat_i(C) (U_{d-1} (x) ... (x) U_{j} ...)^T` over `j != i`, computed
/// as the matricization of the fully contracted tensor `C x_j U_j`.
pub fn tucker_matricization<T: Real>(
    c: &DenseTensor<T>,
    bases: &[Matrix<T>],
    i: usize,
) -> Result<Matrix<T>> {
    if bases.len() != c.order() {
        return Err(TtnError::ShapeMismatch(format!(
            "{} bases for a tensor of order {}",
            bases.len(),
            c.order()
        )));
    }
    let full = c.mode_products(bases.iter().enumerate())?;
    full.matricize(i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_core::linalg::fro_norm;
    use crate::tensor_core::random::{random_matrix, random_tensor};

    fn enumerate(dims: &[usize]) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for &n in dims.iter().rev() {
            let mut next = Vec::new();
            for prefix in &out {
                for k in 0..n {
                    let mut v = vec![k];
                    v.extend(prefix);
                    next.push(v);
                }
            }
            out = next;
        }
        out
    }

    #[test]
    fn matricize_one_hot() {
        let mut a = DenseTensor::<f64>::zeros(&[2, 2, 2]);
        a.set(&[0, 0, 0], cone());
        let m = a.matricize(0).unwrap();
        assert_eq!(m.shape(), (2, 4));
        assert_eq!(m[(0, 0)], cone());
        assert_eq!(m.iter().filter(|z| **z != czero()).count(), 1);
    }

    #[test]
    fn matricize_vector() {
        let a = random_tensor::<f64>(&[5], 1);
        let m = a.matricize(0).unwrap();
        assert_eq!(m.shape(), (5, 1));
        assert_eq!(m.as_slice(), a.data());
    }

    #[test]
    fn matricize_against_index_enumeration() {
        let dims = [2usize, 3, 4];
        let a = random_tensor::<f64>(&dims, 7);
        for i in 0..3 {
            let m = a.matricize(i).unwrap();
            for idx in enumerate(&dims) {
                // column index: remaining subscripts, first fastest
                let mut col = 0;
                let mut stride = 1;
                for (j, &k) in idx.iter().enumerate() {
                    if j != i {
                        col += k * stride;
                        stride *= dims[j];
                    }
                }
                assert_eq!(m[(idx[i], col)], a.get(&idx));
            }
        }
    }

    #[test]
    fn invalid_mode_is_error() {
        let a = DenseTensor::<f64>::zeros(&[2, 2]);
        assert!(matches!(a.matricize(2), Err(TtnError::InvalidMode { mode: 2, order: 2 })));
    }

    #[test]
    fn tensorize_round_trip() {
        let dims = [2usize, 3, 4];
        let a = random_tensor::<f64>(&dims, 3);
        for i in 0..3 {
            let m = a.matricize(i).unwrap();
            assert_eq!(DenseTensor::tensorize(&m, i, &dims).unwrap(), a);
        }
        let m = random_matrix::<f64>(3, 8, 4);
        let t = DenseTensor::tensorize(&m, 1, &dims).unwrap();
        assert_eq!(t.matricize(1).unwrap(), m);
        let v = random_matrix::<f64>(2, 1, 5);
        let t = DenseTensor::tensorize(&v, 0, &[2]).unwrap();
        assert_eq!(t.data(), v.as_slice());
        assert!(DenseTensor::tensorize(&v, 0, &[3]).is_err());
    }

    #[test]
    fn mode_product_identity() {
        let a = random_tensor::<f64>(&[2, 3, 4], 9);
        for i in 0..3 {
            let id = Matrix::identity(a.dims()[i], a.dims()[i]);
            assert_eq!(a.mode_product(i, &id).unwrap().max_abs_diff(&a), 0.0);
        }
        let ids: Vec<Matrix<f64>> = a.dims().iter().map(|&n| Matrix::identity(n, n)).collect();
        assert_eq!(a.mode_products(ids.iter().enumerate()).unwrap().max_abs_diff(&a), 0.0);
    }

    #[test]
    fn mode_product_against_triple_loop() {
        let a = random_tensor::<f64>(&[2, 2, 2], 10);
        let m = random_matrix::<f64>(3, 2, 11);
        let b = a.mode_product(1, &m).unwrap();
        assert_eq!(b.dims(), &[2, 3, 2]);
        for i0 in 0..2 {
            for j in 0..3 {
                for i2 in 0..2 {
                    let mut s = czero::<f64>();
                    for k in 0..2 {
                        s += m[(j, k)] * a.get(&[i0, k, i2]);
                    }
                    assert!((b.get(&[i0, j, i2]) - s).norm() < 1e-14);
                }
            }
        }
        assert!(a.mode_product(1, &random_matrix::<f64>(3, 3, 1)).is_err());
    }

    #[test]
    fn mode_product_commutes_across_modes() {
        let a = random_tensor::<f64>(&[3, 4, 2, 5], 12);
        let m = random_matrix::<f64>(2, 4, 13);
        let n = random_matrix::<f64>(6, 5, 14);
        let x = a.mode_product(1, &m).unwrap().mode_product(3, &n).unwrap();
        let y = a.mode_product(3, &n).unwrap().mode_product(1, &m).unwrap();
        assert!(x.sub(&y).unwrap().norm() < 1e-13 * x.norm());
    }

    #[test]
    fn mode_product_equals_ten_of_product() {
        let a = random_tensor::<f64>(&[3, 4, 2], 15);
        for i in 0..3 {
            let m = random_matrix::<f64>(5, a.dims()[i], 16 + i as u64);
            let b = a.mode_product(i, &m).unwrap();
            let r = &m * a.matricize(i).unwrap();
            assert!(fro_norm(&(b.matricize(i).unwrap() - r)) < 1e-13);
        }
    }

    #[test]
    fn tucker_identity_bases() {
        let c = random_tensor::<f64>(&[2, 3, 2], 17);
        let ids: Vec<Matrix<f64>> = c.dims().iter().map(|&n| Matrix::identity(n, n)).collect();
        for i in 0..3 {
            assert_eq!(tucker_matricization(&c, &ids, i).unwrap(), c.matricize(i).unwrap());
        }
    }

    #[test]
    fn tucker_rank_one_outer_product() {
        let c = DenseTensor::<f64>::new(vec![1, 1, 1], vec![cone()]).unwrap();
        let us: Vec<Matrix<f64>> = (0..3).map(|k| random_matrix::<f64>(2, 1, 20 + k)).collect();
        let m = tucker_matricization(&c, &us, 0).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                for e in 0..2 {
                    let direct = us[0][(a, 0)] * us[1][(b, 0)] * us[2][(e, 0)];
                    assert!((m[(a, b + 2 * e)] - direct).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn tucker_matches_kronecker_formula() {
        let c = random_tensor::<f64>(&[2, 2, 2], 30);
        let us: Vec<Matrix<f64>> = (0..3).map(|k| random_matrix::<f64>(4, 2, 31 + k)).collect();
        for i in 0..3 {
            let others: Vec<usize> = (0..3).filter(|&j| j != i).collect();
            // first remaining mode runs fastest, so it is the right Kronecker factor
            let k = kron(&us[others[1]], &us[others[0]]);
            let formula = &us[i] * c.matricize(i).unwrap() * k.transpose();
            let got = tucker_matricization(&c, &us, i).unwrap();
            assert!(fro_norm(&(got - &formula)) < 1e-13 * fro_norm(&formula));
        }
    }

    #[test]
    fn permute_against_enumeration() {
        let dims = [2usize, 3, 4];
        let a = random_tensor::<f64>(&dims, 40);
        let p = a.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.dims(), &[4, 2, 3]);
        for idx in enumerate(&dims) {
            assert_eq!(p.get(&[idx[2], idx[0], idx[1]]), a.get(&idx));
        }
        assert!(a.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn mode_gram_matches_matricized_product() {
        let a = random_tensor::<f64>(&[3, 2, 4], 50);
        let b = random_tensor::<f64>(&[5, 2, 4], 51);
        let g = DenseTensor::mode_gram(&a, &b, 0).unwrap();
        let r = a.matricize(0).unwrap().conjugate() * b.matricize(0).unwrap().transpose();
        assert!(fro_norm(&(g - r)) < 1e-13);
        let c = random_tensor::<f64>(&[3, 6, 4], 52);
        let g = DenseTensor::mode_gram(&a, &c, 1).unwrap();
        let r = a.matricize(1).unwrap().conjugate() * c.matricize(1).unwrap().transpose();
        assert!(fro_norm(&(g - r)) < 1e-13);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn round_trip_all_modes(dims in proptest::collection::vec(1usize..4, 1..5), seed in 0u64..1000) {
                let a = random_tensor::<f64>(&dims, seed);
                for i in 0..dims.len() {
                    let m = a.matricize(i).unwrap();
                    prop_assert_eq!(DenseTensor::tensorize(&m, i, &dims).unwrap(), a.clone());
                }
            }

            #[test]
            fn tucker_agrees_with_full_contraction(
                dims in proptest::collection::vec(1usize..3, 1..4),
                rows in proptest::collection::vec(1usize..4, 3),
                seed in 0u64..1000,
            ) {
                let c = random_tensor::<f64>(&dims, seed);
                let us: Vec<Matrix<f64>> = dims
                    .iter()
                    .enumerate()
                    .map(|(k, &n)| random_matrix::<f64>(rows[k], n, seed + 1 + k as u64))
                    .collect();
                for i in 0..dims.len() {
                    // independent oracle: explicit summation over all core indices
                    let out_dims: Vec<usize> = us.iter().map(|u| u.nrows()).collect();
                    let full = DenseTensor::from_fn(&out_dims, |o| {
                        let mut s = czero::<f64>();
                        for idx in enumerate(&dims) {
                            let mut w = c.get(&idx);
                            for (k, &j) in idx.iter().enumerate() {
                                w *= us[k][(o[k], j)];
                            }
                            s += w;
                        }
                        s
                    });
                    let want = full.matricize(i).unwrap();
                    let got = tucker_matricization(&c, &us, i).unwrap();
                    prop_assert!(fro_norm(&(got - &want)) <= 1e-12 * fro_norm(&want).max(1e-300));
                }
            }
        }
    }
}
