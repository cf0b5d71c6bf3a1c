//! Rank-adaptive BUG integrator for Tucker tensors: the height-one case,
//! written directly in terms of bases and core. The right-hand side is
//! evaluated on dense tensors, so this is meant for moderate sizes.

use rayon::prelude::*;

use crate::error::{Result, TtnError};
use crate::integrator::{truncate, TruncationReport};
use crate::ode::{solve, OdeConfig};
use crate::operator::{DenseRhs, RhsKind};
use crate::scalar::{Real, C};
use crate::tensor_core::{hcat, matmul_ext, orthonormal_range, qr_thin, DenseTensor, Matrix, Op, RANGE_REL_TOL};
use crate::tree::Tree;
use crate::ttn::{Ttn, TtnNode};

/// `Y = C x_1 U_1 ... x_d U_d` in extended form: the core has dims
/// `(r_0, r_1, ..., r_d)` and `Y` has dims `(r_0, n_1, ..., n_d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TuckerState<T: Real> {
    pub core: DenseTensor<T>,
    pub bases: Vec<Matrix<T>>,
    pub labels: Vec<usize>,
}

impl<T: Real> TuckerState<T> {
    pub fn new(core: DenseTensor<T>, bases: Vec<Matrix<T>>, labels: Vec<usize>) -> Result<Self> {
        if core.order() != bases.len() + 1 || labels.len() != bases.len() {
            return Err(TtnError::ShapeMismatch(format!(
                "core of order {} with {} bases and {} labels",
                core.order(),
                bases.len(),
                labels.len()
            )));
        }
        for (k, u) in bases.iter().enumerate() {
            if u.ncols() != core.dims()[k + 1] {
                return Err(TtnError::ShapeMismatch(format!("basis {k} has {} columns", u.ncols())));
            }
        }
        Ok(Self { core, bases, labels })
    }

    /// A height-one tree tensor network viewed as a Tucker tensor.
    pub fn from_ttn(x: &Ttn<T>) -> Result<Self> {
        let TtnNode::Node { core, children } = x.root() else {
            return Err(TtnError::InvalidTree("expected an internal root".into()));
        };
        let mut bases = Vec::new();
        let mut labels = Vec::new();
        for c in children {
            match c {
                TtnNode::Leaf { label, basis } => {
                    bases.push(basis.clone());
                    labels.push(*label);
                }
                _ => return Err(TtnError::InvalidTree("Tucker format needs a tree of height 1".into())),
            }
        }
        Self::new(core.clone(), bases, labels)
    }

    pub fn to_ttn(&self) -> Result<Ttn<T>> {
        let children = self
            .labels
            .iter()
            .zip(&self.bases)
            .map(|(l, u)| TtnNode::Leaf { label: *l, basis: u.clone() })
            .collect();
        Ttn::new(TtnNode::Node { core: self.core.clone(), children })
    }

    pub fn tree(&self) -> Tree {
        Tree::Node(self.labels.iter().zip(&self.bases).map(|(l, u)| Tree::leaf(*l, u.nrows())).collect())
    }

    pub fn full(&self) -> Result<DenseTensor<T>> {
        self.core.mode_products(self.bases.iter().enumerate().map(|(k, u)| (k + 1, u)))
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.core.dims().to_vec()
    }
}

fn flat<T: Real>(dims: &[usize], y: &[C<T>]) -> Result<DenseTensor<T>> {
    DenseTensor::new(dims.to_vec(), y.to_vec())
}

/// `W = ten_i(Q^T) x_{j != i} U_j` and `S` with `mat_i(C)^T = Q S^T`.
fn k_frame<T: Real>(state: &TuckerState<T>, mode: usize) -> Result<(DenseTensor<T>, Matrix<T>)> {
    let (q, r) = qr_thin(&state.core.matricize(mode)?.transpose());
    let mut dims = state.core.dims().to_vec();
    dims[mode] = q.ncols();
    let mut w = DenseTensor::tensorize(&q.transpose(), mode, &dims)?;
    for (k, u) in state.bases.iter().enumerate() {
        if k + 1 != mode {
            w = w.mode_product(k + 1, u)?;
        }
    }
    Ok((w, r.transpose()))
}

/// Solves `K' = mat_i(F(t, ten_i(K mat_i(W)))) conj(mat_i(W))^T` from `K0`.
fn k_flow<T: Real>(
    w: &DenseTensor<T>,
    mode: usize,
    k0: &Matrix<T>,
    f: &DenseRhs<T>,
    t0: f64,
    t1: f64,
    ode: &OdeConfig,
) -> Result<Matrix<T>> {
    let (n, r) = k0.shape();
    let k1 = solve(
        |t, k| {
            let km = Matrix::from_column_slice(n, r, k);
            let y = w.mode_product(mode, &km)?;
            let fy = f(t, &y)?;
            Ok(DenseTensor::mode_gram(w, &fy, mode)?.transpose().as_slice().to_vec())
        },
        k0.as_slice(),
        t0,
        t1,
        ode,
    )?;
    Ok(Matrix::from_column_slice(n, r, &k1))
}

/// Basis update and augmentation for mode `i` (0-based over the bases).
pub fn phi_basis<T: Real>(
    state: &TuckerState<T>,
    i: usize,
    f: &DenseRhs<T>,
    t0: f64,
    t1: f64,
    ode: &OdeConfig,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let u0 = &state.bases[i];
    let (w, s) = k_frame(state, i + 1)?;
    let k0 = matmul_ext(u0, Op::N, &s, Op::N);
    let k1 = k_flow(&w, i + 1, &k0, f, t0, t1, ode)?;
    let u = orthonormal_range(&hcat(&k1, u0), T::of(RANGE_REL_TOL));
    let m = matmul_ext(&u, Op::H, u0, Op::N);
    Ok((u, m))
}

/// Galerkin core update in the augmented bases; returns `(C_hat^1, C_hat^0)`.
pub fn psi_core<T: Real>(
    c0: &DenseTensor<T>,
    u_hats: &[Matrix<T>],
    m_hats: &[Matrix<T>],
    f: &DenseRhs<T>,
    t0: f64,
    t1: f64,
    ode: &OdeConfig,
) -> Result<(DenseTensor<T>, DenseTensor<T>)> {
    if u_hats.len() != m_hats.len() || c0.order() != u_hats.len() + 1 {
        return Err(TtnError::ShapeMismatch("core and augmented bases do not conform".into()));
    }
    let ch0 = c0.mode_products(m_hats.iter().enumerate().map(|(k, m)| (k + 1, m)))?;
    let dims = ch0.dims().to_vec();
    let uh: Vec<Matrix<T>> = u_hats.iter().map(|u| u.adjoint()).collect();
    let c1 = solve(
        |t, c| {
            let y = flat(&dims, c)?.mode_products(u_hats.iter().enumerate().map(|(k, u)| (k + 1, u)))?;
            let fy = f(t, &y)?;
            Ok(fy.mode_products(uh.iter().enumerate().map(|(k, u)| (k + 1, u)))?.into_data())
        },
        ch0.data(),
        t0,
        t1,
        ode,
    )?;
    Ok((flat(&dims, &c1)?, ch0))
}

/// The subflow for the extra mode 0 of the extended form. Its augmented
/// basis spans the whole of `C^{r_0}`, so it is returned as `(I, I)`; the
/// check that `(K_0(t1), I)` has rank `r_0` is done explicitly.
pub fn phi_zero_is_trivial<T: Real>(
    state: &TuckerState<T>,
    f: &DenseRhs<T>,
    t0: f64,
    t1: f64,
    ode: &OdeConfig,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let r0 = state.core.dims()[0];
    let (q, s) = qr_thin(&state.core.matricize(0)?.transpose());
    let mut dims = state.core.dims().to_vec();
    dims[0] = q.ncols();
    let mut w = DenseTensor::tensorize(&q.transpose(), 0, &dims)?;
    for (k, u) in state.bases.iter().enumerate() {
        w = w.mode_product(k + 1, u)?;
    }
    let k1 = k_flow(&w, 0, &s.transpose(), f, t0, t1, ode)?;
    let id = Matrix::<T>::identity(r0, r0);
    let range = orthonormal_range(&hcat(&k1, &id), T::of(RANGE_REL_TOL));
    if range.ncols() != r0 {
        return Err(TtnError::IncompatibleRanks(format!("mode-0 range has rank {} < {r0}", range.ncols())));
    }
    Ok((id.clone(), id))
}

/// Augmented Tucker step without truncation: `(Y_hat^1, C_hat^0)`.
pub fn tucker_augment<T: Real>(
    state: &TuckerState<T>,
    rhs: &RhsKind<T>,
    t0: f64,
    t1: f64,
    ode: &OdeConfig,
) -> Result<(TuckerState<T>, DenseTensor<T>)> {
    let f = rhs.root_dense(&state.tree());
    let pairs = (0..state.bases.len())
        .into_par_iter()
        .map(|i| phi_basis(state, i, &f, t0, t1, ode))
        .collect::<Result<Vec<_>>>()?;
    let (u_hats, m_hats): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let (c1, c0) = psi_core(&state.core, &u_hats, &m_hats, &f, t0, t1, ode)?;
    Ok((TuckerState::new(c1, u_hats, state.labels.clone())?, c0))
}

/// One rank-adaptive step; truncation runs through the tree truncation
/// engine on the equivalent height-one network.
pub fn tucker_step<T: Real>(
    state: &TuckerState<T>,
    rhs: &RhsKind<T>,
    t0: f64,
    t1: f64,
    theta: f64,
    ode: &OdeConfig,
) -> Result<(TuckerState<T>, TruncationReport)> {
    if state.core.dims()[0] != 1 {
        return Err(TtnError::IncompatibleRanks("truncation needs r_0 = 1".into()));
    }
    let (aug, _) = tucker_augment(state, rhs, t0, t1, ode)?;
    let x = Ttn::assume_orthonormal(aug.to_ttn()?.into_root())?;
    let (y, rep) = truncate(&x, theta, 0, false)?;
    Ok((TuckerState::from_ttn(&y)?, rep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cr;
    use crate::tensor_core::random::{random_matrix, random_tensor};
    use crate::tree::TreeRank;
    use crate::ttn::DENSE_CAP;
    use std::sync::Arc;

    fn state(seed: u64) -> TuckerState<f64> {
        let tree = Tree::parse("(1,2,3)", 3).unwrap();
        let x = Ttn::<f64>::random(&tree, &TreeRank::uniform(&tree, 2), seed).unwrap();
        TuckerState::from_ttn(&x).unwrap()
    }

    fn zero() -> DenseRhs<f64> {
        Arc::new(|_, y: &DenseTensor<f64>| Ok(DenseTensor::zeros(y.dims())))
    }

    #[test]
    fn zero_field_keeps_span() {
        let s = state(1);
        let ode = OdeConfig::default();
        for i in 0..3 {
            let (u, m) = phi_basis(&s, i, &zero(), 0.0, 0.1, &ode).unwrap();
            assert_eq!(u.ncols(), 2);
            let mm = matmul_ext(&m, Op::N, &m, Op::H);
            assert!((mm - Matrix::<f64>::identity(2, 2)).iter().all(|z| z.norm() < 1e-12));
        }
        let (aug, c0) = tucker_augment(&s, &RhsKind::Zero, 0.0, 0.1, &ode).unwrap();
        assert!(aug.core.max_abs_diff(&c0) < 1e-15);
        assert!(aug.full().unwrap().max_abs_diff(&s.full().unwrap()) < 1e-12);
    }

    #[test]
    fn range_contains_old_basis() {
        let s = state(2);
        let a = random_matrix::<f64>(3, 3, 9);
        let mut h = crate::operator::KroneckerSumOp::new();
        h.push(cr(1.0), vec![(2, &a + a.adjoint())]).unwrap();
        h.push(cr(0.5), vec![(1, &a + a.adjoint()), (3, &a + a.adjoint())]).unwrap();
        let f = RhsKind::Schrodinger(h).root_dense(&s.tree());
        for i in 0..3 {
            let (u, _) = phi_basis(&s, i, &f, 0.0, 0.1, &OdeConfig::default()).unwrap();
            let u0 = &s.bases[i];
            let res = u0 - &u * matmul_ext(&u, Op::H, u0, Op::N);
            assert!(res.iter().all(|z| z.norm() < 1e-11));
            assert!(u.ncols() <= 2 * u0.ncols());
        }
    }

    #[test]
    fn mode_zero_subflow_is_trivial() {
        let mut core = random_tensor::<f64>(&[2, 2, 2], 4);
        let (q, _) = qr_thin(&core.matricize(0).unwrap().transpose());
        core = DenseTensor::tensorize(&q.transpose(), 0, &[2, 2, 2]).unwrap();
        let s = TuckerState::new(core, vec![random_matrix(3, 2, 1).qr().q(), random_matrix(3, 2, 2).qr().q()], vec![1, 2])
            .unwrap();
        let f: DenseRhs<f64> = Arc::new(|_, y: &DenseTensor<f64>| Ok(y.scale(C::new(0.0, -1.0))));
        let (u, m) = phi_zero_is_trivial(&s, &f, 0.0, 0.1, &OdeConfig::default()).unwrap();
        assert_eq!(u, Matrix::identity(2, 2));
        assert_eq!(m, Matrix::identity(2, 2));
        let s1 = TuckerState::new(random_tensor(&[1, 2], 3), vec![random_matrix(2, 2, 5).qr().q()], vec![1]).unwrap();
        let (u, _) = phi_zero_is_trivial(&s1, &zero(), 0.0, 0.1, &OdeConfig::default()).unwrap();
        assert_eq!(u.shape(), (1, 1));
    }

    #[test]
    fn zero_field_step_reproduces() {
        let s = state(5);
        let (y, rep) = tucker_step(&s, &RhsKind::Zero, 0.0, 0.1, 1e-10, &OdeConfig::default()).unwrap();
        assert!(y.full().unwrap().max_abs_diff(&s.full().unwrap()) < 1e-11);
        assert!(rep.certified());
        let t = s.to_ttn().unwrap().to_full(DENSE_CAP).unwrap();
        assert_eq!(t.len(), 27);
    }
}
