//! Transverse-field Ising chain, magnetization, product states and a dense
//! exact-diagonalization reference.

use std::io::Write;

use crate::error::{Result, TtnError};
use crate::integrator::step_count;
use crate::operator::{energy, label_dims, KroneckerSumOp};
use crate::scalar::{cr, Real, C};
use crate::tensor_core::{hermitian_eigh, matmul_ext, DenseTensor, Matrix, Op};
use crate::tree::Tree;
use crate::ttn::{Ttn, TtnNode};

/// Largest chain handled by the dense reference.
pub const MAX_REFERENCE_SITES: usize = 12;

pub fn pauli_x<T: Real>() -> Matrix<T> {
    Matrix::from_row_slice(2, 2, &[cr(0.0), cr(1.0), cr(1.0), cr(0.0)])
}

pub fn pauli_z<T: Real>() -> Matrix<T> {
    Matrix::from_row_slice(2, 2, &[cr(1.0), cr(0.0), cr(0.0), cr(-1.0)])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsingSpec {
    pub d: usize,
    pub omega: f64,
}

impl IsingSpec {
    pub fn new(d: usize, omega: f64) -> Result<Self> {
        let s = Self { d, omega };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(TtnError::Parse(format!("ising chain needs d >= 2, got {}", self.d)));
        }
        if !(self.omega.is_finite() && self.omega >= 0.0) {
            return Err(TtnError::Parse(format!("omega must be finite and >= 0, got {}", self.omega)));
        }
        Ok(())
    }

    /// A shift `lambda` with `H + lambda I` positive semidefinite:
    /// `|H|_2 <= omega d + (d - 1)`.
    pub fn psd_shift(&self) -> f64 {
        self.omega * self.d as f64 + (self.d as f64 - 1.0)
    }
}

/// `H = -omega sum_k sx^(k) - sum_k sz^(k) sz^(k+1)` on sites `1..=d`.
pub fn ising_hamiltonian<T: Real>(spec: &IsingSpec) -> Result<KroneckerSumOp<T>> {
    spec.validate()?;
    let mut h = KroneckerSumOp::new();
    for k in 1..=spec.d {
        h.push(cr(-spec.omega), vec![(k, pauli_x())])?;
    }
    for k in 1..spec.d {
        h.push(cr(-1.0), vec![(k, pauli_z()), (k + 1, pauli_z())])?;
    }
    Ok(h)
}

/// `(1/d) sum_k sz^(k)`.
pub fn magnetization_op<T: Real>(d: usize) -> Result<KroneckerSumOp<T>> {
    let mut m = KroneckerSumOp::new();
    for k in 1..=d {
        m.push(cr(1.0 / d as f64), vec![(k, pauli_z())])?;
    }
    Ok(m)
}

/// The product state with every spin up, rank one everywhere.
pub fn all_up_state<T: Real>(tree: &Tree) -> Result<Ttn<T>> {
    fn build<T: Real>(t: &Tree) -> Result<TtnNode<T>> {
        match t {
            Tree::Leaf { label, dim } => {
                if *dim != 2 {
                    return Err(TtnError::ShapeMismatch(format!("site {label} has dimension {dim}, expected 2")));
                }
                let mut u = Matrix::zeros(2, 1);
                u[(0, 0)] = cr(1.0);
                Ok(TtnNode::Leaf { label: *label, basis: u })
            }
            Tree::Node(ch) => {
                let mut core = DenseTensor::zeros(&vec![1; ch.len() + 1]);
                core.data_mut()[0] = cr(1.0);
                Ok(TtnNode::Node { core, children: ch.iter().map(build).collect::<Result<_>>()? })
            }
        }
    }
    tree.validate()?;
    Ttn::new_orthonormal(build(tree)?)
}

/// `(1/d) sum_k <x| sz^(k) |x> / <x|x>`.
pub fn magnetization<T: Real>(x: &Ttn<T>) -> Result<f64> {
    let d = x.tree().num_leaves();
    let m = magnetization_op::<T>(d)?;
    let n2 = x.norm().to_f64_lossy().powi(2);
    Ok(energy(&m, x)?.to_f64_lossy() / n2)
}

/// Dense `<psi| A |psi> / <psi|psi>` with modes in label order.
pub fn dense_expectation<T: Real>(op: &KroneckerSumOp<T>, tree: &Tree, psi: &DenseTensor<T>) -> Result<f64> {
    let a = op.apply_dense(tree, psi)?;
    let n2 = psi.norm().to_f64_lossy().powi(2);
    Ok(psi.inner(&a)?.re.to_f64_lossy() / n2)
}

/// Exact propagation `X_{k+1} = exp(-i h H) X_k` on the full space.
#[derive(Clone, Debug)]
pub struct ReferenceTrajectory<T: Real> {
    pub times: Vec<f64>,
    /// States with modes in site order.
    pub states: Vec<DenseTensor<T>>,
    pub norm: Vec<f64>,
    pub energy: Vec<f64>,
    pub magnetization: Vec<f64>,
}

/// Eigendecomposes `H` once and advances from 0 to `t_end` by unitary steps
/// of size `h`, each a phase multiplication in the eigenbasis.
pub fn exact_reference<T: Real>(
    spec: &IsingSpec,
    psi0: &DenseTensor<T>,
    h: f64,
    t_end: f64,
) -> Result<ReferenceTrajectory<T>> {
    spec.validate()?;
    let steps = step_count(0.0, t_end, h.abs())?;
    if spec.d > MAX_REFERENCE_SITES {
        return Err(TtnError::CapExceeded { size: 1 << spec.d, cap: 1 << MAX_REFERENCE_SITES });
    }
    let tree = Tree::tensor_train(2, spec.d)?;
    let (_, dims) = label_dims(&tree);
    if psi0.dims() != dims.as_slice() {
        return Err(TtnError::ShapeMismatch(format!("initial state dims {:?}, need {dims:?}", psi0.dims())));
    }
    let ham = ising_hamiltonian::<T>(spec)?;
    let hm = ham.dense_matrix(&tree)?;
    let (vals, vecs) = hermitian_eigh(&hm);
    let phase: Vec<C<T>> = vals
        .iter()
        .map(|&l| {
            let a = -(l.to_f64_lossy() * h);
            C::new(T::of(a.cos()), T::of(a.sin()))
        })
        .collect();
    let mop = magnetization_op::<T>(spec.d)?;
    let n = psi0.len();
    let mut coef = matmul_ext(&vecs, Op::H, &Matrix::from_column_slice(n, 1, psi0.data()), Op::N);
    let mut out = ReferenceTrajectory { times: vec![], states: vec![], norm: vec![], energy: vec![], magnetization: vec![] };
    for k in 0..=steps {
        if k > 0 {
            for (i, p) in phase.iter().enumerate() {
                coef[(i, 0)] *= *p;
            }
        }
        let v = &vecs * &coef;
        let psi = DenseTensor::new(dims.clone(), v.as_slice().to_vec())?;
        out.times.push(k as f64 * h);
        out.norm.push(psi.norm().to_f64_lossy());
        out.energy.push(dense_expectation(&ham, &tree, &psi)? * out.norm[k].powi(2));
        out.magnetization.push(dense_expectation(&mop, &tree, &psi)?);
        out.states.push(psi);
    }
    Ok(out)
}

impl<T: Real> ReferenceTrajectory<T> {
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "t,norm,energy,magnetization")?;
        for k in 0..self.times.len() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                self.times[k], self.norm[k], self.energy[k], self.magnetization[k]
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_core::kron;
    use crate::tree::TreeRank;
    use crate::ttn::DENSE_CAP;

    #[test]
    fn two_site_hamiltonians() {
        let tree = Tree::parse("(1,2)", 2).unwrap();
        let h = ising_hamiltonian::<f64>(&IsingSpec::new(2, 0.0).unwrap()).unwrap();
        let m = h.dense_matrix(&tree).unwrap();
        let diag = [-1.0, 1.0, 1.0, -1.0];
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { diag[i] } else { 0.0 };
                assert!((m[(i, j)] - cr::<f64>(want)).norm() < 1e-15);
            }
        }
        let h = ising_hamiltonian::<f64>(&IsingSpec::new(2, 1.0).unwrap()).unwrap();
        let (x, z, id) = (pauli_x::<f64>(), pauli_z::<f64>(), Matrix::<f64>::identity(2, 2));
        let want = -(kron(&id, &x) + kron(&x, &id)) - kron(&z, &z);
        let got = h.dense_matrix(&tree).unwrap();
        assert!((got - want).iter().all(|v| v.norm() < 1e-15));
        assert_eq!(ising_hamiltonian::<f64>(&IsingSpec::new(10, 1.0).unwrap()).unwrap().len(), 19);
    }

    #[test]
    fn spec_validation() {
        assert!(IsingSpec::new(1, 1.0).is_err());
        assert!(IsingSpec::new(3, -1.0).is_err());
        assert!(IsingSpec::new(3, f64::NAN).is_err());
    }

    #[test]
    fn hermitian_and_shift_is_psd() {
        for d in [2, 4, 6] {
            let spec = IsingSpec::new(d, 1.0).unwrap();
            let tree = Tree::tensor_train(2, d).unwrap();
            let h = ising_hamiltonian::<f64>(&spec).unwrap();
            assert!(h.is_self_adjoint(&tree, 0.0).unwrap());
            let (vals, _) = hermitian_eigh(&h.dense_matrix(&tree).unwrap());
            assert!(vals[0] + spec.psd_shift() >= -1e-12);
        }
    }

    #[test]
    fn all_up_properties() {
        for lit in ["(1,2)", "((1,2),(3,4))", "(1,(2,3))"] {
            let tree = Tree::parse(lit, 2).unwrap();
            let x = all_up_state::<f64>(&tree).unwrap();
            assert!((x.norm() - 1.0).abs() < 1e-15);
            assert!((magnetization(&x).unwrap() - 1.0).abs() < 1e-15);
            let d = tree.num_leaves();
            let e = energy(&ising_hamiltonian(&IsingSpec::new(d, 0.7).unwrap()).unwrap(), &x).unwrap();
            assert!((e + (d as f64 - 1.0)).abs() < 1e-14);
        }
        let tree = Tree::parse("(1,(2,3))", 2).unwrap();
        let v = all_up_state::<f64>(&tree).unwrap().to_full(DENSE_CAP).unwrap();
        assert_eq!(v.data()[0], cr(1.0));
        assert!(v.data()[1..].iter().all(|z| z.norm() == 0.0));
        assert!(all_up_state::<f64>(&Tree::parse("(1,2)", 3).unwrap()).is_err());
    }

    #[test]
    fn magnetization_matches_dense() {
        let tree = Tree::parse("(1,(2,3))", 2).unwrap();
        let x = Ttn::<f64>::random(&tree, &TreeRank::uniform(&tree, 2), 3).unwrap().scale(cr(2.0));
        let v = x.to_full(DENSE_CAP).unwrap();
        let want = dense_expectation(&magnetization_op(3).unwrap(), &tree, &v).unwrap();
        assert!((magnetization(&x).unwrap() - want).abs() < 1e-11);
    }

    #[test]
    fn reference_is_unitary_and_reversible() {
        let spec = IsingSpec::new(4, 1.0).unwrap();
        let tree = Tree::tensor_train(2, 4).unwrap();
        let psi0 = all_up_state::<f64>(&tree).unwrap().to_full(DENSE_CAP).unwrap();
        let traj = exact_reference(&spec, &psi0, 0.01, 5.0).unwrap();
        assert!(traj.norm.iter().all(|n| (n - 1.0).abs() < 1e-12));
        assert!(traj.energy.iter().all(|e| (e + 3.0).abs() < 1e-11));
        let one = exact_reference(&spec, &psi0, 0.37, 0.37).unwrap();
        let back = exact_reference(&spec, &one.states[1], -0.37, 0.37).unwrap();
        assert!(back.states[1].max_abs_diff(&psi0) < 1e-12);
    }

    #[test]
    fn reference_without_field_is_stationary() {
        let spec = IsingSpec::new(3, 0.0).unwrap();
        let tree = Tree::tensor_train(2, 3).unwrap();
        let x = Ttn::<f64>::random(&tree, &TreeRank::uniform(&tree, 2), 5).unwrap();
        let psi0 = x.to_full(DENSE_CAP).unwrap();
        let traj = exact_reference(&spec, &psi0, 0.1, 2.0).unwrap();
        for s in &traj.states {
            for (a, b) in s.data().iter().zip(psi0.data()) {
                assert!((a.norm() - b.norm()).abs() < 1e-12);
            }
        }
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 22);
    }
}
