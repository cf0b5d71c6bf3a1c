//! Linear operators as sums of Kronecker products of single-site matrices,
//! right-hand side kinds, and the reduced operators living on subtrees.
//!
//! A reduced operator on a subtree `tau` acts on tensors of dims
//! `(r_tau, n_l ...)` as
//!
//! ```text
//! F_tau(Z) = Z x_0 E_out + sum_{p inside tau} c_p Z x_l B_p^l
//!          + sum_{p straddling tau} Z x_0 E_p x_{l in tau} B_p^l
//! ```
//!
//! where `E_out` collects every term with no site in `tau` and `E_p` is the
//! environment of a term with sites both inside and outside `tau` (its
//! coefficient is folded into `E_p`). Terms entirely inside `tau` have the
//! identity as environment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::error::{Result, TtnError};
use crate::scalar::{ci, cr, czero, Real, C};
use crate::tensor_core::{matmul_ext, DenseTensor, Matrix, Op};
use crate::tree::Tree;
use crate::ttn::{Ttn, TtnNode, DENSE_CAP};

/// One term `coeff * (B_1 (x) ... (x) B_d)` with identities on absent sites.
#[derive(Clone, Debug, PartialEq)]
pub struct KronTerm<T: Real> {
    pub coeff: C<T>,
    /// Site matrices keyed by leaf label, sorted, labels unique.
    pub sites: Vec<(usize, Matrix<T>)>,
}

impl<T: Real> KronTerm<T> {
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.sites.iter().map(|(l, _)| *l)
    }

    pub fn site(&self, label: usize) -> Option<&Matrix<T>> {
        self.sites.iter().find(|(l, _)| *l == label).map(|(_, m)| m)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KroneckerSumOp<T: Real> {
    terms: Vec<KronTerm<T>>,
}

impl<T: Real> KroneckerSumOp<T> {
    pub fn new() -> Self {
        Self { terms: Vec::new() }
    }

    /// Adds a term. An empty site list is a multiple of the identity.
    pub fn push(&mut self, coeff: C<T>, sites: Vec<(usize, Matrix<T>)>) -> Result<()> {
        let mut sites = sites;
        sites.sort_by_key(|(l, _)| *l);
        for w in sites.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(TtnError::Operator(format!("site {} repeated in one term", w[0].0)));
            }
        }
        for (l, m) in &sites {
            if m.nrows() != m.ncols() || m.nrows() == 0 {
                return Err(TtnError::Operator(format!(
                    "site {l}: matrix {}x{} is not square",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        self.terms.push(KronTerm { coeff, sites });
        Ok(())
    }

    pub fn with_term(mut self, coeff: C<T>, sites: Vec<(usize, Matrix<T>)>) -> Result<Self> {
        self.push(coeff, sites)?;
        Ok(self)
    }

    pub fn terms(&self) -> &[KronTerm<T>] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Same operator with all coefficients multiplied by `s`.
    pub fn scaled(&self, s: C<T>) -> Self {
        Self {
            terms: self.terms.iter().map(|t| KronTerm { coeff: t.coeff * s, sites: t.sites.clone() }).collect(),
        }
    }

    /// Adds `s * I` as an extra term.
    pub fn shifted(&self, s: C<T>) -> Self {
        let mut out = self.clone();
        out.terms.push(KronTerm { coeff: s, sites: Vec::new() });
        out
    }

    /// Checks that every site exists in `tree` with matching dimension.
    pub fn validate(&self, tree: &Tree) -> Result<()> {
        let dims: BTreeMap<usize, usize> = tree.leaves().into_iter().zip(tree.leaf_dims()).collect();
        for (p, t) in self.terms.iter().enumerate() {
            for (l, m) in &t.sites {
                match dims.get(l) {
                    None => return Err(TtnError::Operator(format!("term {p}: site {l} is not a leaf of the tree"))),
                    Some(&n) if n != m.nrows() => {
                        return Err(TtnError::Operator(format!(
                            "term {p}: site {l} has dimension {n} but matrix is {}x{}",
                            m.nrows(),
                            m.ncols()
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// `H psi` for a dense tensor whose modes follow increasing leaf label.
    pub fn apply_dense(&self, tree: &Tree, psi: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        self.validate(tree)?;
        if psi.len() > DENSE_CAP {
            return Err(TtnError::CapExceeded { size: psi.len(), cap: DENSE_CAP });
        }
        let (labels, dims) = label_dims(tree);
        if psi.dims() != dims.as_slice() {
            return Err(TtnError::ShapeMismatch(format!("state dims {:?}, tree needs {dims:?}", psi.dims())));
        }
        let mut out = DenseTensor::zeros(psi.dims());
        for t in &self.terms {
            let mut y = psi.clone();
            for (l, m) in &t.sites {
                let k = labels.binary_search(l).expect("validated");
                y = y.mode_product(k, m)?;
            }
            out.axpy(t.coeff, &y)?;
        }
        Ok(out)
    }

    /// Dense matrix on the column-major vectorization (first label fastest).
    pub fn dense_matrix(&self, tree: &Tree) -> Result<Matrix<T>> {
        let (_, dims) = label_dims(tree);
        let n: usize = dims.iter().product();
        if n * n > DENSE_CAP * 16 {
            return Err(TtnError::CapExceeded { size: n * n, cap: DENSE_CAP * 16 });
        }
        let mut m = Matrix::zeros(n, n);
        for j in 0..n {
            let mut e = DenseTensor::zeros(&dims);
            e.data_mut()[j] = cr(1.0);
            let col = self.apply_dense(tree, &e)?;
            for (i, v) in col.data().iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }

    /// Dense self-adjointness check, for small trees only.
    pub fn is_self_adjoint(&self, tree: &Tree, tol: f64) -> Result<bool> {
        let m = self.dense_matrix(tree)?;
        let d = &m - m.adjoint();
        Ok(d.iter().all(|z| crate::scalar::cabs(*z) <= T::of(tol)))
    }
}

/// Leaf labels in increasing order with their dimensions.
pub fn label_dims(tree: &Tree) -> (Vec<usize>, Vec<usize>) {
    let mut pairs: Vec<(usize, usize)> = tree.leaves().into_iter().zip(tree.leaf_dims()).collect();
    pairs.sort_unstable();
    pairs.into_iter().unzip()
}

/// Time-dependent dense right-hand side used by the explicit hook. The
/// tensor argument has dims `(r, N_1, ..., N_m)` at whatever level the
/// function lives; at the root `r = 1`.
pub type DenseRhs<T> = Arc<dyn Fn(f64, &DenseTensor<T>) -> Result<DenseTensor<T>> + Send + Sync>;

/// A site label with the matrix acting on it.
pub type Factor<T> = (usize, Matrix<T>);

/// The right-hand side `F(t, Y)` of the tensor differential equation.
#[derive(Clone)]
pub enum RhsKind<T: Real> {
    /// `F = -i H[Y]`.
    Schrodinger(KroneckerSumOp<T>),
    /// `F = -2 H[Y]`, the gradient flow of `<Y, H[Y]>`.
    Gradient(KroneckerSumOp<T>),
    /// Given function of `(t, Y)` on dense tensors with modes in increasing
    /// leaf-label order.
    Explicit(DenseRhs<T>),
    Zero,
}

impl<T: Real> fmt::Debug for RhsKind<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RhsKind::Schrodinger(h) => write!(f, "Schrodinger({} terms)", h.len()),
            RhsKind::Gradient(h) => write!(f, "Gradient({} terms)", h.len()),
            RhsKind::Explicit(_) => f.write_str("Explicit"),
            RhsKind::Zero => f.write_str("Zero"),
        }
    }
}

impl<T: Real> RhsKind<T> {
    /// The linear operator `L` with `F(Y) = L[Y]`, if `F` is of that form.
    pub fn linear_op(&self) -> Option<KroneckerSumOp<T>> {
        match self {
            RhsKind::Schrodinger(h) => Some(h.scaled(-ci::<T>())),
            RhsKind::Gradient(h) => Some(h.scaled(cr(-2.0))),
            RhsKind::Zero => Some(KroneckerSumOp::new()),
            RhsKind::Explicit(_) => None,
        }
    }

    /// The Hamiltonian whose expectation is conserved or dissipated.
    pub fn hamiltonian(&self) -> Option<&KroneckerSumOp<T>> {
        match self {
            RhsKind::Schrodinger(h) | RhsKind::Gradient(h) => Some(h),
            _ => None,
        }
    }

    pub fn validate(&self, tree: &Tree) -> Result<()> {
        match self {
            RhsKind::Schrodinger(h) | RhsKind::Gradient(h) => h.validate(tree),
            _ => Ok(()),
        }
    }

    /// `F(t, psi)` for a dense tensor with modes in increasing label order.
    pub fn eval_dense(&self, tree: &Tree, t: f64, psi: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        match self {
            RhsKind::Explicit(f) => f(t, psi),
            _ => self.linear_op().expect("linear").apply_dense(tree, psi),
        }
    }

    /// The same right-hand side as a dense function of `(1, N_1, ..., N_m)`
    /// tensors with leaves in depth-first order of `tree`.
    pub fn root_dense(&self, tree: &Tree) -> DenseRhs<T> {
        let tree = tree.clone();
        let leaves = tree.leaves();
        let dfs_dims = tree.leaf_dims();
        // perm takes depth-first order to label order
        let mut to_label: Vec<usize> = (0..leaves.len()).collect();
        to_label.sort_by_key(|&k| leaves[k]);
        let mut to_dfs = vec![0; leaves.len()];
        for (j, &k) in to_label.iter().enumerate() {
            to_dfs[k] = j;
        }
        let this = self.clone();
        Arc::new(move |t, y: &DenseTensor<T>| {
            let in_dims = y.dims().to_vec();
            let x = y.clone().reshape(&dfs_dims)?.permute(&to_label)?;
            let fx = this.eval_dense(&tree, t, &x)?;
            fx.permute(&to_dfs)?.reshape(&in_dims)
        })
    }
}

/// Position of a term relative to a set of leaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rel {
    /// No site in the set (includes multiples of the identity).
    Outside,
    /// Nonempty support contained in the set.
    Inside,
    /// Sites both in and out of the set.
    Straddle,
}

pub fn relation<T: Real>(term: &KronTerm<T>, leaves: &BTreeSet<usize>) -> Rel {
    let (mut inn, mut out) = (false, false);
    for l in term.support() {
        if leaves.contains(&l) {
            inn = true;
        } else {
            out = true;
        }
    }
    match (inn, out) {
        (false, _) => Rel::Outside,
        (true, false) => Rel::Inside,
        (true, true) => Rel::Straddle,
    }
}

fn leafset<T: Real>(node: &TtnNode<T>) -> BTreeSet<usize> {
    match node {
        TtnNode::Leaf { label, .. } => BTreeSet::from([*label]),
        TtnNode::Node { children, .. } => children.iter().flat_map(leafset).collect(),
    }
}

/// Linear operator on a connection tensor given as a sum of mode products:
/// `A -> sum_k A x_k S_k + sum_j c_j A x_{k in j} M_{j,k}`.
#[derive(Clone, Debug, Default)]
pub struct LocalOp<T: Real> {
    pub single: Vec<Option<Matrix<T>>>,
    pub cross: Vec<(C<T>, Vec<Factor<T>>)>,
}

impl<T: Real> LocalOp<T> {
    pub fn new(order: usize) -> Self {
        Self { single: vec![None; order], cross: Vec::new() }
    }

    pub fn add_single(&mut self, k: usize, m: Matrix<T>) {
        match &mut self.single[k] {
            Some(s) => *s += m,
            slot => *slot = Some(m),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.single.iter().all(Option::is_none) && self.cross.is_empty()
    }

    pub fn apply(&self, a: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        if a.order() != self.single.len() {
            return Err(TtnError::ShapeMismatch(format!(
                "local operator of order {} applied to order {}",
                self.single.len(),
                a.order()
            )));
        }
        let mut out = DenseTensor::zeros(a.dims());
        let one = cr::<T>(1.0);
        for (k, m) in self.single.iter().enumerate() {
            if let Some(m) = m {
                out.axpy(one, &a.mode_product(k, m)?)?;
            }
        }
        for (c, mats) in &self.cross {
            let y = a.mode_products(mats.iter().map(|(k, m)| (*k, m)))?;
            out.axpy(*c, &y)?;
        }
        Ok(out)
    }

    /// `conj(mat_q(A)) mat_q(L(A))^T`.
    pub fn project(&self, a: &DenseTensor<T>, q: usize) -> Result<Matrix<T>> {
        DenseTensor::mode_gram(a, &self.apply(a)?, q)
    }
}

/// Projected operator blocks of a sub-network: `U^* A U` summed over the
/// terms inside it, and one block per term that also acts outside it.
#[derive(Clone, Debug)]
pub struct EnvBundle<T: Real> {
    pub leaves: BTreeSet<usize>,
    pub rank: usize,
    /// Sum of `c_p U^* B_p U` over terms inside; `None` if there are none.
    pub inside: Option<Matrix<T>>,
    /// `U^* B_p|_inside U` (no coefficient) for straddling terms `p`.
    pub partial: BTreeMap<usize, Matrix<T>>,
}

/// Bundles for a whole sub-network, mirroring its shape.
#[derive(Clone, Debug)]
pub struct BundleTree<T: Real> {
    pub bundle: EnvBundle<T>,
    pub children: Vec<BundleTree<T>>,
}

impl<T: Real> EnvBundle<T> {
    pub fn leaf(op: &KroneckerSumOp<T>, label: usize, basis: &Matrix<T>) -> Self {
        let leaves = BTreeSet::from([label]);
        let mut inside: Option<Matrix<T>> = None;
        let mut partial = BTreeMap::new();
        for (p, t) in op.terms().iter().enumerate() {
            let Some(b) = t.site(label) else { continue };
            let blk = matmul_ext(basis, Op::H, &(b * basis), Op::N);
            match relation(t, &leaves) {
                Rel::Inside => {
                    let blk = blk * t.coeff;
                    inside = Some(match inside {
                        Some(s) => s + blk,
                        None => blk,
                    });
                }
                Rel::Straddle => {
                    partial.insert(p, blk);
                }
                Rel::Outside => {}
            }
        }
        Self { leaves, rank: basis.ncols(), inside, partial }
    }

    /// Bundle of a node with orthonormal children, from the children's
    /// bundles and its connection tensor.
    pub fn node(op: &KroneckerSumOp<T>, core: &DenseTensor<T>, kids: &[&EnvBundle<T>]) -> Result<Self> {
        let leaves: BTreeSet<usize> = kids.iter().flat_map(|b| b.leaves.iter().copied()).collect();
        let m = kids.len();
        let mut lin = LocalOp::new(m + 1);
        for (k, b) in kids.iter().enumerate() {
            if let Some(s) = &b.inside {
                lin.add_single(k + 1, s.clone());
            }
        }
        let mut partial = BTreeMap::new();
        for (p, t) in op.terms().iter().enumerate() {
            let rel = relation(t, &leaves);
            if rel == Rel::Outside {
                continue;
            }
            let touched: Vec<(usize, Matrix<T>)> = kids
                .iter()
                .enumerate()
                .filter_map(|(k, b)| b.partial.get(&p).map(|blk| (k + 1, blk.clone())))
                .collect();
            match rel {
                Rel::Inside if !touched.is_empty() => lin.cross.push((t.coeff, touched)),
                Rel::Straddle => {
                    let lp = LocalOp { single: vec![None; m + 1], cross: vec![(cr(1.0), touched)] };
                    partial.insert(p, lp.project(core, 0)?);
                }
                _ => {}
            }
        }
        let inside = if lin.is_zero() { None } else { Some(lin.project(core, 0)?) };
        Ok(Self { leaves, rank: core.dims()[0], inside, partial })
    }
}

impl<T: Real> BundleTree<T> {
    /// Builds bundles bottom-up for a sub-network with orthonormal factors
    /// below the top node.
    pub fn build(op: &KroneckerSumOp<T>, node: &TtnNode<T>) -> Result<Self> {
        match node {
            TtnNode::Leaf { label, basis } => {
                Ok(Self { bundle: EnvBundle::leaf(op, *label, basis), children: Vec::new() })
            }
            TtnNode::Node { core, children } => {
                let kids = children.iter().map(|c| Self::build(op, c)).collect::<Result<Vec<_>>>()?;
                let refs: Vec<&EnvBundle<T>> = kids.iter().map(|k| &k.bundle).collect();
                Ok(Self { bundle: EnvBundle::node(op, core, &refs)?, children: kids })
            }
        }
    }
}

/// A reduced linear operator on a subtree (see the module docs).
#[derive(Clone, Debug)]
pub struct ReducedOp<T: Real> {
    pub leaves: BTreeSet<usize>,
    pub env_out: Option<Matrix<T>>,
    /// `(term index, E_p)` for straddling terms, coefficient included.
    pub straddling: Vec<(usize, Matrix<T>)>,
}

impl<T: Real> ReducedOp<T> {
    /// The operator itself at the root of `tree`.
    pub fn root(op: &KroneckerSumOp<T>, tree: &Tree) -> Self {
        let leaves: BTreeSet<usize> = tree.leaves().into_iter().collect();
        let mut env: Option<Matrix<T>> = None;
        for t in op.terms() {
            if relation(t, &leaves) == Rel::Outside {
                let e = Matrix::from_element(1, 1, t.coeff);
                env = Some(match env {
                    Some(s) => s + e,
                    None => e,
                });
            }
        }
        Self { leaves, env_out: env, straddling: Vec::new() }
    }

    fn env_of(&self, p: usize) -> Option<&Matrix<T>> {
        self.straddling.iter().find(|(q, _)| *q == p).map(|(_, e)| e)
    }

    /// Reduction to child `i` of the node carrying this operator.
    ///
    /// `qt` is `ten_i(Q^T)` from the QR of `mat_i(C^0)^T`, and `kids` are the
    /// bundles of the node's current (orthonormal) children; the one at `i`
    /// is used only for its leaf set.
    pub fn reduce(&self, op: &KroneckerSumOp<T>, qt: &DenseTensor<T>, i: usize, kids: &[&EnvBundle<T>]) -> Result<Self> {
        let m = kids.len();
        let target = &kids[i].leaves;
        let mode = i + 1;
        let mut out_op = LocalOp::new(m + 1);
        if let Some(e) = &self.env_out {
            out_op.add_single(0, e.clone());
        }
        for (j, b) in kids.iter().enumerate() {
            if j != i {
                if let Some(s) = &b.inside {
                    out_op.add_single(j + 1, s.clone());
                }
            }
        }
        let mut straddling = Vec::new();
        for (p, t) in op.terms().iter().enumerate() {
            let rel_parent = relation(t, &self.leaves);
            if rel_parent == Rel::Outside {
                continue;
            }
            let rel_child = relation(t, target);
            if rel_child == Rel::Inside {
                continue;
            }
            let sib: Vec<(usize, Matrix<T>)> = kids
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .filter_map(|(j, b)| b.partial.get(&p).map(|blk| (j + 1, blk.clone())))
                .collect();
            let (coeff, mats) = match rel_parent {
                Rel::Inside => {
                    if sib.is_empty() {
                        // entirely inside one sibling: already in its inside block
                        continue;
                    }
                    (t.coeff, sib)
                }
                Rel::Straddle => {
                    let e = self.env_of(p).ok_or_else(|| {
                        TtnError::Operator(format!("missing environment of straddling term {p}"))
                    })?;
                    let mut v = vec![(0, e.clone())];
                    v.extend(sib);
                    (cr(1.0), v)
                }
                Rel::Outside => unreachable!(),
            };
            if rel_child == Rel::Outside {
                out_op.cross.push((coeff, mats));
            } else {
                let lp = LocalOp { single: vec![None; m + 1], cross: vec![(coeff, mats)] };
                straddling.push((p, lp.project(qt, mode)?));
            }
        }
        let env_out = if out_op.is_zero() { None } else { Some(out_op.project(qt, mode)?) };
        Ok(Self { leaves: target.clone(), env_out, straddling })
    }

    /// Galerkin operator on the connection tensor of a node whose children
    /// have the given (new, orthonormal) bundles.
    pub fn galerkin(&self, op: &KroneckerSumOp<T>, kids: &[&EnvBundle<T>]) -> LocalOp<T> {
        let m = kids.len();
        let mut l = LocalOp::new(m + 1);
        if let Some(e) = &self.env_out {
            l.add_single(0, e.clone());
        }
        for (k, b) in kids.iter().enumerate() {
            if let Some(s) = &b.inside {
                l.add_single(k + 1, s.clone());
            }
        }
        let touched = |p: usize| -> Vec<(usize, Matrix<T>)> {
            kids.iter()
                .enumerate()
                .filter_map(|(k, b)| b.partial.get(&p).map(|blk| (k + 1, blk.clone())))
                .collect()
        };
        for (p, t) in op.terms().iter().enumerate() {
            if relation(t, &self.leaves) == Rel::Inside {
                let v = touched(p);
                if !v.is_empty() {
                    l.cross.push((t.coeff, v));
                }
            }
        }
        for (p, e) in &self.straddling {
            let mut v = vec![(0, e.clone())];
            v.extend(touched(*p));
            l.cross.push((cr(1.0), v));
        }
        l
    }

    /// Operator of the leaf ODE: acts on `(r, n)` tensors.
    pub fn leaf_op(&self, op: &KroneckerSumOp<T>, label: usize, n: usize) -> LocalOp<T> {
        let id = Matrix::<T>::identity(n, n);
        let b = EnvBundle::leaf(op, label, &id);
        self.galerkin(op, &[&b])
    }

    /// Dense application to `Z` of dims `(r, n_l ...)` with leaves in the
    /// order `labels`.
    pub fn apply_dense(&self, op: &KroneckerSumOp<T>, labels: &[usize], z: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        let pos = |l: usize| labels.iter().position(|&x| x == l).map(|k| k + 1);
        let mut out = DenseTensor::zeros(z.dims());
        if let Some(e) = &self.env_out {
            out.axpy(cr(1.0), &z.mode_product(0, e)?)?;
        }
        for (p, t) in op.terms().iter().enumerate() {
            let env = match relation(t, &self.leaves) {
                Rel::Inside => None,
                Rel::Straddle => match self.env_of(p) {
                    Some(e) => Some(e),
                    None => continue,
                },
                Rel::Outside => continue,
            };
            let mut y = match env {
                Some(e) => z.mode_product(0, e)?,
                None => z.clone(),
            };
            for (l, b) in &t.sites {
                if let Some(k) = pos(*l) {
                    y = y.mode_product(k, b)?;
                }
            }
            let c = if env.is_some() { cr(1.0) } else { t.coeff };
            out.axpy(c, &y)?;
        }
        Ok(out)
    }
}

/// Dense prolongation and restriction between a node and its child `i`,
/// relative to the node's starting value. Only for moderate sizes.
#[derive(Clone, Debug)]
pub struct Prolongation<T: Real> {
    /// `Qt x_{j != i} U_j`, dims `(r_tau, N_1, .., r_i, .., N_m)`.
    w: DenseTensor<T>,
    mode: usize,
}

impl<T: Real> Prolongation<T> {
    /// `qt` = `ten_i(Q^T)`, `children` = the node's current sub-networks.
    pub fn new(qt: &DenseTensor<T>, children: &[TtnNode<T>], i: usize) -> Result<Self> {
        let mut size = qt.dims()[0] * qt.dims()[i + 1];
        let mut w = qt.clone();
        for (j, c) in children.iter().enumerate() {
            if j == i {
                continue;
            }
            let u = c.dense_basis()?;
            size *= u.nrows();
            if size > DENSE_CAP {
                return Err(TtnError::CapExceeded { size, cap: DENSE_CAP });
            }
            w = w.mode_product(j + 1, &u)?;
        }
        Ok(Self { w, mode: i + 1 })
    }

    /// Tensor dims of the node's space, grouped per child.
    pub fn parent_dims(&self, child_size: usize) -> Vec<usize> {
        let mut d = self.w.dims().to_vec();
        d[self.mode] = child_size;
        d
    }

    /// `pi(Z)`, for `Z` with `mat_0(Z)` of shape `r_i x N_i`.
    pub fn prolong(&self, z: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        let zm = z.matricize(0)?;
        self.w.mode_product(self.mode, &zm.transpose())
    }

    /// `pi^dagger(W)` as a `(r_i, N_i)` tensor.
    pub fn restrict(&self, x: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        let mut dims = self.w.dims().to_vec();
        dims.remove(self.mode);
        let ok = x.order() == self.w.order()
            && x.dims().iter().enumerate().all(|(k, &n)| k == self.mode || n == self.w.dims()[k]);
        if !ok {
            return Err(TtnError::ShapeMismatch(format!(
                "restriction of dims {:?} against {:?}",
                x.dims(),
                self.w.dims()
            )));
        }
        Ok(DenseTensor::from_matrix(&DenseTensor::mode_gram(&self.w, x, self.mode)?))
    }

    /// `pi^dagger o f o pi` as a dense right-hand side.
    pub fn reduce_dense(self: Arc<Self>, f: DenseRhs<T>) -> DenseRhs<T> {
        Arc::new(move |t, z: &DenseTensor<T>| {
            let in_dims = z.dims().to_vec();
            let y = f(t, &self.prolong(z)?)?;
            self.restrict(&y)?.reshape(&in_dims)
        })
    }
}

/// `<x, H x>` computed through projected blocks, no dense tensors.
pub fn expectation<T: Real>(op: &KroneckerSumOp<T>, x: &Ttn<T>) -> Result<C<T>> {
    op.validate(x.tree())?;
    let own;
    let x = if x.is_orthonormal() {
        x
    } else {
        own = x.orthonormalize();
        &own
    };
    let root = x.root();
    let leaves = leafset(root);
    let nrm2 = cr::<T>(x.norm().to_f64_lossy().powi(2));
    let mut val = czero();
    for t in op.terms() {
        if relation(t, &leaves) == Rel::Outside {
            val += t.coeff * nrm2;
        }
    }
    let bundle = match root {
        TtnNode::Leaf { label, basis } => EnvBundle::leaf(op, *label, basis),
        _ => BundleTree::build(op, root)?.bundle,
    };
    if let Some(s) = bundle.inside {
        val += s[(0, 0)];
    }
    Ok(val)
}

/// Real part of `<x, H x>` for self-adjoint `H`.
pub fn energy<T: Real>(op: &KroneckerSumOp<T>, x: &Ttn<T>) -> Result<T> {
    Ok(expectation(op, x)?.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_core::random::{random_matrix, random_tensor};
    use crate::tensor_core::{kron, qr_thin};
    use crate::tree::TreeRank;

    type M = Matrix<f64>;

    fn sx() -> M {
        M::from_row_slice(2, 2, &[cr(0.0), cr(1.0), cr(1.0), cr(0.0)])
    }
    fn sz() -> M {
        M::from_row_slice(2, 2, &[cr(1.0), cr(0.0), cr(0.0), cr(-1.0)])
    }

    fn ising(d: usize, omega: f64) -> KroneckerSumOp<f64> {
        let mut h = KroneckerSumOp::new();
        for k in 1..=d {
            h.push(cr(-omega), vec![(k, sx())]).unwrap();
        }
        for k in 1..d {
            h.push(cr(-1.0), vec![(k, sz()), (k + 1, sz())]).unwrap();
        }
        h
    }

    fn herm(n: usize, seed: u64) -> M {
        let a = random_matrix::<f64>(n, n, seed);
        (&a + a.adjoint()) * cr(0.5)
    }

    #[test]
    fn identity_term_scales() {
        let tree = Tree::parse("(1,2)", 2).unwrap();
        let h = KroneckerSumOp::new().with_term(C::new(2.0, -1.0), vec![]).unwrap();
        let psi = random_tensor::<f64>(&[2, 2], 1);
        let y = h.apply_dense(&tree, &psi).unwrap();
        assert!(y.max_abs_diff(&psi.scale(C::new(2.0, -1.0))) < 1e-15);
    }

    #[test]
    fn all_up_is_eigenstate_without_field() {
        let tree = Tree::parse("(1,2)", 2).unwrap();
        let h = ising(2, 0.0);
        let mut psi = DenseTensor::zeros(&[2, 2]);
        psi.set(&[0, 0], cr(1.0));
        let y = h.apply_dense(&tree, &psi).unwrap();
        assert!(y.max_abs_diff(&psi.scale(cr(-1.0))) < 1e-15);
    }

    #[test]
    fn dense_matches_kronecker_assembly() {
        let tree = Tree::parse("(1,(2,3))", 2).unwrap();
        let (a, b, c) = (herm(2, 1), herm(2, 2), herm(2, 3));
        let mut h = KroneckerSumOp::new();
        h.push(cr(0.7), vec![(1, a.clone()), (3, c.clone())]).unwrap();
        h.push(C::new(0.0, 1.5), vec![(2, b.clone())]).unwrap();
        let id = M::identity(2, 2);
        // first label is the fastest index: vec(X) uses B_3 (x) B_2 (x) B_1
        let want = kron(&c, &kron(&id, &a)) * cr(0.7) + kron(&id, &kron(&b, &id)) * C::new(0.0, 1.5);
        let got = h.dense_matrix(&tree).unwrap();
        assert!((got - want).iter().all(|z| z.norm() < 1e-13));
    }

    #[test]
    fn validation_errors() {
        let tree = Tree::parse("(1,2)", 2).unwrap();
        let h = KroneckerSumOp::new().with_term(cr(1.0), vec![(5, sx())]).unwrap();
        assert!(h.validate(&tree).is_err());
        let h = KroneckerSumOp::new().with_term(cr(1.0), vec![(1, M::identity(3, 3))]).unwrap();
        assert!(h.validate(&tree).is_err());
        assert!(KroneckerSumOp::<f64>::new().with_term(cr(1.0), vec![(1, sx()), (1, sz())]).is_err());
        assert!(KroneckerSumOp::<f64>::new().with_term(cr(1.0), vec![(1, M::zeros(2, 3))]).is_err());
        let psi = random_tensor::<f64>(&[2, 3], 0);
        assert!(ising(2, 1.0).apply_dense(&tree, &psi).is_err());
    }

    #[test]
    fn energy_matches_dense() {
        let tree = Tree::parse("((1,2),(3,4))", 2).unwrap();
        let h = ising(4, 0.8).shifted(cr(0.3));
        for seed in 0..4 {
            let x = Ttn::<f64>::random(&tree, &TreeRank::uniform(&tree, 2), seed).unwrap().scale(cr(1.7));
            let v = x.to_full(DENSE_CAP).unwrap();
            let hv = h.apply_dense(&tree, &v).unwrap();
            let want = v.inner(&hv).unwrap();
            let got = expectation(&h, &x).unwrap();
            assert!((got - want).norm() < 1e-11 * want.norm().max(1.0), "{got} vs {want}");
            assert!(got.im.abs() < 1e-10);
        }
    }

    #[test]
    fn energy_of_all_up() {
        for d in [2usize, 5, 10] {
            let tree = Tree::balanced_binary(2, d).unwrap();
            let up = Ttn::new(all_up(&tree)).unwrap().orthonormalize();
            let e = energy(&ising(d, 1.3), &up).unwrap();
            assert!((e + (d as f64 - 1.0)).abs() < 1e-12);
        }
    }

    fn all_up(t: &Tree) -> TtnNode<f64> {
        match t {
            Tree::Leaf { label, dim } => {
                let mut u = M::zeros(*dim, 1);
                u[(0, 0)] = cr(1.0);
                TtnNode::Leaf { label: *label, basis: u }
            }
            Tree::Node(ch) => {
                let dims = vec![1; ch.len() + 1];
                let mut core = DenseTensor::zeros(&dims);
                core.data_mut()[0] = cr(1.0);
                TtnNode::Node { core, children: ch.iter().map(all_up).collect() }
            }
        }
    }

    /// QR data of child `i` of a node: `(Qt, R)` with `mat_i(C)^T = Q R`.
    fn qr_child(c: &DenseTensor<f64>, i: usize) -> (DenseTensor<f64>, M) {
        let (q, r) = qr_thin(&c.matricize(i + 1).unwrap().transpose());
        let mut dims = c.dims().to_vec();
        dims[i + 1] = q.ncols();
        (DenseTensor::tensorize(&q.transpose(), i + 1, &dims).unwrap(), r)
    }

    fn children(x: &Ttn<f64>) -> (DenseTensor<f64>, Vec<TtnNode<f64>>) {
        match x.root() {
            TtnNode::Node { core, children } => (core.clone(), children.clone()),
            _ => unreachable!(),
        }
    }

    #[test]
    fn prolong_restrict_adjoint_and_left_inverse() {
        let tree = Tree::parse("((1,2),(3,4))", 2).unwrap();
        let x = Ttn::<f64>::random(&tree, &TreeRank::uniform(&tree, 2), 7).unwrap();
        let (c, kids) = children(&x);
        for i in 0..2 {
            let (qt, _) = qr_child(&c, i);
            let p = Prolongation::new(&qt, &kids, i).unwrap();
            let z = random_tensor::<f64>(&[2, 2, 2], 10 + i as u64);
            let w = random_tensor::<f64>(&p.parent_dims(4), 20 + i as u64);
            let pz = p.prolong(&z).unwrap();
            let lhs = pz.inner(&w).unwrap();
            let rhs = z.inner(&p.restrict(&w).unwrap().reshape(&[2, 2, 2]).unwrap()).unwrap();
            assert!((lhs - rhs).norm() < 1e-12);
            let back = p.restrict(&pz).unwrap().reshape(&[2, 2, 2]).unwrap();
            assert!(back.max_abs_diff(&z) < 1e-12);
        }
    }

    #[test]
    fn restrict_of_start_is_child_start() {
        // Y_tau_i^0 = X_tau_i ×_0 R equals the restriction of Y_tau^0
        let tree = Tree::parse("((1,2),(3,4))", 2).unwrap();
        let x = Ttn::<f64>::random(&tree, &TreeRank::uniform(&tree, 2), 9).unwrap();
        let (c, kids) = children(&x);
        let y = x.root().full_sub().unwrap().reshape(&[1, 4, 4]).unwrap();
        for i in 0..2 {
            let (qt, r) = qr_child(&c, i);
            let p = Prolongation::new(&qt, &kids, i).unwrap();
            let want = kids[i].full_sub().unwrap().mode_product(0, &r).unwrap();
            let got = p.restrict(&y).unwrap().reshape(want.dims()).unwrap();
            assert!(got.max_abs_diff(&want) < 1e-12);
        }
    }

    /// Reduced structured operators agree with dense `pi^dagger H pi` at
    /// every node, with Schrödinger antisymmetry carried along.
    #[test]
    fn reduced_matches_dense_everywhere() {
        for (lit, d) in [("((1,2),(3,4))", 4), ("(1,(2,(3,4)))", 4), ("((3,1),(2,(5,4)))", 5), ("(1,2,3)", 3)] {
            let tree = Tree::parse(lit, 2).unwrap();
            let h = ising(d, 0.9).shifted(cr(0.25));
            let mut h2 = h.clone();
            h2.push(cr(0.4), vec![(1, herm(2, 5)), (d, herm(2, 6))]).unwrap();
            let rhs = RhsKind::Schrodinger(h2);
            let op = rhs.linear_op().unwrap();
            let x = Ttn::<f64>::random(&tree, &TreeRank::uniform(&tree, 2), 11).unwrap();
            let red = ReducedOp::root(&op, &tree);
            let dense = rhs.root_dense(&tree);
            check_node(&op, x.root(), &red, dense, 0);
        }
    }

    fn check_node(op: &KroneckerSumOp<f64>, node: &TtnNode<f64>, red: &ReducedOp<f64>, dense: DenseRhs<f64>, seed: u64) {
        let t = node.tree();
        let labels = t.leaves();
        let mut dims = vec![node.rank()];
        dims.extend(t.leaf_dims());
        for s in 0..3 {
            let z = random_tensor::<f64>(&dims, 100 + seed * 7 + s);
            let a = red.apply_dense(op, &labels, &z).unwrap();
            let b = dense(0.0, &z).unwrap().reshape(&dims).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-11 * b.norm().max(1.0), "{t}");
            assert!(z.inner(&a).unwrap().re.abs() < 1e-10);
        }
        let TtnNode::Node { core, children } = node else { return };
        let kb: Vec<BundleTree<f64>> = children.iter().map(|c| BundleTree::build(op, c).unwrap()).collect();
        let refs: Vec<&EnvBundle<f64>> = kb.iter().map(|b| &b.bundle).collect();
        for i in 0..children.len() {
            let (qt, r) = qr_child(core, i);
            let sub = red.reduce(op, &qt, i, &refs).unwrap();
            let p = Arc::new(Prolongation::new(&qt, children, i).unwrap());
            let child_dense = p.reduce_dense(dense.clone());
            // next level: the child start is X ×_0 R, not orthonormal at mode 0
            let mut c = children[i].clone();
            if let TtnNode::Node { core, .. } = &mut c {
                *core = core.mode_product(0, &r).unwrap();
            }
            check_node(op, &c, &sub, child_dense, seed + i as u64 + 1);
        }
    }

    #[test]
    fn galerkin_matches_dense_projection() {
        let tree = Tree::parse("((1,2),(3,4))", 2).unwrap();
        let op = RhsKind::Schrodinger(ising(4, 1.0)).linear_op().unwrap();
        let x = Ttn::<f64>::random(&tree, &TreeRank::uniform(&tree, 3), 12).unwrap();
        let (_, kids) = children(&x);
        let red = ReducedOp::root(&op, &tree);
        let kb: Vec<BundleTree<f64>> = kids.iter().map(|c| BundleTree::build(&op, c).unwrap()).collect();
        let refs: Vec<&EnvBundle<f64>> = kb.iter().map(|b| &b.bundle).collect();
        let l = red.galerkin(&op, &refs);
        let c = random_tensor::<f64>(&[1, 3, 3], 5);
        let got = l.apply(&c).unwrap();
        let us: Vec<M> = kids.iter().map(|k| k.dense_basis().unwrap()).collect();
        let y = c.mode_product(1, &us[0]).unwrap().mode_product(2, &us[1]).unwrap();
        let fy = RhsKind::Schrodinger(ising(4, 1.0)).root_dense(&tree)(0.0, &y).unwrap();
        let want = fy.mode_product(1, &us[0].adjoint()).unwrap().mode_product(2, &us[1].adjoint()).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-11);
        // zero operator gives zero, identity gives the input
        let bundles = |o: &KroneckerSumOp<f64>| -> Vec<EnvBundle<f64>> {
            kids.iter().map(|k| BundleTree::build(o, k).unwrap().bundle).collect()
        };
        let zero = KroneckerSumOp::new();
        let zb = bundles(&zero);
        let z = ReducedOp::root(&zero, &tree).galerkin(&zero, &zb.iter().collect::<Vec<_>>());
        assert_eq!(z.apply(&c).unwrap().norm(), 0.0);
        let id = KroneckerSumOp::new().with_term(cr(2.0), vec![]).unwrap();
        let ib = bundles(&id);
        let li = ReducedOp::root(&id, &tree).galerkin(&id, &ib.iter().collect::<Vec<_>>());
        assert!(li.apply(&c).unwrap().max_abs_diff(&c.scale(cr(2.0))) < 1e-14);
    }

    #[test]
    fn inside_term_has_identity_environment() {
        let tree = Tree::parse("((1,2),(3,4))", 2).unwrap();
        let op = KroneckerSumOp::new().with_term(cr(1.0), vec![(1, sx()), (2, sz())]).unwrap();
        let x = Ttn::<f64>::random(&tree, &TreeRank::uniform(&tree, 2), 3).unwrap();
        let (c, kids) = children(&x);
        let kb: Vec<BundleTree<f64>> = kids.iter().map(|k| BundleTree::build(&op, k).unwrap()).collect();
        let refs: Vec<&EnvBundle<f64>> = kb.iter().map(|b| &b.bundle).collect();
        let (qt, _) = qr_child(&c, 0);
        let red = ReducedOp::root(&op, &tree).reduce(&op, &qt, 0, &refs).unwrap();
        assert!(red.env_out.is_none());
        assert!(red.straddling.is_empty());
        // on the other side the term becomes a pure environment
        let (qt, _) = qr_child(&c, 1);
        let red = ReducedOp::root(&op, &tree).reduce(&op, &qt, 1, &refs).unwrap();
        assert!(red.env_out.is_some() && red.straddling.is_empty());
    }
}
