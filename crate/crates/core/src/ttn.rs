//! Tree tensor networks: basis matrices at the leaves, connection tensors at
//! internal nodes.
//!
//! The sub-network at a node represents `X_tau` with dims
//! `(r_tau, n_l ...)`, where the leaf dimensions follow depth-first order, and
//! the matrix `U_tau = mat_0(X_tau)^T`. A leaf stores `U_l` directly.

use std::io::{BufRead, Write};

use crate::error::{Result, TtnError};
use crate::scalar::{cr, czero, Real, C};
use crate::tensor_core::random::{random_matrix_with, random_tensor_with, rng};
use crate::tensor_core::{adj_mul, orthonormality_defect, qr_thin, svd_reduced, DenseTensor, Matrix};
use crate::tree::{Address, Tree, TreeRank};

/// Default cap on dense full-tensor sizes.
pub const DENSE_CAP: usize = 1 << 20;

/// Relative singular value threshold for rank deflation.
pub const DEFLATION_TOL: f64 = 1e-12;

/// Tolerance of the orthonormality check.
pub const ORTHO_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub enum TtnNode<T: Real> {
    Leaf { label: usize, basis: Matrix<T> },
    Node { core: DenseTensor<T>, children: Vec<TtnNode<T>> },
}

impl<T: Real> TtnNode<T> {
    /// `r_tau`.
    pub fn rank(&self) -> usize {
        match self {
            TtnNode::Leaf { basis, .. } => basis.ncols(),
            TtnNode::Node { core, .. } => core.dims()[0],
        }
    }

    pub fn tree(&self) -> Tree {
        match self {
            TtnNode::Leaf { label, basis } => Tree::leaf(*label, basis.nrows()),
            TtnNode::Node { children, .. } => Tree::Node(children.iter().map(TtnNode::tree).collect()),
        }
    }

    pub fn children(&self) -> &[TtnNode<T>] {
        match self {
            TtnNode::Leaf { .. } => &[],
            TtnNode::Node { children, .. } => children,
        }
    }

    pub fn core(&self) -> Option<&DenseTensor<T>> {
        match self {
            TtnNode::Node { core, .. } => Some(core),
            TtnNode::Leaf { .. } => None,
        }
    }

    pub fn at(&self, addr: &[usize]) -> Option<&TtnNode<T>> {
        match addr.split_first() {
            None => Some(self),
            Some((&i, rest)) => self.children().get(i)?.at(rest),
        }
    }

    fn check_shapes(&self) -> Result<()> {
        if let TtnNode::Node { core, children } = self {
            if core.order() != children.len() + 1 {
                return Err(TtnError::ShapeMismatch(format!(
                    "core of order {} for {} children",
                    core.order(),
                    children.len()
                )));
            }
            for (k, c) in children.iter().enumerate() {
                c.check_shapes()?;
                if core.dims()[k + 1] != c.rank() {
                    return Err(TtnError::ShapeMismatch(format!(
                        "core mode {} has size {} but child rank is {}",
                        k + 1,
                        core.dims()[k + 1],
                        c.rank()
                    )));
                }
            }
        }
        Ok(())
    }

    /// `X_tau` as a dense tensor of dims `(r_tau, n_l ...)`.
    pub fn full_sub(&self) -> Result<DenseTensor<T>> {
        match self {
            TtnNode::Leaf { basis, .. } => Ok(DenseTensor::from_matrix(&basis.transpose())),
            TtnNode::Node { core, children } => {
                let mut t = core.clone();
                let mut dims = vec![core.dims()[0]];
                for (k, c) in children.iter().enumerate() {
                    let x = c.full_sub()?;
                    dims.extend_from_slice(&x.dims()[1..]);
                    t = t.mode_product(k + 1, &x.matricize(0)?.transpose())?;
                }
                t.reshape(&dims)
            }
        }
    }

    /// `U_tau = mat_0(X_tau)^T`.
    pub fn dense_basis(&self) -> Result<Matrix<T>> {
        match self {
            TtnNode::Leaf { basis, .. } => Ok(basis.clone()),
            _ => Ok(self.full_sub()?.matricize(0)?.transpose()),
        }
    }

    /// Contraction product `U_x^* U_y` computed recursively.
    pub fn gram(x: &Self, y: &Self) -> Result<Matrix<T>> {
        match (x, y) {
            (TtnNode::Leaf { basis: ux, .. }, TtnNode::Leaf { basis: uy, .. }) => {
                if ux.nrows() != uy.nrows() {
                    return Err(TtnError::TreeMismatch("leaf dimensions differ".into()));
                }
                Ok(adj_mul(ux, uy))
            }
            (TtnNode::Node { core: cx, children: kx }, TtnNode::Node { core: cy, children: ky })
                if kx.len() == ky.len() =>
            {
                let mut t = cy.clone();
                for (k, (a, b)) in kx.iter().zip(ky).enumerate() {
                    t = t.mode_product(k + 1, &Self::gram(a, b)?)?;
                }
                DenseTensor::mode_gram(cx, &t, 0)
            }
            _ => Err(TtnError::TreeMismatch("tree structures differ".into())),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            TtnNode::Leaf { basis, .. } => basis.len(),
            TtnNode::Node { core, children } => {
                core.len() + children.iter().map(TtnNode::param_count).sum::<usize>()
            }
        }
    }

    /// Largest orthonormality defect over this node (if not the root) and
    /// all nodes below.
    fn ortho_defect(&self, is_root: bool) -> T {
        let own = if is_root {
            T::zero()
        } else {
            match self {
                TtnNode::Leaf { basis, .. } => orthonormality_defect(basis),
                TtnNode::Node { core, .. } => {
                    orthonormality_defect(&core.matricize(0).expect("mode 0").transpose())
                }
            }
        };
        self.children().iter().map(|c| c.ortho_defect(false)).fold(own, |a, b| if b > a { b } else { a })
    }

    fn collect_ranks(&self, addr: &mut Address, out: &mut TreeRank) {
        out.0.insert(addr.clone(), self.rank());
        for (i, c) in self.children().iter().enumerate() {
            addr.push(i);
            c.collect_ranks(addr, out);
            addr.pop();
        }
    }
}

/// Thin factorization `M = Q R` with orthonormal `Q`. If `R` is numerically
/// rank deficient, an SVD is used instead and the rank reduced (at least 1).
pub fn qr_deflate<T: Real>(m: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
    let (q, r) = qr_thin(m);
    let s = r.clone().singular_values();
    let smax = s.iter().copied().fold(T::zero(), |a, b| if b > a { b } else { a });
    let tol = T::of(DEFLATION_TOL) * smax;
    if smax > T::zero() && s.iter().all(|&v| v > tol) {
        return (q, r);
    }
    let (p, sig, vh) = svd_reduced(m);
    let keep = sig.iter().filter(|&&v| v > tol).count().max(1);
    let q = p.columns(0, keep).into_owned();
    let mut r = vh.rows(0, keep).into_owned();
    for (i, mut row) in r.row_iter_mut().enumerate() {
        row *= C::new(sig[i], T::zero());
        if sig[i] <= tol {
            row.fill(czero());
        }
    }
    (q, r)
}

/// `k` orthonormal columns orthogonal to the orthonormal columns of `q`,
/// built deterministically from unit vectors.
pub fn orthonormal_complement<T: Real>(q: &Matrix<T>, k: usize) -> Result<Matrix<T>> {
    let n = q.nrows();
    if q.ncols() + k > n {
        return Err(TtnError::IncompatibleRanks(format!(
            "cannot extend {} columns by {k} in dimension {n}",
            q.ncols()
        )));
    }
    let mut basis: Vec<nalgebra::DVector<C<T>>> = q.column_iter().map(|c| c.into_owned()).collect();
    let mut out = Vec::new();
    for e in 0..n {
        if out.len() == k {
            break;
        }
        let mut v = nalgebra::DVector::<C<T>>::zeros(n);
        v[e] = cr(1.0);
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dotc(&v);
                v -= b * proj;
            }
        }
        let nv = v.iter().fold(T::zero(), |a, z| a + z.norm_sqr()).sqrt();
        if nv > T::of(0.5) {
            v /= C::new(nv, T::zero());
            basis.push(v.clone());
            out.push(v);
        }
    }
    Ok(Matrix::from_columns(&out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ttn<T: Real> {
    tree: Tree,
    root: TtnNode<T>,
    orthonormal: bool,
}

impl<T: Real> Ttn<T> {
    /// Wraps a root node after shape validation. Root rank must be 1.
    pub fn new(root: TtnNode<T>) -> Result<Self> {
        root.check_shapes()?;
        let tree = root.tree();
        tree.validate()?;
        if root.rank() != 1 {
            return Err(TtnError::IncompatibleRanks(format!("root rank {} != 1", root.rank())));
        }
        Ok(Self { tree, root, orthonormal: false })
    }

    /// Like [`new`](Self::new), asserting (and checking) orthonormality.
    pub fn new_orthonormal(root: TtnNode<T>) -> Result<Self> {
        let mut x = Self::new(root)?;
        if x.root.ortho_defect(true) > T::of(ORTHO_TOL) {
            return Err(TtnError::ShapeMismatch("factors are not orthonormal".into()));
        }
        x.orthonormal = true;
        Ok(x)
    }

    /// Wraps a root whose factors are orthonormal by construction.
    pub(crate) fn assume_orthonormal(root: TtnNode<T>) -> Result<Self> {
        let mut x = Self::new(root)?;
        x.orthonormal = true;
        Ok(x)
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn root(&self) -> &TtnNode<T> {
        &self.root
    }

    pub fn into_root(self) -> TtnNode<T> {
        self.root
    }

    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    /// Largest deviation from the orthonormality criterion over all
    /// non-root nodes.
    pub fn orthonormality_defect(&self) -> T {
        self.root.ortho_defect(true)
    }

    pub fn ranks(&self) -> TreeRank {
        let mut tr = TreeRank::default();
        self.root.collect_ranks(&mut Vec::new(), &mut tr);
        tr
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().max()
    }

    pub fn at(&self, addr: &[usize]) -> Option<&TtnNode<T>> {
        self.root.at(addr)
    }

    pub fn param_count(&self) -> usize {
        self.root.param_count()
    }

    /// Multiplies the represented tensor by `s` (through the root factor).
    pub fn scale(&self, s: C<T>) -> Self {
        let root = match &self.root {
            TtnNode::Leaf { label, basis } => TtnNode::Leaf { label: *label, basis: basis * s },
            TtnNode::Node { core, children } => {
                TtnNode::Node { core: core.scale(s), children: children.clone() }
            }
        };
        Self { tree: self.tree.clone(), root, orthonormal: self.orthonormal && !self.tree.is_leaf() }
    }

    /// Contraction product at the subtree `addr`.
    pub fn inner_at(x: &Self, y: &Self, addr: &[usize]) -> Result<Matrix<T>> {
        if x.tree != y.tree {
            return Err(TtnError::TreeMismatch(format!("{} vs {}", x.tree, y.tree)));
        }
        let a = x.at(addr).ok_or_else(|| TtnError::TreeMismatch(format!("no subtree at {addr:?}")))?;
        let b = y.at(addr).ok_or_else(|| TtnError::TreeMismatch(format!("no subtree at {addr:?}")))?;
        TtnNode::gram(a, b)
    }

    /// `<x, y>` of the represented tensors.
    pub fn inner(x: &Self, y: &Self) -> Result<C<T>> {
        Ok(Self::inner_at(x, y, &[])?[(0, 0)])
    }

    pub fn norm(&self) -> T {
        let g = TtnNode::gram(&self.root, &self.root).expect("same structure");
        let v = g[(0, 0)].re;
        if v > T::zero() {
            v.sqrt()
        } else {
            T::zero()
        }
    }

    /// Dense tensor with modes in increasing leaf-label order.
    pub fn to_full(&self, cap: usize) -> Result<DenseTensor<T>> {
        let size = self.tree.full_size();
        if size > cap {
            return Err(TtnError::CapExceeded { size, cap });
        }
        let x = self.root.full_sub()?;
        let dims = x.dims()[1..].to_vec();
        let x = x.reshape(&dims)?;
        let leaves = self.tree.leaves();
        let mut perm: Vec<usize> = (0..leaves.len()).collect();
        perm.sort_by_key(|&k| leaves[k]);
        x.permute(&perm)
    }

    /// Orthonormal representation of the same tensor via a leaves-to-root
    /// QR sweep. Numerically rank-deficient factors reduce the rank.
    pub fn orthonormalize(&self) -> Self {
        fn go<T: Real>(node: &TtnNode<T>, is_root: bool) -> (TtnNode<T>, Matrix<T>) {
            match node {
                TtnNode::Leaf { label, basis } => {
                    if is_root {
                        return (node.clone(), Matrix::identity(1, 1));
                    }
                    let (q, r) = qr_deflate(basis);
                    (TtnNode::Leaf { label: *label, basis: q }, r)
                }
                TtnNode::Node { core, children } => {
                    let mut c = core.clone();
                    let mut kids = Vec::with_capacity(children.len());
                    for (k, ch) in children.iter().enumerate() {
                        let (n, r) = go(ch, false);
                        c = c.mode_product(k + 1, &r).expect("conforming R");
                        kids.push(n);
                    }
                    if is_root {
                        return (TtnNode::Node { core: c, children: kids }, Matrix::identity(1, 1));
                    }
                    let m = c.matricize(0).expect("mode 0").transpose();
                    let (q, r) = qr_deflate(&m);
                    let mut dims = c.dims().to_vec();
                    dims[0] = q.ncols();
                    let core = DenseTensor::tensorize(&q.transpose(), 0, &dims).expect("dims");
                    (TtnNode::Node { core, children: kids }, r)
                }
            }
        }
        let (root, _) = go(&self.root, true);
        Self { tree: self.tree.clone(), root, orthonormal: true }
    }

    /// Random orthonormal TTN of the given tree rank, normalized to 1.
    pub fn random(tree: &Tree, ranks: &TreeRank, seed: u64) -> Result<Self> {
        tree.validate()?;
        ranks.validate(tree)?;
        let mut g = rng(seed);
        fn build<T: Real>(
            t: &Tree,
            addr: &mut Address,
            ranks: &TreeRank,
            g: &mut crate::tensor_core::random::Rng,
        ) -> TtnNode<T> {
            let r = ranks.get(addr);
            match t {
                Tree::Leaf { label, dim } => {
                    TtnNode::Leaf { label: *label, basis: random_matrix_with(*dim, r, g) }
                }
                Tree::Node(ch) => {
                    let mut dims = vec![r];
                    let mut kids = Vec::new();
                    for (i, c) in ch.iter().enumerate() {
                        addr.push(i);
                        dims.push(ranks.get(addr));
                        kids.push(build(c, addr, ranks, g));
                        addr.pop();
                    }
                    let core = random_tensor_with(&dims, g);
                    TtnNode::Node { core, children: kids }
                }
            }
        }
        let root = build::<T>(tree, &mut Vec::new(), ranks, &mut g);
        let x = Self::new(root)?.orthonormalize();
        let nrm = x.norm();
        Ok(x.scale(C::new(T::one() / nrm, T::zero())))
    }

    /// Same tensor, orthonormal, with ranks raised to `target` wherever the
    /// current rank is smaller (extra directions are unused padding).
    pub fn embed_ranks(&self, target: &TreeRank) -> Result<Self> {
        fn go<T: Real>(
            node: &TtnNode<T>,
            addr: &mut Address,
            target: &TreeRank,
            is_root: bool,
        ) -> Result<TtnNode<T>> {
            let want = if is_root { 1 } else { target.get(addr).max(node.rank()) };
            match node {
                TtnNode::Leaf { label, basis } => {
                    let extra = want - basis.ncols();
                    if extra == 0 {
                        return Ok(node.clone());
                    }
                    let comp = orthonormal_complement(basis, extra)?;
                    Ok(TtnNode::Leaf { label: *label, basis: crate::tensor_core::hcat(basis, &comp) })
                }
                TtnNode::Node { core, children } => {
                    let mut c = core.clone();
                    let mut kids = Vec::new();
                    for (k, ch) in children.iter().enumerate() {
                        addr.push(k);
                        let n = go(ch, addr, target, false)?;
                        addr.pop();
                        let (old, new) = (ch.rank(), n.rank());
                        if new > old {
                            let mut e = Matrix::<T>::zeros(new, old);
                            for j in 0..old {
                                e[(j, j)] = cr(1.0);
                            }
                            c = c.mode_product(k + 1, &e)?;
                        }
                        kids.push(n);
                    }
                    let extra = want - c.dims()[0];
                    if extra > 0 {
                        let m = c.matricize(0)?.transpose();
                        let full = crate::tensor_core::hcat(&m, &orthonormal_complement(&m, extra)?);
                        let mut dims = c.dims().to_vec();
                        dims[0] = want;
                        c = DenseTensor::tensorize(&full.transpose(), 0, &dims)?;
                    }
                    Ok(TtnNode::Node { core: c, children: kids })
                }
            }
        }
        if !self.orthonormal {
            return Err(TtnError::ShapeMismatch("embed_ranks needs an orthonormal TTN".into()));
        }
        let root = go(&self.root, &mut Vec::new(), target, true)?;
        Ok(Self { tree: self.tree.clone(), root, orthonormal: true })
    }

    /// Writes a checkpoint: a text header (tree literal, node shapes) and
    /// raw little-endian `f64` pairs for every node in depth-first order.
    pub fn write_checkpoint(&self, w: &mut impl Write) -> Result<()> {
        let mut shapes = Vec::new();
        let mut blobs: Vec<&[C<T>]> = Vec::new();
        fn walk<'a, T: Real>(n: &'a TtnNode<T>, shapes: &mut Vec<Vec<usize>>, blobs: &mut Vec<&'a [C<T>]>) {
            match n {
                TtnNode::Leaf { basis, .. } => {
                    shapes.push(vec![basis.nrows(), basis.ncols()]);
                    blobs.push(basis.as_slice());
                }
                TtnNode::Node { core, children } => {
                    shapes.push(core.dims().to_vec());
                    blobs.push(core.data());
                    children.iter().for_each(|c| walk(c, shapes, blobs));
                }
            }
        }
        walk(&self.root, &mut shapes, &mut blobs);
        writeln!(w, "ttn-checkpoint 1")?;
        writeln!(w, "tree {}", self.tree.to_literal_with_dims())?;
        writeln!(w, "orthonormal {}", self.orthonormal)?;
        writeln!(w, "nodes {}", shapes.len())?;
        for s in &shapes {
            let s: Vec<String> = s.iter().map(|v| v.to_string()).collect();
            writeln!(w, "shape {}", s.join(" "))?;
        }
        writeln!(w, "end")?;
        for b in blobs {
            for z in b {
                w.write_all(&z.re.to_f64_lossy().to_le_bytes())?;
                w.write_all(&z.im.to_f64_lossy().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(r: &mut impl BufRead) -> Result<Self> {
        let mut line = String::new();
        let mut next = |r: &mut dyn BufRead| -> Result<String> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(TtnError::Parse("unexpected end of checkpoint header".into()));
            }
            Ok(line.trim_end().to_string())
        };
        let bad = |what: &str| TtnError::Parse(format!("malformed checkpoint: {what}"));
        if next(r)? != "ttn-checkpoint 1" {
            return Err(bad("magic line"));
        }
        let tree_line = next(r)?;
        let tree = Tree::parse(tree_line.strip_prefix("tree ").ok_or_else(|| bad("tree"))?, 1)?;
        let orth: bool = next(r)?
            .strip_prefix("orthonormal ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("orthonormal flag"))?;
        let count: usize = next(r)?
            .strip_prefix("nodes ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("node count"))?;
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let l = next(r)?;
            let s: std::result::Result<Vec<usize>, _> =
                l.strip_prefix("shape ").ok_or_else(|| bad("shape"))?.split(' ').map(str::parse).collect();
            shapes.push(s.map_err(|_| bad("shape entry"))?);
        }
        if next(r)? != "end" {
            return Err(bad("header terminator"));
        }
        let mut data = Vec::with_capacity(count);
        for s in &shapes {
            let n: usize = s.iter().product();
            let mut buf = vec![0u8; 16 * n];
            r.read_exact(&mut buf)?;
            let v: Vec<C<T>> = buf
                .chunks_exact(16)
                .map(|c| {
                    let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
                    let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
                    C::new(T::of(re), T::of(im))
                })
                .collect();
            data.push(v);
        }
        let mut it = shapes.into_iter().zip(data);
        fn build<T: Real>(
            t: &Tree,
            it: &mut impl Iterator<Item = (Vec<usize>, Vec<C<T>>)>,
        ) -> Result<TtnNode<T>> {
            let (shape, data) = it.next().ok_or_else(|| TtnError::Parse("too few nodes".into()))?;
            match t {
                Tree::Leaf { label, .. } => {
                    if shape.len() != 2 {
                        return Err(TtnError::Parse("leaf shape must have 2 entries".into()));
                    }
                    Ok(TtnNode::Leaf {
                        label: *label,
                        basis: Matrix::from_column_slice(shape[0], shape[1], &data),
                    })
                }
                Tree::Node(ch) => {
                    let core = DenseTensor::new(shape, data)?;
                    let kids = ch.iter().map(|c| build(c, it)).collect::<Result<Vec<_>>>()?;
                    Ok(TtnNode::Node { core, children: kids })
                }
            }
        }
        let root = build(&tree, &mut it)?;
        let x = Self::new(root)?;
        if x.tree != tree {
            return Err(bad("leaf dimensions disagree with tree"));
        }
        Ok(Self { orthonormal: orth, ..x })
    }
}
