//! Dense reference for the tree tensor network integrator.
//!
//! Every quantity here is formed from explicit full-space arrays: subtree
//! bases are stored as dense `N_tau x r_tau` matrices, reduced right-hand
//! sides are literal compositions `restrict(F(prolong(.)))`, and the start
//! values of subproblems come from restricting the parent's start. Nothing
//! is shared with the factored implementation apart from the input types.
//! Double precision only.

use std::collections::BTreeMap;
use std::rc::Rc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use ttn_core::{KroneckerSumOp, Tree, Ttn, TtnNode};

pub type Z = Complex64;
pub type Mat = DMatrix<Z>;

/// Relative singular value cutoff when taking numerical ranges.
pub const RANGE_TOL: f64 = 1e-12;

/// Column-major dense array.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub dims: Vec<usize>,
    pub data: Vec<Z>,
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for k in 1..dims.len() {
        s[k] = s[k - 1] * dims[k - 1];
    }
    s
}

impl Dense {
    pub fn new(dims: Vec<usize>, data: Vec<Z>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "dims {dims:?} vs {} entries", data.len());
        Self { dims, data }
    }

    pub fn from_core(t: &ttn_core::DenseTensor<f64>) -> Self {
        Self::new(t.dims().to_vec(), t.data().to_vec())
    }

    pub fn reshape(&self, dims: Vec<usize>) -> Self {
        Self::new(dims, self.data.clone())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Rows over mode `i`, columns over the other modes, first fastest.
    pub fn unfold(&self, i: usize) -> Mat {
        let n = self.dims[i];
        let cols = self.data.len() / n.max(1);
        let st = strides(&self.dims);
        let mut m = Mat::zeros(n, cols);
        let mut idx = vec![0usize; self.dims.len()];
        for (lin, v) in self.data.iter().enumerate() {
            let mut rem = lin;
            for k in (0..self.dims.len()).rev() {
                idx[k] = rem / st[k];
                rem %= st[k];
            }
            let mut col = 0;
            let mut w = 1;
            for (k, (&x, &n)) in idx.iter().zip(&self.dims).enumerate() {
                if k != i {
                    col += x * w;
                    w *= n;
                }
            }
            m[(idx[i], col)] = *v;
        }
        m
    }

    /// Inverse of [`Dense::unfold`]; `dims[i]` is replaced by `m.nrows()`.
    pub fn fold(m: &Mat, i: usize, dims: &[usize]) -> Self {
        let mut dims = dims.to_vec();
        dims[i] = m.nrows();
        let total: usize = dims.iter().product();
        let st = strides(&dims);
        let mut data = vec![Z::new(0.0, 0.0); total];
        let mut idx = vec![0usize; dims.len()];
        for (lin, slot) in data.iter_mut().enumerate() {
            let mut rem = lin;
            for k in (0..dims.len()).rev() {
                idx[k] = rem / st[k];
                rem %= st[k];
            }
            let mut col = 0;
            let mut w = 1;
            for k in 0..dims.len() {
                if k != i {
                    col += idx[k] * w;
                    w *= dims[k];
                }
            }
            *slot = m[(idx[i], col)];
        }
        Self { dims, data }
    }

    /// `A x_i M`: mode `i` is multiplied from the left by `M`.
    pub fn mul(&self, i: usize, m: &Mat) -> Self {
        assert_eq!(m.ncols(), self.dims[i]);
        Self::fold(&(m * self.unfold(i)), i, &self.dims)
    }

    /// `conj(unfold_i(a)) unfold_i(b)^T`: contraction over all modes but `i`.
    pub fn contract_except(a: &Self, b: &Self, i: usize) -> Mat {
        a.unfold(i).conjugate() * b.unfold(i).transpose()
    }

    fn axpy(&mut self, s: Z, o: &Self) {
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += s * b;
        }
    }
}

/// Relative Euclidean distance `|a - b| / max(|b|, tiny)`.
pub fn rel_diff(a: &[Z], b: &[Z]) -> f64 {
    assert_eq!(a.len(), b.len());
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    d / n.max(1e-300)
}

pub fn abs_diff(a: &[Z], b: &[Z]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// Factored state with dense leaf bases.
#[derive(Clone, Debug)]
pub enum ONode {
    Leaf { label: usize, u: Mat },
    Node { core: Dense, kids: Vec<ONode> },
}

impl ONode {
    pub fn from_ttn(n: &TtnNode<f64>) -> Self {
        match n {
            TtnNode::Leaf { label, basis } => ONode::Leaf { label: *label, u: basis.clone() },
            TtnNode::Node { core, children } => {
                ONode::Node { core: Dense::from_core(core), kids: children.iter().map(Self::from_ttn).collect() }
            }
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            ONode::Leaf { u, .. } => u.ncols(),
            ONode::Node { core, .. } => core.dims[0],
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        match self {
            ONode::Leaf { label, .. } => vec![*label],
            ONode::Node { kids, .. } => kids.iter().flat_map(|k| k.labels()).collect(),
        }
    }

    fn leaf_dims(&self) -> Vec<usize> {
        match self {
            ONode::Leaf { u, .. } => vec![u.nrows()],
            ONode::Node { kids, .. } => kids.iter().flat_map(|k| k.leaf_dims()).collect(),
        }
    }

    /// Dense `N x r` basis with rows over the subtree's leaves in DFS order.
    pub fn basis(&self) -> Mat {
        match self {
            ONode::Leaf { u, .. } => u.clone(),
            ONode::Node { core, kids } => {
                let bases: Vec<Mat> = kids.iter().map(|k| k.basis()).collect();
                expand(core, &bases).unfold(0).transpose()
            }
        }
    }

    /// `(label, rank)` at every vertex keyed by address.
    pub fn ranks(&self) -> BTreeMap<Vec<usize>, usize> {
        fn go(n: &ONode, a: &mut Vec<usize>, out: &mut BTreeMap<Vec<usize>, usize>) {
            out.insert(a.clone(), n.rank());
            if let ONode::Node { kids, .. } = n {
                for (i, k) in kids.iter().enumerate() {
                    a.push(i);
                    go(k, a, out);
                    a.pop();
                }
            }
        }
        let mut out = BTreeMap::new();
        go(self, &mut vec![], &mut out);
        out
    }
}

/// `C x_1 B_1 ... x_m B_m` with dims `(r, N_1, ..., N_m)`.
fn expand(core: &Dense, bases: &[Mat]) -> Dense {
    let mut y = core.clone();
    for (k, b) in bases.iter().enumerate() {
        y = y.mul(k + 1, b);
    }
    y
}

/// Full tensor of the subtree below `core` in DFS leaf order, as a flat
/// `(r, N)` array.
pub fn reconstruct(core: &ttn_core::DenseTensor<f64>, children: &[TtnNode<f64>]) -> Dense {
    let bases: Vec<Mat> = children.iter().map(|c| ONode::from_ttn(c).basis()).collect();
    let y = expand(&Dense::from_core(core), &bases);
    let r = y.dims[0];
    y.reshape(vec![r, y.data.len() / r.max(1)])
}

/// Permutes a DFS-ordered full tensor (leading rank-one mode dropped) into
/// label order.
fn to_label_order(flat: &[Z], labels: &[usize], dims: &[usize]) -> Vec<Z> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by_key(|&k| labels[k]);
    let src_st = strides(dims);
    let new_dims: Vec<usize> = order.iter().map(|&k| dims[k]).collect();
    let dst_st = strides(&new_dims);
    let mut out = vec![Z::new(0.0, 0.0); flat.len()];
    for (lin, v) in flat.iter().enumerate() {
        let mut rem = lin;
        let mut dst = 0;
        for k in (0..dims.len()).rev() {
            let ik = rem / src_st[k];
            rem %= src_st[k];
            let pos = order.iter().position(|&o| o == k).unwrap();
            dst += ik * dst_st[pos];
        }
        out[dst] = *v;
    }
    out
}

/// Full tensor of a state with modes in label order (root rank one).
pub fn full(node: &ONode) -> Vec<Z> {
    let b = node.basis();
    assert_eq!(b.ncols(), 1, "root rank must be one");
    to_label_order(b.as_slice(), &node.labels(), &node.leaf_dims())
}

pub fn full_of(x: &Ttn<f64>) -> Vec<Z> {
    full(&ONode::from_ttn(x.root()))
}

/// Vector field on flat `(r, N)` arrays.
pub type Field = Rc<dyn Fn(f64, &Dense) -> Dense>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    /// `Y' = -i H Y`
    Schrodinger,
    /// `Y' = -2 H Y`
    Gradient,
}

/// Root field for `H` given as a sum of Kronecker products, evaluated by
/// applying each factor along its mode.
pub fn root_field(op: &KroneckerSumOp<f64>, tree: &Tree, flow: Flow) -> Field {
    let labels = tree.leaves();
    let dims = tree.leaf_dims();
    let terms: Vec<(Z, Vec<(usize, Mat)>)> = op
        .terms()
        .iter()
        .map(|t| {
            let sites = t
                .sites
                .iter()
                .map(|(l, m)| (labels.iter().position(|x| x == l).expect("operator site not in tree") + 1, m.clone()))
                .collect();
            (t.coeff, sites)
        })
        .collect();
    let factor = match flow {
        Flow::Schrodinger => Z::new(0.0, -1.0),
        Flow::Gradient => Z::new(-2.0, 0.0),
    };
    Rc::new(move |_, y: &Dense| {
        let mut shape = vec![1];
        shape.extend(&dims);
        let y = y.reshape(shape);
        let mut acc = Dense::new(y.dims.clone(), vec![Z::new(0.0, 0.0); y.data.len()]);
        for (c, sites) in &terms {
            let mut z = y.clone();
            for (mode, m) in sites {
                z = z.mul(*mode, m);
            }
            acc.axpy(*c * factor, &z);
        }
        acc.reshape(vec![1, y.data.len()])
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Euler,
    Heun,
    Rk4,
}

#[derive(Clone, Copy, Debug)]
pub struct Ode {
    pub method: Method,
    pub substeps: usize,
}

impl Default for Ode {
    fn default() -> Self {
        Ode { method: Method::Rk4, substeps: 1 }
    }
}

fn lin(y: &Dense, a: f64, k: &Dense) -> Dense {
    let mut out = y.clone();
    out.axpy(Z::new(a, 0.0), k);
    out
}

pub fn integrate(f: &Field, y0: &Dense, t0: f64, t1: f64, ode: Ode) -> Dense {
    let h = (t1 - t0) / ode.substeps as f64;
    let mut y = y0.clone();
    for s in 0..ode.substeps {
        let t = t0 + s as f64 * h;
        y = match ode.method {
            Method::Euler => lin(&y, h, &f(t, &y)),
            Method::Heun => {
                let k1 = f(t, &y);
                let k2 = f(t + h, &lin(&y, h, &k1));
                lin(&lin(&y, h / 2.0, &k1), h / 2.0, &k2)
            }
            Method::Rk4 => {
                let k1 = f(t, &y);
                let k2 = f(t + h / 2.0, &lin(&y, h / 2.0, &k1));
                let k3 = f(t + h / 2.0, &lin(&y, h / 2.0, &k2));
                let k4 = f(t + h, &lin(&y, h, &k3));
                let mut out = y.clone();
                out.axpy(Z::new(h / 6.0, 0.0), &k1);
                out.axpy(Z::new(h / 3.0, 0.0), &k2);
                out.axpy(Z::new(h / 3.0, 0.0), &k3);
                out.axpy(Z::new(h / 6.0, 0.0), &k4);
                out
            }
        };
    }
    y
}

/// Left singular vectors of `m` with singular values above `RANGE_TOL`
/// relative to the largest.
pub fn range(m: &Mat) -> Mat {
    let svd = m.clone().svd(true, false);
    let u = svd.u.unwrap();
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap());
    let smax = order.first().map(|&k| s[k]).unwrap_or(0.0);
    let keep: Vec<usize> = order.into_iter().filter(|&k| s[k] > RANGE_TOL * smax).collect();
    Mat::from_fn(m.nrows(), keep.len(), |i, j| u[(i, keep[j])])
}

struct Augmented {
    c1: Dense,
    c0: Dense,
    kids: Vec<ONode>,
}

/// The reduced problem for child `i` of a node with start core `c0` and
/// old child bases: prolongation frame and start value.
struct Frame {
    w: Dense,
    mode: usize,
}

impl Frame {
    fn new(c0: &Dense, bases: &[Mat], i: usize) -> Self {
        let m = c0.unfold(i + 1).transpose();
        assert!(m.nrows() >= m.ncols(), "child rank exceeds the rank of its complement");
        let q = m.qr().q();
        let mut w = Dense::fold(&q.transpose(), i + 1, &c0.dims);
        for (j, b) in bases.iter().enumerate() {
            if j != i {
                w = w.mul(j + 1, b);
            }
        }
        Frame { w, mode: i + 1 }
    }

    /// `(r_i, N_i) -> (r, N)` flat.
    fn prolong(&self, z: &Dense) -> Dense {
        let y = self.w.mul(self.mode, &z.unfold(0).transpose());
        let r = y.dims[0];
        y.reshape(vec![r, y.data.len() / r])
    }

    /// `(r, N) -> (r_i, N_i)` flat.
    fn restrict(&self, x: &Dense) -> Dense {
        let mut dims = self.w.dims.clone();
        let others: usize = dims.iter().enumerate().filter(|(k, _)| *k != self.mode).map(|(_, d)| d).product();
        dims[self.mode] = x.data.len() / others;
        let g = Dense::contract_except(&self.w, &x.reshape(dims), self.mode);
        Dense::new(vec![g.nrows(), g.ncols()], g.as_slice().to_vec())
    }
}

fn reduced(frame: Rc<Frame>, f: Field) -> Field {
    Rc::new(move |t, z| frame.restrict(&f(t, &frame.prolong(z))))
}

/// Augmentation at a node whose start is `c0` over the old children.
fn augment(c0: &Dense, kids: &[ONode], f: &Field, t0: f64, t1: f64, ode: Ode) -> Augmented {
    let old: Vec<Mat> = kids.iter().map(|k| k.basis()).collect();
    let start = {
        let y = expand(c0, &old);
        let r = y.dims[0];
        y.reshape(vec![r, y.data.len() / r])
    };
    let mut new_kids = Vec::new();
    let mut new_bases = Vec::new();
    let mut m_hats = Vec::new();
    for (i, kid) in kids.iter().enumerate() {
        let frame = Rc::new(Frame::new(c0, &old, i));
        let z0 = frame.restrict(&start);
        let fi = reduced(frame, f.clone());
        let node = match kid {
            ONode::Leaf { label, u } => {
                let z1 = integrate(&fi, &z0, t0, t1, ode);
                let k = z1.unfold(0).transpose();
                let mut both = Mat::zeros(u.nrows(), k.ncols() + u.ncols());
                both.columns_mut(0, k.ncols()).copy_from(&k);
                both.columns_mut(k.ncols(), u.ncols()).copy_from(u);
                ONode::Leaf { label: *label, u: range(&both) }
            }
            ONode::Node { kids: gk, .. } => {
                let gb: Vec<Mat> = gk.iter().map(|g| g.basis()).collect();
                let mut shape = vec![z0.dims[0]];
                shape.extend(gb.iter().map(|b| b.nrows()));
                let mut cstart = z0.reshape(shape);
                for (k, b) in gb.iter().enumerate() {
                    cstart = cstart.mul(k + 1, &b.adjoint());
                }
                let sub = augment(&cstart, gk, &fi, t0, t1, ode);
                let a = sub.c1.unfold(0).transpose();
                let b = sub.c0.unfold(0).transpose();
                let mut both = Mat::zeros(a.nrows(), a.ncols() + b.ncols());
                both.columns_mut(0, a.ncols()).copy_from(&a);
                both.columns_mut(a.ncols(), b.ncols()).copy_from(&b);
                let q = range(&both);
                ONode::Node { core: Dense::fold(&q.transpose(), 0, &sub.c1.dims), kids: sub.kids }
            }
        };
        let ub = node.basis();
        m_hats.push(ub.adjoint() * &old[i]);
        new_bases.push(ub);
        new_kids.push(node);
    }
    let mut c0_hat = c0.clone();
    for (k, m) in m_hats.iter().enumerate() {
        c0_hat = c0_hat.mul(k + 1, m);
    }
    let dims = c0_hat.dims.clone();
    let nb = new_bases.clone();
    let core_f: Field = {
        let f = f.clone();
        Rc::new(move |t, c: &Dense| {
            let y = expand(&c.reshape(dims.clone()), &nb);
            let r = y.dims[0];
            let fy = f(t, &y.reshape(vec![r, y.data.len() / r]));
            let mut g = fy.reshape(y.dims.clone());
            for (k, b) in nb.iter().enumerate() {
                g = g.mul(k + 1, &b.adjoint());
            }
            g
        })
    };
    let c1 = integrate(&core_f, &c0_hat, t0, t1, ode);
    Augmented { c1, c0: c0_hat, kids: new_kids }
}

fn retained(s: &[f64], theta: f64, cap: usize) -> usize {
    let mut k = s.len();
    let mut tail = 0.0;
    while k > 1 && (tail + s[k - 1] * s[k - 1]).sqrt() <= theta {
        tail += s[k - 1] * s[k - 1];
        k -= 1;
    }
    if cap > 0 {
        k = k.min(cap);
    }
    k.max(1)
}

fn cut(core: &Dense, kids: &[ONode], theta_here: f64, theta: f64, cap: usize) -> (Dense, Vec<ONode>) {
    let mut c = core.clone();
    let mut out = Vec::new();
    for (i, kid) in kids.iter().enumerate() {
        let svd = core.unfold(i + 1).svd(true, false);
        let u = svd.u.unwrap();
        let s = &svd.singular_values;
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap());
        let sorted: Vec<f64> = order.iter().map(|&k| s[k]).collect();
        let k = retained(&sorted, theta_here, cap);
        let p = Mat::from_fn(u.nrows(), k, |a, b| u[(a, order[b])]);
        out.push(match kid {
            ONode::Leaf { label, u } => ONode::Leaf { label: *label, u: u * &p },
            ONode::Node { core: gc, kids: gk } => {
                let (nc, nk) = cut(&gc.mul(0, &p.transpose()), gk, theta, theta, cap);
                ONode::Node { core: nc, kids: nk }
            }
        });
        c = c.mul(i + 1, &p.adjoint());
    }
    (c, out)
}

/// Recursive root-to-leaves truncation of an orthonormal state.
pub fn truncate(x: &ONode, theta: f64, cap: usize, root_relative: bool) -> ONode {
    let ONode::Node { core, kids } = x else { panic!("root must be internal") };
    let th = if root_relative && core.norm() > 0.0 { theta / core.norm() } else { theta };
    let (c, k) = cut(core, kids, th, theta, cap);
    ONode::Node { core: c, kids: k }
}

/// One rank-adaptive step computed densely.
#[derive(Clone, Debug)]
pub struct OracleStep {
    pub augmented: ONode,
    pub truncated: ONode,
    /// Dense augmented start `C_hat^0 x U_hat`, DFS order.
    pub augmented_start: Vec<Z>,
}

pub fn step(x: &Ttn<f64>, f: &Field, t0: f64, t1: f64, theta: f64, cap: usize, ode: Ode) -> OracleStep {
    let root = ONode::from_ttn(x.root());
    let ONode::Node { core, kids } = &root else { panic!("root must be internal") };
    let a = augment(core, kids, f, t0, t1, ode);
    let bases: Vec<Mat> = a.kids.iter().map(|k| k.basis()).collect();
    let augmented_start = expand(&a.c0, &bases).data;
    let augmented = ONode::Node { core: a.c1, kids: a.kids };
    let truncated = truncate(&augmented, theta, cap, false);
    OracleStep { augmented, truncated, augmented_start }
}

/// `sum_l n_l r_l + sum_tau prod(core dims)` from the tree and ranks alone.
pub fn param_count_closed(tree: &Tree, rank: &dyn Fn(&[usize]) -> usize) -> usize {
    fn go(t: &Tree, a: &mut Vec<usize>, rank: &dyn Fn(&[usize]) -> usize) -> usize {
        match t {
            Tree::Leaf { dim, .. } => dim * rank(a),
            Tree::Node(ch) => {
                let mut own = rank(a);
                let mut below = 0;
                for (i, c) in ch.iter().enumerate() {
                    a.push(i);
                    own *= rank(a);
                    below += go(c, a, rank);
                    a.pop();
                }
                own + below
            }
        }
    }
    go(tree, &mut vec![], rank)
}
