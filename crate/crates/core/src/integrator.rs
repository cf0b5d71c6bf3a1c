//! The rank-adaptive BUG integrator for tree tensor networks: recursive basis
//! update and augmentation, Galerkin update of the connection tensors,
//! rotate-and-cut rank truncation, and the outer time loop.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Result, TtnError};
use crate::ode::{solve, OdeConfig};
use crate::operator::{energy, BundleTree, DenseRhs, EnvBundle, KroneckerSumOp, Prolongation, ReducedOp, RhsKind};
use crate::scalar::{Real, C};
use crate::tensor_core::{
    fro_norm, hcat, left_svd, matmul_ext, orthonormal_range, qr_thin, DenseTensor, Matrix, Op, RANGE_REL_TOL,
};
use crate::tree::{child, Address, TreeRank};
use crate::ttn::{Ttn, TtnNode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum IntegratorMode {
    /// Augment with old and new bases, then truncate.
    #[default]
    Adaptive,
    /// Bases from the new values only; ranks stay fixed.
    FixedRank,
}

impl fmt::Display for IntegratorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntegratorMode::Adaptive => "adaptive",
            IntegratorMode::FixedRank => "fixed_rank",
        })
    }
}

impl FromStr for IntegratorMode {
    type Err = TtnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(IntegratorMode::Adaptive),
            "fixed_rank" | "fixed-rank" => Ok(IntegratorMode::FixedRank),
            _ => Err(TtnError::Parse(format!("unknown integrator '{s}' (adaptive, fixed_rank)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepConfig {
    pub h: f64,
    /// Truncation tolerance.
    pub theta: f64,
    /// Maximal retained rank, 0 for no limit.
    pub rank_cap: usize,
    pub ode: OdeConfig,
    pub mode: IntegratorMode,
    /// Use `theta / |C_root|` for the cuts at the root.
    pub root_relative: bool,
    /// Re-orthonormalize after truncation.
    pub reorthonormalize: bool,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            h: 0.01,
            theta: 1e-8,
            rank_cap: 0,
            ode: OdeConfig::default(),
            mode: IntegratorMode::Adaptive,
            root_relative: false,
            reorthonormalize: true,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(TtnError::Parse(format!("h must be positive and finite, got {}", self.h)));
        }
        if !(self.theta.is_finite() && self.theta >= 0.0) {
            return Err(TtnError::Parse(format!("theta must be nonnegative and finite, got {}", self.theta)));
        }
        if self.ode.substeps == 0 {
            return Err(TtnError::Parse("substeps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Data of one internal node of an augmentation step.
#[derive(Clone, Debug)]
pub struct NodeTrace<T: Real> {
    pub addr: Address,
    /// Connection tensor of the starting value `Y_tau^0`.
    pub start_core: DenseTensor<T>,
    /// Children of the starting value (orthonormal).
    pub old_children: Vec<TtnNode<T>>,
    /// Augmented connection tensors at `t0` and `t1`.
    pub aug_start: DenseTensor<T>,
    pub aug_end: DenseTensor<T>,
    /// Augmented children.
    pub new_children: Vec<TtnNode<T>>,
    /// `M_hat` per child.
    pub m_hats: Vec<Matrix<T>>,
}

#[derive(Clone, Debug)]
pub struct AugmentedStep<T: Real> {
    /// `Y_hat^1`, orthonormal.
    pub state: Ttn<T>,
    /// Empty unless tracing was requested.
    pub trace: Vec<NodeTrace<T>>,
    /// Upper bound of `|(I - U_hat U_hat^*) U^0|_2` over all non-root nodes.
    pub range_residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TruncationReport {
    pub ranks: TreeRank,
    /// Discarded singular value tail (l2) per non-root node.
    pub tails: BTreeMap<Address, f64>,
    /// True if `rank_cap` cut more than the tolerance asked for.
    pub capped: bool,
    pub theta: f64,
    /// Frobenius norm of the truncated root connection tensor.
    pub root_norm: f64,
    pub vertices: usize,
    pub root_relative: bool,
}

impl TruncationReport {
    /// `|C_root| (d - 1) + 1`, or `d` with the root-relative tolerance.
    pub fn constant(&self) -> f64 {
        if self.root_relative {
            self.vertices as f64
        } else {
            self.root_norm * (self.vertices as f64 - 1.0) + 1.0
        }
    }

    /// Certified error bound; meaningless when `capped`.
    pub fn bound(&self) -> f64 {
        self.constant() * self.theta
    }

    pub fn certified(&self) -> bool {
        !self.capped
    }

    pub fn tail_sum(&self) -> f64 {
        self.tails.values().sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub t: f64,
    pub norm: f64,
    pub energy: Option<f64>,
    pub augmented_norm: f64,
    pub augmented_energy: Option<f64>,
    pub max_rank: usize,
    pub augmented_max_rank: usize,
    pub param_count: usize,
    pub ranks: TreeRank,
    /// Every augmented rank is at most twice the incoming one.
    pub rank_bound_ok: bool,
    pub range_residual: f64,
    pub truncation: TruncationReport,
    pub observables: Vec<(String, f64)>,
}

enum NodeRhs<T: Real> {
    Structured(ReducedOp<T>),
    Dense(DenseRhs<T>),
}

struct Aug<T: Real> {
    node: TtnNode<T>,
    bundle: Option<EnvBundle<T>>,
    m_hat: Matrix<T>,
    residual: f64,
    trace: Vec<NodeTrace<T>>,
}

struct Engine<'a, T: Real> {
    op: Option<KroneckerSumOp<T>>,
    cfg: &'a StepConfig,
    t0: f64,
    t1: f64,
    trace: bool,
}

fn from_flat<T: Real>(dims: &[usize], y: &[C<T>]) -> Result<DenseTensor<T>> {
    DenseTensor::new(dims.to_vec(), y.to_vec())
}

/// `|(I - Q Q^*) M|_F` for `Q` with orthonormal columns.
fn range_residual<T: Real>(q: &Matrix<T>, m: &Matrix<T>) -> f64 {
    let proj = matmul_ext(q, Op::N, &matmul_ext(q, Op::H, m, Op::N), Op::N);
    fro_norm(&(m - proj)).to_f64_lossy()
}

/// Augmented core, its start value and the per-child results.
type NodeAugment<T> = (DenseTensor<T>, DenseTensor<T>, Vec<Aug<T>>);

impl<T: Real> Engine<'_, T> {
    fn new_basis(&self, new: &Matrix<T>, old: &Matrix<T>) -> Matrix<T> {
        match self.cfg.mode {
            IntegratorMode::Adaptive => orthonormal_range(&hcat(new, old), T::of(RANGE_REL_TOL)),
            IntegratorMode::FixedRank => qr_thin(new).0,
        }
    }

    /// Augments and updates the children of a node with starting core
    /// `start`, then integrates the Galerkin core equation.
    fn augment_node(
        &self,
        addr: &[usize],
        start: &DenseTensor<T>,
        children: &[TtnNode<T>],
        old: Option<&[BundleTree<T>]>,
        rhs: &NodeRhs<T>,
    ) -> Result<NodeAugment<T>> {
        let old_refs: Option<Vec<&EnvBundle<T>>> = old.map(|o| o.iter().map(|b| &b.bundle).collect());
        let augs = (0..children.len())
            .into_par_iter()
            .map(|i| {
                let (q, r) = qr_thin(&start.matricize(i + 1)?.transpose());
                let mut dims = start.dims().to_vec();
                dims[i + 1] = q.ncols();
                let qt = DenseTensor::tensorize(&q.transpose(), i + 1, &dims)?;
                let sub = match rhs {
                    NodeRhs::Structured(red) => NodeRhs::Structured(red.reduce(
                        self.op.as_ref().expect("structured needs an operator"),
                        &qt,
                        i,
                        old_refs.as_ref().expect("bundles"),
                    )?),
                    NodeRhs::Dense(f) => {
                        NodeRhs::Dense(Arc::new(Prolongation::new(&qt, children, i)?).reduce_dense(f.clone()))
                    }
                };
                let grand = old.map(|o| o[i].children.as_slice());
                self.phi_subtree(&child(addr, i), &children[i], &r, grand, &sub)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut c0 = start.clone();
        for (k, a) in augs.iter().enumerate() {
            c0 = c0.mode_product(k + 1, &a.m_hat)?;
        }
        let dims = c0.dims().to_vec();
        let c1 = match rhs {
            NodeRhs::Structured(red) => {
                let op = self.op.as_ref().expect("operator");
                let kids: Vec<&EnvBundle<T>> = augs.iter().map(|a| a.bundle.as_ref().expect("bundle")).collect();
                let l = red.galerkin(op, &kids);
                let y = solve(|_, y| Ok(l.apply(&from_flat(&dims, y)?)?.into_data()), c0.data(), self.t0, self.t1, &self.cfg.ode)?;
                from_flat(&dims, &y)?
            }
            NodeRhs::Dense(f) => {
                let us = augs.iter().map(|a| a.node.dense_basis()).collect::<Result<Vec<_>>>()?;
                let ush: Vec<Matrix<T>> = us.iter().map(|u| u.adjoint()).collect();
                let g = |t: f64, y: &[C<T>]| -> Result<Vec<C<T>>> {
                    let c = from_flat(&dims, y)?;
                    let full = c.mode_products(us.iter().enumerate().map(|(k, u)| (k + 1, u)))?;
                    let fy = f(t, &full)?;
                    Ok(fy.mode_products(ush.iter().enumerate().map(|(k, u)| (k + 1, u)))?.into_data())
                };
                from_flat(&dims, &solve(g, c0.data(), self.t0, self.t1, &self.cfg.ode)?)?
            }
        };
        Ok((c1, c0, augs))
    }

    /// Subflow for one child: `r` is the QR factor that turns the child's
    /// orthonormal sub-network into its starting value.
    fn phi_subtree(
        &self,
        addr: &[usize],
        node: &TtnNode<T>,
        r: &Matrix<T>,
        old: Option<&[BundleTree<T>]>,
        rhs: &NodeRhs<T>,
    ) -> Result<Aug<T>> {
        match node {
            TtnNode::Leaf { label, basis } => {
                let n = basis.nrows();
                let y0 = DenseTensor::from_matrix(&matmul_ext(r, Op::N, basis, Op::T));
                let dims = y0.dims().to_vec();
                let y1 = match rhs {
                    NodeRhs::Structured(red) => {
                        let op = self.op.as_ref().expect("operator");
                        let l = red.leaf_op(op, *label, n);
                        solve(|_, y| Ok(l.apply(&from_flat(&dims, y)?)?.into_data()), y0.data(), self.t0, self.t1, &self.cfg.ode)?
                    }
                    NodeRhs::Dense(f) => solve(
                        |t, y| Ok(f(t, &from_flat(&dims, y)?)?.into_data()),
                        y0.data(),
                        self.t0,
                        self.t1,
                        &self.cfg.ode,
                    )?,
                };
                let k = from_flat(&dims, &y1)?.matricize(0)?.transpose();
                let u = self.new_basis(&k, basis);
                let m_hat = matmul_ext(&u, Op::H, basis, Op::N);
                let bundle = self.op.as_ref().map(|op| EnvBundle::leaf(op, *label, &u));
                Ok(Aug {
                    residual: range_residual(&u, basis),
                    node: TtnNode::Leaf { label: *label, basis: u },
                    bundle,
                    m_hat,
                    trace: Vec::new(),
                })
            }
            TtnNode::Node { core, children } => {
                let start = core.mode_product(0, r)?;
                let (c1, c0, augs) = self.augment_node(addr, &start, children, old, rhs)?;
                let q = self.new_basis(&c1.matricize(0)?.transpose(), &c0.matricize(0)?.transpose());
                let mut dims = c1.dims().to_vec();
                dims[0] = q.ncols();
                let new_core = DenseTensor::tensorize(&q.transpose(), 0, &dims)?;
                let mut moved = core.clone();
                for (k, a) in augs.iter().enumerate() {
                    moved = moved.mode_product(k + 1, &a.m_hat)?;
                }
                let m_hat = DenseTensor::mode_gram(&new_core, &moved, 0)?;
                let bundle = match &self.op {
                    Some(op) => {
                        let kids: Vec<&EnvBundle<T>> =
                            augs.iter().map(|a| a.bundle.as_ref().expect("bundle")).collect();
                        Some(EnvBundle::node(op, &new_core, &kids)?)
                    }
                    None => None,
                };
                // U^0 = (U_hat_k M_hat_k + E_k) per child; the E_k add up
                let local = range_residual(&q, &moved.matricize(0)?.transpose());
                let residual = local + augs.iter().map(|a| a.residual).sum::<f64>();
                let mut trace = Vec::new();
                let mut new_children = Vec::with_capacity(augs.len());
                let mut m_hats = Vec::with_capacity(augs.len());
                for a in augs {
                    trace.extend(a.trace);
                    new_children.push(a.node);
                    m_hats.push(a.m_hat);
                }
                if self.trace {
                    trace.push(NodeTrace {
                        addr: addr.to_vec(),
                        start_core: start,
                        old_children: children.clone(),
                        aug_start: c0,
                        aug_end: c1,
                        new_children: new_children.clone(),
                        m_hats,
                    });
                }
                Ok(Aug { node: TtnNode::Node { core: new_core, children: new_children }, bundle, m_hat, residual, trace })
            }
        }
    }
}

/// One augmentation step `Y^0 -> Y_hat^1` over `[t0, t0 + h]`, without
/// truncation.
pub fn step_augment<T: Real>(
    y: &Ttn<T>,
    rhs: &RhsKind<T>,
    t0: f64,
    cfg: &StepConfig,
    trace: bool,
) -> Result<AugmentedStep<T>> {
    cfg.validate()?;
    rhs.validate(y.tree())?;
    let own;
    let y = if y.is_orthonormal() {
        y
    } else {
        own = y.orthonormalize();
        &own
    };
    let TtnNode::Node { core, children } = y.root() else {
        return Err(TtnError::InvalidTree("the root must be an internal node".into()));
    };
    let op = rhs.linear_op();
    let engine = Engine { op: op.clone(), cfg, t0, t1: t0 + cfg.h, trace };
    let (root_rhs, old) = match &op {
        Some(op) => {
            let old = children.iter().map(|c| BundleTree::build(op, c)).collect::<Result<Vec<_>>>()?;
            (NodeRhs::Structured(ReducedOp::root(op, y.tree())), Some(old))
        }
        None => (NodeRhs::Dense(rhs.root_dense(y.tree())), None),
    };
    let (c1, c0, augs) = engine.augment_node(&[], core, children, old.as_deref(), &root_rhs)?;
    let residual = augs.iter().map(|a| a.residual).fold(0.0, f64::max);
    let mut tr = Vec::new();
    let mut kids = Vec::new();
    let mut m_hats = Vec::new();
    for a in augs {
        tr.extend(a.trace);
        kids.push(a.node);
        m_hats.push(a.m_hat);
    }
    if trace {
        tr.push(NodeTrace {
            addr: Vec::new(),
            start_core: core.clone(),
            old_children: children.clone(),
            aug_start: c0,
            aug_end: c1.clone(),
            new_children: kids.clone(),
            m_hats,
        });
    }
    let state = Ttn::assume_orthonormal(TtnNode::Node { core: c1, children: kids })?;
    Ok(AugmentedStep { state, trace: tr, range_residual: residual })
}

fn retained(sigma: &[f64], theta: f64, cap: usize) -> (usize, bool) {
    // tail[k] = l2 norm of sigma[k..]
    let mut tail = vec![0.0; sigma.len() + 1];
    for k in (0..sigma.len()).rev() {
        tail[k] = (tail[k + 1] * tail[k + 1] + sigma[k] * sigma[k]).sqrt();
    }
    let mut k = (0..=sigma.len()).find(|&k| tail[k] <= theta).unwrap_or(sigma.len());
    k = k.max(1).min(sigma.len().max(1));
    if cap > 0 && k > cap {
        return (cap, true);
    }
    (k, false)
}

fn tail_of(sigma: &[f64], k: usize) -> f64 {
    sigma.iter().skip(k).map(|s| s * s).sum::<f64>().sqrt()
}

fn cut<T: Real>(
    core: &DenseTensor<T>,
    children: &[TtnNode<T>],
    theta_here: f64,
    theta: f64,
    cap: usize,
    addr: &[usize],
    rep: &mut TruncationReport,
) -> Result<(DenseTensor<T>, Vec<TtnNode<T>>)> {
    let mut c = core.clone();
    let mut kids = Vec::with_capacity(children.len());
    for (i, ch) in children.iter().enumerate() {
        let (p, s) = left_svd(&core.matricize(i + 1)?);
        let s: Vec<f64> = s.iter().map(|v| v.to_f64_lossy()).collect();
        let (k, capped) = retained(&s, theta_here, cap);
        rep.capped |= capped;
        let a = child(addr, i);
        rep.tails.insert(a.clone(), tail_of(&s, k));
        let p = p.columns(0, k).into_owned();
        kids.push(match ch {
            TtnNode::Leaf { label, basis } => TtnNode::Leaf { label: *label, basis: basis * &p },
            TtnNode::Node { core: cc, children: gc } => {
                let moved = cc.mode_product(0, &p.transpose())?;
                let (nc, nk) = cut(&moved, gc, theta, theta, cap, &a, rep)?;
                TtnNode::Node { core: nc, children: nk }
            }
        });
        c = c.mode_product(i + 1, &p.adjoint())?;
    }
    Ok((c, kids))
}

/// Recursive rank truncation with tolerance `theta` (rotate and cut). The
/// input must be orthonormal; the output is orthonormal only when
/// re-orthonormalized by the caller.
pub fn truncate<T: Real>(
    x: &Ttn<T>,
    theta: f64,
    rank_cap: usize,
    root_relative: bool,
) -> Result<(Ttn<T>, TruncationReport)> {
    if !x.is_orthonormal() {
        return Err(TtnError::ShapeMismatch("truncation needs an orthonormal tree tensor network".into()));
    }
    let TtnNode::Node { core, children } = x.root() else {
        return Err(TtnError::InvalidTree("the root must be an internal node".into()));
    };
    let mut rep = TruncationReport {
        theta,
        vertices: x.tree().vertex_count(),
        root_relative,
        ..Default::default()
    };
    let cn = core.norm().to_f64_lossy();
    let theta_root = if root_relative && cn > 0.0 { theta / cn } else { theta };
    let (c, kids) = cut(core, children, theta_root, theta, rank_cap, &[], &mut rep)?;
    rep.root_norm = c.norm().to_f64_lossy();
    let out = Ttn::new(TtnNode::Node { core: c, children: kids })?;
    rep.ranks = out.ranks();
    Ok((out, rep))
}

fn rank_bound_ok(before: &TreeRank, after: &TreeRank) -> bool {
    after.0.iter().all(|(a, &r)| r <= 2 * before.get(a))
}

/// One full step `Y^0 -> Y^1`: augmentation followed by truncation (or by
/// nothing in fixed-rank mode).
pub fn step<T: Real>(y: &Ttn<T>, rhs: &RhsKind<T>, t0: f64, cfg: &StepConfig) -> Result<(Ttn<T>, StepReport)> {
    let input_ranks = y.ranks();
    let aug = step_augment(y, rhs, t0, cfg, false)?;
    let h = rhs.hamiltonian();
    let aug_ranks = aug.state.ranks();
    let mut rep = StepReport {
        t: t0 + cfg.h,
        augmented_norm: aug.state.norm().to_f64_lossy(),
        augmented_energy: h.map(|h| energy(h, &aug.state)).transpose()?.map(|e| e.to_f64_lossy()),
        augmented_max_rank: aug_ranks.max(),
        rank_bound_ok: rank_bound_ok(&input_ranks, &aug_ranks),
        range_residual: aug.range_residual,
        ..Default::default()
    };
    let next = match cfg.mode {
        IntegratorMode::Adaptive => {
            let (x, tr) = truncate(&aug.state, cfg.theta, cfg.rank_cap, cfg.root_relative)?;
            rep.truncation = tr;
            if cfg.reorthonormalize {
                x.orthonormalize()
            } else {
                x
            }
        }
        IntegratorMode::FixedRank => aug.state,
    };
    fill_state(&mut rep, &next, rhs)?;
    Ok((next, rep))
}

fn fill_state<T: Real>(rep: &mut StepReport, x: &Ttn<T>, rhs: &RhsKind<T>) -> Result<()> {
    rep.norm = x.norm().to_f64_lossy();
    rep.energy = rhs.hamiltonian().map(|h| energy(h, x)).transpose()?.map(|e| e.to_f64_lossy());
    rep.ranks = x.ranks();
    rep.max_rank = rep.ranks.max();
    rep.param_count = x.param_count();
    Ok(())
}

/// A named expectation value `<x, A x> / <x, x>` recorded every step.
#[derive(Clone, Debug)]
pub struct Observable<T: Real> {
    pub name: String,
    pub op: KroneckerSumOp<T>,
}

impl<T: Real> Observable<T> {
    pub fn eval(&self, x: &Ttn<T>) -> Result<f64> {
        let n2 = x.norm().to_f64_lossy().powi(2);
        Ok(energy(&self.op, x)?.to_f64_lossy() / n2)
    }
}

/// Number of steps of size `h` from `t0` to `t_end`; the interval must be
/// an integer multiple of `h`.
pub fn step_count(t0: f64, t_end: f64, h: f64) -> Result<usize> {
    let n = (t_end - t0) / h;
    let k = n.round();
    if !(n.is_finite() && k >= 0.0 && (n - k).abs() <= 1e-9 * k.max(1.0)) {
        return Err(TtnError::Parse(format!("time span {} is not a multiple of h = {h}", t_end - t0)));
    }
    Ok(k as usize)
}

/// Runs `step` repeatedly from `t0` to `t_end`. The returned reports start
/// with the initial state (step 0). `on_step` sees every state.
pub fn integrate<T: Real>(
    y0: &Ttn<T>,
    rhs: &RhsKind<T>,
    t0: f64,
    t_end: f64,
    cfg: &StepConfig,
    observables: &[Observable<T>],
    mut on_step: impl FnMut(&Ttn<T>, &StepReport) -> Result<()>,
) -> Result<(Ttn<T>, Vec<StepReport>)> {
    cfg.validate()?;
    let n = step_count(t0, t_end, cfg.h)?;
    let mut y = if y0.is_orthonormal() { y0.clone() } else { y0.orthonormalize() };
    let mut first = StepReport { t: t0, augmented_norm: f64::NAN, rank_bound_ok: true, ..Default::default() };
    fill_state(&mut first, &y, rhs)?;
    first.augmented_energy = None;
    first.augmented_max_rank = first.max_rank;
    first.observables = observables.iter().map(|o| Ok((o.name.clone(), o.eval(&y)?))).collect::<Result<_>>()?;
    on_step(&y, &first)?;
    let mut reports = vec![first];
    for k in 1..=n {
        let t = t0 + (k - 1) as f64 * cfg.h;
        let wrap = |e: TtnError| TtnError::StepFailed { step: k, source: Box::new(e) };
        let (next, mut rep) = step(&y, rhs, t, cfg).map_err(wrap)?;
        rep.step = k;
        rep.t = t0 + k as f64 * cfg.h;
        if !rep.norm.is_finite() {
            return Err(wrap(TtnError::NonFinite { t: rep.t }));
        }
        rep.observables = observables.iter().map(|o| Ok((o.name.clone(), o.eval(&next)?))).collect::<Result<_>>().map_err(wrap)?;
        on_step(&next, &rep)?;
        reports.push(rep);
        y = next;
    }
    Ok((y, reports))
}
