//! Randomized property and oracle checks shared by `ttn-sim verify` and the
//! acceptance suite. Each function measures; callers decide pass or fail.

use std::sync::Arc;

use rand::Rng;
use ttn_core::integrator::{step_augment, truncate};
use ttn_core::operator::energy;
use ttn_core::spin::{all_up_state, ising_hamiltonian, IsingSpec};
use ttn_core::tensor_core::random::{random_matrix_with, rng, Rng as ChaCha};
use ttn_core::ttn::DENSE_CAP;
use ttn_core::{
    step, DenseTensor, KroneckerSumOp, OdeConfig, RhsKind, StepConfig, Tree, TreeRank, Ttn64,
    TtnNode, C,
};
use ttn_oracle::{abs_diff, full, full_of, reconstruct, rel_diff, Flow, Ode, ONode};

/// Random tree on labels `1..=d` in shuffled order, arity 2 or 3.
pub fn random_tree(g: &mut ChaCha, d: usize, n: usize) -> Tree {
    let mut labels: Vec<usize> = (1..=d).collect();
    for i in (1..d).rev() {
        labels.swap(i, g.random_range(0..=i));
    }
    fn split(g: &mut ChaCha, l: &[usize], n: usize) -> Tree {
        if l.len() == 1 {
            return Tree::leaf(l[0], n);
        }
        let m = if l.len() >= 3 && g.random_bool(0.3) { 3 } else { 2 };
        let mut cuts: Vec<usize> = Vec::new();
        while cuts.len() < m - 1 {
            let c = g.random_range(1..l.len());
            if !cuts.contains(&c) {
                cuts.push(c);
            }
        }
        cuts.sort_unstable();
        let mut parts = Vec::new();
        let mut lo = 0;
        for c in cuts.into_iter().chain([l.len()]) {
            parts.push(split(g, &l[lo..c], n));
            lo = c;
        }
        Tree::Node(parts)
    }
    let t = split(g, &labels, n);
    if t.is_leaf() {
        Tree::Node(vec![t])
    } else {
        t
    }
}

fn hermitian(g: &mut ChaCha, n: usize) -> ttn_core::Matrix64 {
    let a = random_matrix_with::<f64>(n, n, g);
    (&a + a.adjoint()) * C::new(0.5, 0.0)
}

/// Random Hermitian nearest-neighbour chain with one extra long-range
/// coupling and an identity term.
pub fn random_op(g: &mut ChaCha, tree: &Tree) -> KroneckerSumOp<f64> {
    let mut labels = tree.leaves();
    labels.sort_unstable();
    let dims: Vec<usize> = {
        let (l, d) = (tree.leaves(), tree.leaf_dims());
        labels.iter().map(|x| d[l.iter().position(|y| y == x).unwrap()]).collect()
    };
    let mut h = KroneckerSumOp::new();
    for (k, &l) in labels.iter().enumerate() {
        h.push(C::new(g.random_range(-1.0..1.0), 0.0), vec![(l, hermitian(g, dims[k]))]).unwrap();
    }
    for k in 1..labels.len() {
        let s = vec![(labels[k - 1], hermitian(g, dims[k - 1])), (labels[k], hermitian(g, dims[k]))];
        h.push(C::new(g.random_range(-1.0..1.0), 0.0), s).unwrap();
    }
    if labels.len() > 2 {
        let (a, b) = (0, labels.len() - 1);
        let s = vec![(labels[a], hermitian(g, dims[a])), (labels[b], hermitian(g, dims[b]))];
        h.push(C::new(0.3, 0.0), s).unwrap();
    }
    h.push(C::new(0.25, 0.0), vec![]).unwrap();
    h
}

#[derive(Clone, Debug, Default)]
pub struct TruncationStats {
    pub cases: usize,
    pub checks: usize,
    pub violations: usize,
    /// Largest `error / bound` seen.
    pub worst_ratio: f64,
    /// Checks in which something was actually discarded.
    pub nontrivial: usize,
}

/// Dense truncation error against the certified bound on augmented states
/// produced by one augmentation step from random tree tensor networks.
pub fn truncation_bound(cases: usize, seed: u64, thetas: &[f64]) -> TruncationStats {
    let mut g = rng(seed);
    let mut st = TruncationStats { cases, ..Default::default() };
    for c in 0..cases {
        let d = g.random_range(2..=6);
        let tree = random_tree(&mut g, d, 2);
        let r = g.random_range(1..=2);
        let x = Ttn64::random(&tree, &TreeRank::uniform(&tree, r), seed * 1000 + c as u64).unwrap();
        let op = random_op(&mut g, &tree);
        let h = 10f64.powf(g.random_range(-3.0..-0.5));
        let rhs = if g.random_bool(0.5) { RhsKind::Schrodinger(op) } else { RhsKind::Gradient(op) };
        let cfg = StepConfig { h, ..Default::default() };
        let aug = step_augment(&x, &rhs, 0.0, &cfg, false).unwrap().state;
        let dense = full_of(&aug);
        for &theta in thetas {
            let (t, rep) = truncate(&aug, theta, 0, false).unwrap();
            let err = abs_diff(&full_of(&t), &dense);
            st.checks += 1;
            if rep.ranks != aug.ranks() {
                st.nontrivial += 1;
            }
            let bound = rep.bound();
            st.worst_ratio = st.worst_ratio.max(if bound > 0.0 { err / bound } else { 0.0 });
            if err > bound {
                st.violations += 1;
            }
        }
    }
    st
}

#[derive(Clone, Debug, Default)]
pub struct OracleStats {
    pub cases: usize,
    pub max_entries: usize,
    pub max_rel_augmented: f64,
    pub max_rel_truncated: f64,
    /// Largest deviation of a reconstructed augmented start from the step
    /// input over all internal nodes.
    pub max_start_residual: f64,
    pub nodes: usize,
}

/// One adaptive step compared with the dense reference on random trees
/// whose full tensor has at most `max_entries` entries.
pub fn oracle_equivalence(cases: usize, seed: u64, max_entries: usize) -> OracleStats {
    let mut g = rng(seed);
    let mut st = OracleStats { cases, ..Default::default() };
    for c in 0..cases {
        let n: usize = if g.random_bool(0.7) { 2 } else { 3 };
        let mut dmax = 1;
        while n.pow(dmax as u32 + 1) <= max_entries {
            dmax += 1;
        }
        let d = g.random_range(2..=dmax.max(2));
        let tree = random_tree(&mut g, d, n);
        st.max_entries = st.max_entries.max(tree.full_size());
        let r = g.random_range(1..=3);
        let x = Ttn64::random(&tree, &TreeRank::uniform(&tree, r), seed * 7919 + c as u64).unwrap();
        let op = random_op(&mut g, &tree);
        let h = [0.01, 0.05, 0.1][g.random_range(0..3)];
        let theta = [1e-2, 1e-6, 1e-10][g.random_range(0..3)];
        let grad = g.random_bool(0.3);
        let rhs = if grad { RhsKind::Gradient(op.clone()) } else { RhsKind::Schrodinger(op.clone()) };
        let cfg = StepConfig { h, theta, ..Default::default() };

        let aug = step_augment(&x, &rhs, 0.0, &cfg, true).unwrap();
        let (y, _) = step(&x, &rhs, 0.0, &cfg).unwrap();

        let f = ttn_oracle::root_field(&op, &tree, if grad { Flow::Gradient } else { Flow::Schrodinger });
        let o = ttn_oracle::step(&x, &f, 0.0, h, theta, 0, Ode::default());
        st.max_rel_augmented = st.max_rel_augmented.max(rel_diff(&full_of(&aug.state), &full(&o.augmented)));
        st.max_rel_truncated = st.max_rel_truncated.max(rel_diff(&full_of(&y), &full(&o.truncated)));

        for node in &aug.trace {
            let old = reconstruct(&node.start_core, &node.old_children);
            let new = reconstruct(&node.aug_start, &node.new_children);
            st.max_start_residual = st.max_start_residual.max(abs_diff(&new.data, &old.data));
            st.nodes += 1;
        }
        let input = ONode::from_ttn(x.root()).basis();
        st.max_start_residual = st.max_start_residual.max(abs_diff(&o.augmented_start, input.as_slice()));
    }
    st
}

/// `A(t)` with every factor `F_v + t D_v`; with `which`, factor `which` is
/// replaced by `D_v` (one term of the product rule).
fn path_node(a: &TtnNode<f64>, b: &TtnNode<f64>, t: f64, which: Option<usize>, idx: &mut usize) -> TtnNode<f64> {
    let me = *idx;
    *idx += 1;
    let hit = which == Some(me);
    match (a, b) {
        (TtnNode::Leaf { label, basis: u }, TtnNode::Leaf { basis: v, .. }) => TtnNode::Leaf {
            label: *label,
            basis: if hit { v.clone() } else { u + v * C::new(t, 0.0) },
        },
        (TtnNode::Node { core: c, children: ca }, TtnNode::Node { core: e, children: cb }) => {
            let core = if hit {
                e.clone()
            } else {
                let mut s = c.clone();
                s.axpy(C::new(t, 0.0), e).unwrap();
                s
            };
            let children = ca.iter().zip(cb).map(|(x, y)| path_node(x, y, t, which, idx)).collect();
            TtnNode::Node { core, children }
        }
        _ => unreachable!("paths share one tree"),
    }
}

fn path_full(a: &Ttn64, b: &Ttn64, t: f64, which: Option<usize>) -> DenseTensor<f64> {
    Ttn64::new(path_node(a.root(), b.root(), t, which, &mut 0)).unwrap().to_full(DENSE_CAP).unwrap()
}

#[derive(Clone, Debug)]
pub struct ExactnessStats {
    pub error: f64,
    pub ranks_kept: bool,
}

/// One step for `F(t, Y) = A'(t)` along a fixed-rank path, compared with
/// `A(t1)`.
pub fn exactness(lit: &str, n: usize, rank: usize, h: f64, seed: u64) -> ExactnessStats {
    let tree = Tree::parse(lit, n).unwrap();
    let ranks = TreeRank::uniform(&tree, rank);
    let a0 = Ttn64::random(&tree, &ranks, seed).unwrap();
    let da = Ttn64::random(&tree, &ranks, seed + 1).unwrap();
    let nv = tree.vertex_count();
    let (a, b) = (a0.clone(), da.clone());
    let rhs = RhsKind::Explicit(Arc::new(move |t, _y: &DenseTensor<f64>| {
        let mut acc = path_full(&a, &b, t, Some(0));
        for v in 1..nv {
            acc.axpy(C::new(1.0, 0.0), &path_full(&a, &b, t, Some(v)))?;
        }
        Ok(acc)
    }));
    let cfg = StepConfig { h, theta: 1e-6, ode: OdeConfig::new(ttn_core::OdeMethod::Rk4, 4).unwrap(), ..Default::default() };
    let (y1, rep) = step(&a0, &rhs, 0.0, &cfg).unwrap();
    let want = path_full(&a0, &da, h, None);
    ExactnessStats { error: y1.to_full(DENSE_CAP).unwrap().sub(&want).unwrap().norm(), ranks_kept: rep.ranks == ranks }
}

#[derive(Clone, Debug, Default)]
pub struct GradientStats {
    pub steps: usize,
    /// Largest `E(Y^{k+1}) - E(Y^k)`.
    pub max_increase: f64,
    /// Steps with `E(Y^{k+1}) - E(Y^k) > beta c theta`.
    pub violations: usize,
    pub energy_start: f64,
    pub energy_end: f64,
    pub shift: f64,
}

/// Gradient flow of the shifted Ising energy from the all-up state.
pub fn gradient_dissipation(d: usize, steps: usize, h: f64, theta: f64, tree: &Tree) -> GradientStats {
    let spec = IsingSpec::new(d, 1.0).unwrap();
    let shift = spec.psd_shift();
    let hs = ising_hamiltonian::<f64>(&spec).unwrap().shifted(C::new(shift, 0.0));
    let rhs = RhsKind::Gradient(hs.clone());
    let cfg = StepConfig { h, theta, ..Default::default() };
    let grad_norm = |x: &Ttn64| {
        let v = x.to_full(DENSE_CAP).unwrap();
        2.0 * hs.apply_dense(tree, &v).unwrap().norm()
    };
    let mut y = all_up_state::<f64>(tree).unwrap();
    let mut e = energy(&hs, &y).unwrap();
    let mut st = GradientStats { steps, energy_start: e, max_increase: f64::NEG_INFINITY, shift, ..Default::default() };
    for k in 0..steps {
        let aug = step_augment(&y, &rhs, k as f64 * h, &cfg, false).unwrap().state;
        let (x, rep) = truncate(&aug, theta, 0, false).unwrap();
        let beta = grad_norm(&x).max(grad_norm(&aug));
        let y1 = x.orthonormalize();
        let e1 = energy(&hs, &y1).unwrap();
        st.max_increase = st.max_increase.max(e1 - e);
        if e1 - e > beta * rep.bound() {
            st.violations += 1;
        }
        y = y1;
        e = e1;
    }
    st.energy_end = e;
    st
}

/// `sum_l n_l r_l + sum_tau prod(core dims)` computed from the tree and
/// ranks, compared with the stored parameter count.
pub fn param_count_matches(x: &Ttn64) -> bool {
    let ranks = x.ranks();
    ttn_oracle::param_count_closed(x.tree(), &|a| ranks.get(a)) == x.param_count()
}
