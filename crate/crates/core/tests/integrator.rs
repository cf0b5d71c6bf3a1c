use std::sync::Arc;

use ttn_core::integrator::{integrate, step, step_augment, truncate, Observable};
use ttn_core::operator::energy;
use ttn_core::scalar::cr;
use ttn_core::spin::{all_up_state, ising_hamiltonian, magnetization_op, IsingSpec};
use ttn_core::ttn::DENSE_CAP;
use ttn_core::*;

fn dist(a: &DenseTensor<f64>, b: &DenseTensor<f64>) -> f64 {
    a.sub(b).unwrap().norm()
}

fn ising(d: usize, omega: f64) -> KroneckerSumOp<f64> {
    ising_hamiltonian(&IsingSpec::new(d, omega).unwrap()).unwrap()
}

const TREES: [&str; 4] = ["(1,2)", "(1,2,3)", "((1,2),(3,4))", "(1,(2,(3,4)))"];

#[test]
fn augmented_start_reproduces_input_at_every_node() {
    for (k, lit) in TREES.iter().enumerate() {
        let tree = Tree::parse(lit, 2).unwrap();
        let d = tree.num_leaves();
        let y = Ttn::<f64>::random(&tree, &TreeRank::uniform(&tree, 2), k as u64).unwrap();
        let rhs = RhsKind::Schrodinger(ising(d, 1.0));
        let cfg = StepConfig { h: 0.05, ..Default::default() };
        let aug = step_augment(&y, &rhs, 0.0, &cfg, true).unwrap();
        assert!(!aug.trace.is_empty());
        for node in &aug.trace {
            let old = TtnNode::Node { core: node.start_core.clone(), children: node.old_children.clone() };
            let new = TtnNode::Node { core: node.aug_start.clone(), children: node.new_children.clone() };
            let (a, b) = (old.full_sub().unwrap(), new.full_sub().unwrap());
            assert!(dist(&a, &b) < 1e-11, "{lit} at {:?}", node.addr);
        }
        assert!(aug.range_residual < 1e-10);
    }
}

#[test]
fn schrodinger_step_conserves_norm_and_energy_before_truncation() {
    let tree = Tree::balanced_binary(2, 4).unwrap();
    let h = ising(4, 1.0);
    let y = Ttn::<f64>::random(&tree, &TreeRank::uniform(&tree, 2), 9).unwrap();
    let e0 = energy(&h, &y).unwrap();
    let cfg = StepConfig { h: 0.01, theta: 1e-8, ..Default::default() };
    let (y1, rep) = step(&y, &RhsKind::Schrodinger(h.clone()), 0.0, &cfg).unwrap();
    assert!((rep.augmented_norm - 1.0).abs() < 1e-9);
    assert!((rep.augmented_energy.unwrap() - e0).abs() < 1e-8);
    assert!(rep.rank_bound_ok);
    let c = rep.truncation.bound();
    assert!(rep.norm <= 1.0 + 1e-9 && rep.norm >= 1.0 - c - 1e-9);
    assert!(y1.is_orthonormal());
    assert!(rep.truncation.tails.values().all(|&t| t <= cfg.theta));
}

#[test]
fn fixed_rank_mode_keeps_ranks() {
    let tree = Tree::balanced_binary(2, 4).unwrap();
    let ranks = TreeRank::uniform(&tree, 2);
    let y = Ttn::<f64>::random(&tree, &ranks, 2).unwrap();
    let cfg = StepConfig { h: 0.02, mode: IntegratorMode::FixedRank, ..Default::default() };
    let (y1, _) = step(&y, &RhsKind::Schrodinger(ising(4, 1.0)), 0.0, &cfg).unwrap();
    assert_eq!(y1.ranks(), ranks);
}

#[test]
fn gradient_flow_without_truncation_dissipates() {
    let spec = IsingSpec::new(4, 1.0).unwrap();
    let h = ising_hamiltonian::<f64>(&spec).unwrap().shifted(cr(spec.psd_shift()));
    let tree = Tree::balanced_binary(2, 4).unwrap();
    let y = Ttn::<f64>::random(&tree, &TreeRank::uniform(&tree, 1), 4).unwrap();
    let cfg = StepConfig { h: 0.05, theta: 0.0, ..Default::default() };
    let (_, reps) = integrate(&y, &RhsKind::Gradient(h), 0.0, 1.0, &cfg, &[], |_, _| Ok(())).unwrap();
    assert_eq!(reps.len(), 21);
    for w in reps.windows(2) {
        assert!(w[1].energy.unwrap() <= w[0].energy.unwrap() + 1e-13);
    }
}

#[test]
fn integrate_records_initial_state_and_observables() {
    let tree = Tree::tensor_train(2, 3).unwrap();
    let y = all_up_state::<f64>(&tree).unwrap();
    let obs = [Observable { name: "magnetization".into(), op: magnetization_op(3).unwrap() }];
    let cfg = StepConfig { h: 0.1, ..Default::default() };
    let (_, reps) = integrate(&y, &RhsKind::Schrodinger(ising(3, 0.0)), 0.0, 0.5, &cfg, &obs, |_, _| Ok(())).unwrap();
    assert_eq!(reps.len(), 6);
    assert_eq!(reps[0].step, 0);
    assert!(reps.iter().all(|r| (r.observables[0].1 - 1.0).abs() < 1e-12));
    let (y1, none) = integrate(&y, &RhsKind::Zero, 0.0, 0.0, &cfg, &obs, |_, _| Ok(())).unwrap();
    assert_eq!(none.len(), 1);
    assert!(dist(&y1.to_full(DENSE_CAP).unwrap(), &y.to_full(DENSE_CAP).unwrap()) == 0.0);
}

#[test]
fn truncation_certificate_on_random_states() {
    for seed in 0..30u64 {
        let lit = TREES[seed as usize % TREES.len()];
        let tree = Tree::parse(lit, 2).unwrap();
        let x = Ttn::<f64>::random(&tree, &TreeRank::uniform(&tree, 4), seed).unwrap();
        for theta in [1e-2, 1e-1] {
            let (t, rep) = truncate(&x, theta, 0, false).unwrap();
            let err = dist(&x.to_full(DENSE_CAP).unwrap(), &t.to_full(DENSE_CAP).unwrap());
            assert!(err <= rep.bound() * (1.0 + 1e-12), "{lit}: {err} > {}", rep.bound());
        }
    }
}

/// `A(t) = sum of factors (F_v + t D_v)`, optionally with factor `which`
/// replaced by `D_v` (one term of the product rule).
fn path(a: &TtnNode<f64>, b: &TtnNode<f64>, t: f64, which: Option<usize>, idx: &mut usize) -> TtnNode<f64> {
    let me = *idx;
    *idx += 1;
    match (a, b) {
        (TtnNode::Leaf { label, basis: u }, TtnNode::Leaf { basis: v, .. }) => {
            let basis = match which {
                Some(w) if w == me => v.clone(),
                _ => u + v * cr::<f64>(t),
            };
            TtnNode::Leaf { label: *label, basis }
        }
        (TtnNode::Node { core: c, children: ca }, TtnNode::Node { core: e, children: cb }) => {
            let core = match which {
                Some(w) if w == me => e.clone(),
                _ => {
                    let mut s = c.clone();
                    s.axpy(cr(t), e).unwrap();
                    s
                }
            };
            let children = ca.iter().zip(cb).map(|(x, y)| path(x, y, t, which, idx)).collect();
            TtnNode::Node { core, children }
        }
        _ => unreachable!(),
    }
}

fn path_full(a: &Ttn<f64>, b: &Ttn<f64>, t: f64, which: Option<usize>) -> DenseTensor<f64> {
    Ttn::new(path(a.root(), b.root(), t, which, &mut 0)).unwrap().to_full(DENSE_CAP).unwrap()
}

#[test]
fn exactness_for_fixed_rank_path() {
    let tree = Tree::parse("((1,2),(3,4))", 4).unwrap();
    let ranks = TreeRank::uniform(&tree, 2);
    let a0 = Ttn::<f64>::random(&tree, &ranks, 21).unwrap();
    let da = Ttn::<f64>::random(&tree, &ranks, 22).unwrap();
    let nv = tree.vertex_count();
    let (a, b) = (a0.clone(), da.clone());
    let f = RhsKind::Explicit(Arc::new(move |t, _y: &DenseTensor<f64>| {
        let mut acc = path_full(&a, &b, t, Some(0)).scale(cr(0.0));
        for v in 0..nv {
            acc.axpy(cr(1.0), &path_full(&a, &b, t, Some(v)))?;
        }
        Ok(acc)
    }));
    let cfg = StepConfig { h: 0.05, theta: 1e-6, ode: OdeConfig::new(OdeMethod::Rk4, 4).unwrap(), ..Default::default() };
    let (y1, rep) = step(&a0, &f, 0.0, &cfg).unwrap();
    let err = dist(&y1.to_full(DENSE_CAP).unwrap(), &path_full(&a0, &da, 0.05, None));
    assert!(err < 1e-8, "error {err:e}");
    assert_eq!(rep.max_rank, 2);
}

#[test]
fn checkpoint_round_trip_after_steps() {
    let tree = Tree::balanced_binary(2, 4).unwrap();
    let y = Ttn::<f64>::random(&tree, &TreeRank::uniform(&tree, 2), 6).unwrap();
    let (y1, _) = step(&y, &RhsKind::Schrodinger(ising(4, 0.5)), 0.0, &StepConfig::default()).unwrap();
    let mut buf = Vec::new();
    y1.write_checkpoint(&mut buf).unwrap();
    let back = Ttn::<f64>::read_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(back.ranks(), y1.ranks());
    assert!(dist(&back.to_full(DENSE_CAP).unwrap(), &y1.to_full(DENSE_CAP).unwrap()) < 1e-15);
}
