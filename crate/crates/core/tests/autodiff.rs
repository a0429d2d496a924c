mod common;

use common::{MlpLoss, RandomProgram};
use ladlab::tensor::finite_difference_check;
use ladlab::{Graph, Tensor};
use proptest::prelude::*;

const FD_STEP: f64 = 1e-6;
const FD_TOLERANCE: f64 = 1e-4;

#[test]
fn random_programs_match_central_differences() {
    let mut checked = 0;
    for seed in 0..100 {
        let p = RandomProgram::new(seed);
        let report = finite_difference_check(|g, x| p.eval(g, x), &p.point, FD_STEP).unwrap();
        if !report.is_smooth() {
            continue;
        }
        checked += 1;
        assert!(
            report.max_relative_error < FD_TOLERANCE,
            "seed {seed}: rel err {} at {}",
            report.max_relative_error,
            report.worst_index
        );
    }
    assert!(checked >= 90, "only {checked} smooth programs");
}

#[test]
fn mlp_cross_entropy_matches_central_differences() {
    for seed in 0..5 {
        let m = MlpLoss::new(seed);
        let report = finite_difference_check(|g, t| m.eval(g, t), &m.point, FD_STEP).unwrap();
        assert!(report.is_smooth(), "seed {seed} sits on a relu kink");
        assert!(
            report.max_relative_error < FD_TOLERANCE,
            "seed {seed}: {}",
            report.max_relative_error
        );
    }
}

#[test]
fn backward_is_bit_deterministic() {
    for seed in 0..20 {
        let p = RandomProgram::new(seed);
        let a = p.gradient(&p.point).unwrap();
        let b = p.gradient(&p.point).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradient_of_linear_combination(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let p = RandomProgram::new(seed);
        let q = RandomProgram::new(seed + 1000);
        prop_assume!(p.point.len() == q.point.len());
        let x0 = p.point.clone();
        let gp = p.gradient(&x0).unwrap();
        let gq = q.gradient(&x0).unwrap();
        let mut g = Graph::new();
        let x = g.leaf(x0.clone(), true).unwrap();
        let fp = p.eval(&mut g, x).unwrap();
        let fq = q.eval(&mut g, x).unwrap();
        let sp = g.scale(fp, a).unwrap();
        let sq = g.scale(fq, b).unwrap();
        let out = g.add(sp, sq).unwrap();
        g.backward(out).unwrap();
        let combined = g.grad(x).unwrap();
        for i in 0..x0.len() {
            let want = a * gp[i] + b * gq[i];
            prop_assert!((combined[i] - want).abs() <= 1e-9 * (1.0 + want.abs()), "{} vs {}", combined[i], want);
        }
    }

    #[test]
    fn reused_leaf_accumulates(seed in 0u64..1000) {
        let p = RandomProgram::new(seed);
        let single = p.gradient(&p.point).unwrap();
        let mut g = Graph::new();
        let x = g.leaf(p.point.clone(), true).unwrap();
        let y1 = p.eval(&mut g, x).unwrap();
        let y2 = p.eval(&mut g, x).unwrap();
        let out = g.add(y1, y2).unwrap();
        g.backward(out).unwrap();
        let doubled = g.grad(x).unwrap();
        for (d, s) in doubled.iter().zip(&single) {
            prop_assert!((d - 2.0 * s).abs() <= 1e-9 * (1.0 + s.abs()));
        }
    }
}

#[test]
fn detached_branch_contributes_nothing() {
    let mut g = Graph::new();
    let x = g
        .leaf(Tensor::from_vec(vec![0.3, -1.2, 2.0]), true)
        .unwrap();
    let d = g.detach(x).unwrap();
    let prod = g.mul(x, d).unwrap();
    let out = g.sum(prod).unwrap();
    g.backward(out).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.3, -1.2, 2.0]);
}
