mod common;

use proptest::prelude::*;

use common::*;
use dir_sparse::linalg::{norm2, project_l2_ball, project_weighted_l1_ball, DenseMatrix};
use dir_sparse::losses::{residual_loss, residual_loss_grad};
use dir_sparse::{build_subproblem, LossKind, LossSpec, PenaltySpec, ProblemInstance};

fn loss_kind() -> impl Strategy<Value = LossKind> {
    prop::sample::select(LossKind::ALL.to_vec())
}

fn weighted_point(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-5.0..5.0f64, n), prop::collection::vec(0.05..3.0f64, n))
}

proptest! {
    #[test]
    fn loss_lies_below_its_tangent(kind in loss_kind(), delta in 0.1..3.0f64, s in 0.0..20.0f64, t in 0.0..20.0f64) {
        let loss = LossSpec::new(kind, delta).unwrap();
        let tangent = loss.eval(s).unwrap() + loss.dplus(s).unwrap() * (t - s);
        prop_assert!(loss.eval(t).unwrap() <= tangent + 1e-12 * (1.0 + tangent.abs()));
    }

    #[test]
    fn penalty_lies_below_its_tangent(eps in 0.01..2.0f64, s in 0.0..20.0f64, t in 0.0..20.0f64) {
        let p = PenaltySpec::log(eps).unwrap();
        let tangent = p.eval(s).unwrap() + p.dplus(s).unwrap() * (t - s);
        prop_assert!(p.eval(t).unwrap() <= tangent + 1e-12 * (1.0 + tangent.abs()));
    }

    #[test]
    fn loss_derivative_matches_finite_difference(kind in loss_kind(), delta in 0.1..3.0f64, t in 0.01..20.0f64) {
        let loss = LossSpec::new(kind, delta).unwrap();
        prop_assume!(!kind.is_piecewise() || (t - delta * delta).abs() > 1e-3);
        let h = 1e-6 * (1.0 + t);
        let fd = (loss.eval(t + h).unwrap() - loss.eval(t - h).unwrap()) / (2.0 * h);
        let d = loss.dplus(t).unwrap();
        prop_assert!((fd - d).abs() <= 1e-6 * (1.0 + d.abs()), "fd {fd}, d {d}");
    }

    #[test]
    fn piecewise_losses_are_continuous_at_the_kink(delta in 0.1..3.0f64) {
        for kind in [LossKind::Huber, LossKind::TukeyBiweight] {
            let loss = LossSpec::new(kind, delta).unwrap();
            let t = delta * delta;
            let gap = (loss.eval(t * (1.0 + 1e-12)).unwrap() - loss.eval(t * (1.0 - 1e-12)).unwrap()).abs();
            prop_assert!(gap <= 1e-9 * (1.0 + loss.eval(t).unwrap()));
        }
    }

    #[test]
    fn l1_projection_is_idempotent_and_optimal((y, w) in weighted_point(6), frac in 0.0..1.2f64, probe in prop::collection::vec(-1.0..1.0f64, 6)) {
        let mass: f64 = y.iter().zip(&w).map(|(a, b)| a.abs() * b).sum();
        let tau = frac * mass;
        let p = project_weighted_l1_ball(&y, &w, tau);
        let wp: f64 = p.iter().zip(&w).map(|(a, b)| a.abs() * b).sum();
        prop_assert!(wp <= tau * (1.0 + 1e-12) + 1e-15);
        let again = project_weighted_l1_ball(&p, &w, tau);
        for (a, b) in p.iter().zip(&again) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
        // Variational inequality against a feasible probe point.
        let probe_mass: f64 = probe.iter().zip(&w).map(|(a, b)| a.abs() * b).sum();
        let scale = if probe_mass > tau && probe_mass > 0.0 { tau / probe_mass } else { 1.0 };
        let z: Vec<f64> = probe.iter().map(|v| v * scale).collect();
        let lhs: f64 = (0..6).map(|i| (y[i] - p[i]) * (z[i] - p[i])).sum();
        prop_assert!(lhs <= 1e-9 * (1.0 + norm2(&y)));
    }

    #[test]
    fn l2_projection_lands_in_the_ball(y in prop::collection::vec(-5.0..5.0f64, 1..8), r in 0.0..4.0f64) {
        let p = project_l2_ball(&y, r);
        prop_assert!(norm2(&p) <= r * (1.0 + 1e-12) + 1e-15);
        if norm2(&y) <= r {
            prop_assert_eq!(p, y);
        }
    }

    #[test]
    fn residual_loss_gradient_matches_finite_difference(kind in loss_kind(), seed in 0u64..1000) {
        let mut rng = rng(seed);
        let loss = LossSpec::new(kind, 1.0).unwrap();
        let a = gaussian_matrix(&mut rng, 3, 4);
        let b = gaussian_vec(&mut rng, 3);
        let x = gaussian_vec(&mut rng, 4);
        let r = a.residual(&b, &x).unwrap();
        prop_assume!(!kind.is_piecewise() || r.iter().all(|ri| (ri.abs() - 1.0).abs() > 1e-3));
        let g = residual_loss_grad(&loss, &a, &b, &x).unwrap();
        let fd = central_difference(|z| residual_loss(&loss, &a, &b, z).unwrap(), &x);
        let diff: Vec<f64> = g.iter().zip(&fd).map(|(p, q)| p - q).collect();
        prop_assert!(norm2(&diff) <= 1e-5 * norm2(&g).max(norm2(&fd)).max(1e-12));
    }

    #[test]
    fn retraction_lands_on_the_feasible_set(seed in 0u64..500, probe in prop::collection::vec(-10.0..10.0f64, 12)) {
        let mut rng = rng(seed);
        let (inst, x_k) = random_instance_and_iterate(&mut rng, 5, 12, LossSpec::cauchy(1.0).unwrap());
        let sub = build_subproblem(&inst, &x_k, 0, 0.2, 0.8, 1.0).unwrap();
        let p = sub.retract(&probe);
        prop_assert!(norm2(&sub.residual(&p)) <= sub.bar_sigma() * (1.0 + 1e-12));
        // Already feasible points are left alone.
        let q = sub.retract(&p);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}

#[test]
fn instances_reject_sigma_above_the_residual_loss_of_zero() {
    // Zero is feasible here, which violates the standing assumption.
    let a = DenseMatrix::new(1, 2, vec![1.0, 1.0]).unwrap();
    let r = ProblemInstance::new(a, vec![0.1], 10.0, LossSpec::cauchy(1.0).unwrap(), PenaltySpec::log(0.1).unwrap());
    assert!(r.is_err());
}
