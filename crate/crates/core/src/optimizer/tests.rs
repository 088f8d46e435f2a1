use nalgebra::{dvector, DMatrix, DVector};

use super::*;
use crate::dynamics::fixtures::{MassSpringChain, Pendulum, PointMass2d};
use crate::objectives::{QuadraticTrackingObjective, TrackingMode};
use crate::sensitivity::HessianKind;
use crate::simulate::max_residual_norm;
use crate::test_util::{rand_controls, rng, stacked_affine_parts};

fn lq_setup(
    steps: usize,
) -> (
    PointMass2d,
    QuadraticTrackingObjective,
    InitialConditions,
    ControlSequence,
) {
    let sys = PointMass2d::with_params(1.0, steps, 0.1).unwrap();
    let obj = QuadraticTrackingObjective::new(
        dvector![1.0, -0.5],
        DMatrix::identity(2, 2) * 4.0,
        0.01,
        TrackingMode::Terminal,
    )
    .unwrap();
    let ic = InitialConditions::at_rest(dvector![0.0, 0.0]);
    let u0 = ControlSequence::zeros(2, steps);
    (sys, obj, ic, u0)
}

/// Closed-form optimum of the LQ problem, built from residual probes and a
/// dense solve only.
fn lq_analytic_optimum(
    sys: &PointMass2d,
    target: &DVector<f64>,
    q: &DMatrix<f64>,
    rho: f64,
    ic: &InitialConditions,
) -> DVector<f64> {
    let dims = sys.dims();
    let (n, steps) = (dims.n, dims.steps);
    let (gx, gu, r0) = stacked_affine_parts(sys, ic);
    let gx_lu = gx.lu();
    let s = gx_lu.solve(&(-&gu)).unwrap();
    let x_free = gx_lu.solve(&(-&r0)).unwrap();

    // Terminal selector: rows of the last state block.
    let s_term = s.rows((steps - 1) * n, n).clone_owned();
    let x_term_free = x_free.rows((steps - 1) * n, n).clone_owned();

    let lhs = s_term.tr_mul(&(q * &s_term))
        + DMatrix::identity(dims.control_len(), dims.control_len()) * rho;
    let rhs = -s_term.tr_mul(&(q * (x_term_free - target)));
    lhs.lu().solve(&rhs).unwrap()
}

#[test]
fn regularize_keeps_positive_definite_hessian_unshifted() {
    let h = HessianMatrix::new(DMatrix::identity(3, 3) * 2.0, HessianKind::GaussNewton);
    let grad = dvector![1.0, -1.0, 0.5];
    let reg = regularize(&h, &grad, &OptimizerConfig::default()).unwrap();
    assert_eq!(reg.lambda(), 0.0);
    let d = search_direction(Some(&reg), &grad);
    assert!((d + grad / 2.0).amax() < 1e-14);
}

#[test]
fn regularize_walks_schedule_to_ten_for_negated_identity() {
    // Schedule {0, 1e-4, ..., 1, 10}: -I + I is singular, so the first
    // eigenvalue-clearing shift is 10.
    let h = HessianMatrix::new(DMatrix::identity(2, 2) * -1.0, HessianKind::GaussNewton);
    let grad = dvector![0.3, -0.4];
    let cfg = OptimizerConfig {
        reg_lambda0: 1e-4,
        reg_growth: 10.0,
        ..OptimizerConfig::default()
    };
    let reg = regularize(&h, &grad, &cfg).unwrap();
    assert_eq!(reg.lambda(), 10.0);
}

#[test]
fn regularize_turns_indefinite_hessian_into_descent() {
    let h = HessianMatrix::new(
        DMatrix::from_diagonal(&dvector![1.0, -2.0, 0.5]),
        HessianKind::Full,
    );
    let grad = dvector![0.7, 0.1, -0.3];
    let reg = regularize(&h, &grad, &OptimizerConfig::default()).unwrap();
    assert!(reg.lambda() > 0.0);
    let d = search_direction(Some(&reg), &grad);
    assert!(d.dot(&grad) < 0.0);
}

#[test]
fn regularize_gives_up_past_lambda_max() {
    // A zero Hessian with a zero gradient can never produce a descent
    // direction; the schedule must exhaust.
    let h = HessianMatrix::new(DMatrix::zeros(2, 2), HessianKind::GaussNewton);
    let grad = dvector![0.0, 0.0];
    assert!(matches!(
        regularize(&h, &grad, &OptimizerConfig::default()),
        Err(crate::Error::RegularizationFailure { .. })
    ));
}

#[test]
fn search_direction_is_identity_solve() {
    let h = HessianMatrix::new(DMatrix::identity(3, 3), HessianKind::GaussNewton);
    let grad = dvector![1.0, 2.0, -3.0];
    let reg = regularize(&h, &grad, &OptimizerConfig::default()).unwrap();
    let d = search_direction(Some(&reg), &grad);
    assert!((&d + &grad).amax() < 1e-14);
    // Gradient-descent mode: no factorization, H treated as identity.
    assert_eq!(search_direction(None, &grad), -grad);
}

#[test]
fn line_search_rejects_non_descent_direction() {
    let (sys, obj, ic, u0) = lq_setup(4);
    let x = rollout(&sys, &u0, &ic).unwrap();
    let grad = DVector::from_element(8, 1.0);
    let zero_d = DVector::zeros(8);
    assert!(matches!(
        line_search(&sys, &obj, &u0, &x, &grad, &zero_d, &ic, &OptimizerConfig::default()),
        Err(crate::Error::InvalidValue { .. })
    ));
}

#[test]
fn line_search_accepts_full_newton_step_on_quadratic() {
    let (sys, obj, ic, u0) = lq_setup(5);
    let cfg = OptimizerConfig::default();
    let x = rollout(&sys, &u0, &ic).unwrap();
    let derivs = obj.derivatives(&x, &u0).unwrap();
    let s = crate::sensitivity::compute_sensitivity(&sys, &x, &u0, &ic).unwrap();
    let grad = crate::sensitivity::gradient(&derivs, &s).unwrap();
    let h = crate::sensitivity::gauss_newton_hessian(&derivs, &s).unwrap();
    let reg = regularize(&h, &grad, &cfg).unwrap();
    let d = search_direction(Some(&reg), &grad);

    let (u1, x1, alpha) = line_search(&sys, &obj, &u0, &x, &grad, &d, &ic, &cfg).unwrap();
    assert_eq!(alpha, 1.0);
    // The accepted candidate is a certified rollout.
    assert!(max_residual_norm(&sys, &x1, &u1, &ic).unwrap() <= crate::simulate::STEP_TOLERANCE);
}

#[test]
fn lq_problem_converges_in_one_newton_step() {
    for mode in [HessianMode::GaussNewton, HessianMode::Full] {
        let (sys, obj, ic, u0) = lq_setup(5);
        let cfg = OptimizerConfig {
            hessian_mode: mode,
            grad_tol: 1e-8,
            ..OptimizerConfig::default()
        };
        let (u_opt, report) = optimize(&sys, &obj, &u0, &ic, &cfg).unwrap();
        assert_eq!(report.accepted_iterations(), 1, "{mode} took extra steps");
        assert!(report.termination.converged());
        assert_eq!(report.iterations[0].alpha, 1.0);
        assert_eq!(report.iterations[0].lambda, 0.0);
        assert!(report.final_grad_norm().unwrap() <= 1e-8);

        let expected = lq_analytic_optimum(
            &sys,
            &dvector![1.0, -0.5],
            &(DMatrix::identity(2, 2) * 4.0),
            0.01,
            &ic,
        );
        assert!((u_opt.stacked() - expected).amax() <= 1e-8);
    }
}

#[test]
fn gradient_vanishes_at_the_analytic_lq_optimum() {
    let (sys, obj, ic, _) = lq_setup(8);
    let analytic = lq_analytic_optimum(
        &sys,
        &dvector![1.0, -0.5],
        &(DMatrix::identity(2, 2) * 4.0),
        0.01,
        &ic,
    );
    let u_star = ControlSequence::from_stacked(&analytic, 2);
    let x_star = rollout(&sys, &u_star, &ic).unwrap();
    let derivs = obj.derivatives(&x_star, &u_star).unwrap();
    let s = crate::sensitivity::compute_sensitivity(&sys, &x_star, &u_star, &ic).unwrap();
    let grad = crate::sensitivity::gradient(&derivs, &s).unwrap();
    assert!(grad.amax() <= 1e-8, "gradient at optimum: {:e}", grad.amax());
}

#[test]
fn already_optimal_start_terminates_at_iteration_zero() {
    // Equilibrium start, target at the equilibrium: the zero control is
    // already stationary.
    let sys = MassSpringChain::new(2, 6, 0.05).unwrap();
    let obj = QuadraticTrackingObjective::new(
        DVector::zeros(2),
        DMatrix::identity(2, 2),
        0.1,
        TrackingMode::Terminal,
    )
    .unwrap();
    let ic = InitialConditions::at_rest(DVector::zeros(2));
    let u0 = ControlSequence::zeros(2, 6);
    let (u_opt, report) = optimize(&sys, &obj, &u0, &ic, &OptimizerConfig::default()).unwrap();
    assert_eq!(report.termination, TerminationReason::GradientTolerance);
    assert_eq!(report.accepted_iterations(), 0);
    assert_eq!(report.iterations.len(), 1);
    assert_eq!(report.iterations[0].iter, 0);
    assert_eq!(u_opt, u0);
}

#[test]
fn objective_is_monotone_across_accepted_iterations() {
    let sys = Pendulum::with_params(1.0, 0.3, 9.81, 15, 0.05).unwrap();
    let obj = QuadraticTrackingObjective::new(
        dvector![std::f64::consts::PI],
        DMatrix::identity(1, 1) * 10.0,
        0.01,
        TrackingMode::Terminal,
    )
    .unwrap();
    let ic = InitialConditions::at_rest(dvector![0.0]);
    let u0 = ControlSequence::zeros(1, 15);
    let cfg = OptimizerConfig {
        hessian_mode: HessianMode::GaussNewton,
        max_iters: 100,
        ..OptimizerConfig::default()
    };
    let (_, report) = optimize(&sys, &obj, &u0, &ic, &cfg).unwrap();
    assert!(report.termination.converged());
    for pair in report.iterations.windows(2) {
        assert!(pair[1].objective <= pair[0].objective);
    }
}

#[test]
fn full_and_gauss_newton_iterates_coincide_on_linear_dynamics() {
    let mut runs = Vec::new();
    for mode in [HessianMode::GaussNewton, HessianMode::Full] {
        let (sys, obj, ic, _) = lq_setup(6);
        let mut r = rng(83);
        let u0 = rand_controls(&mut r, 2, 6, 0.5);
        let cfg = OptimizerConfig {
            hessian_mode: mode,
            grad_tol: 1e-9,
            ..OptimizerConfig::default()
        };
        runs.push(optimize(&sys, &obj, &u0, &ic, &cfg).unwrap());
    }
    let (u_gn, rep_gn) = &runs[0];
    let (u_full, rep_full) = &runs[1];
    assert_eq!(u_gn, u_full);
    assert_eq!(rep_gn.iterations.len(), rep_full.iterations.len());
    for (a, b) in rep_gn.iterations.iter().zip(&rep_full.iterations) {
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.alpha, b.alpha);
    }
}

#[test]
fn gauss_newton_needs_fewer_iterations_than_gradient_descent() {
    let sys = Pendulum::with_params(1.0, 0.5, 9.81, 15, 0.05).unwrap();
    let obj = QuadraticTrackingObjective::new(
        dvector![std::f64::consts::PI],
        DMatrix::identity(1, 1) * 10.0,
        0.01,
        TrackingMode::Terminal,
    )
    .unwrap();
    let ic = InitialConditions::at_rest(dvector![0.0]);
    let u0 = ControlSequence::zeros(1, 15);

    let run = |mode: HessianMode| {
        let cfg = OptimizerConfig {
            hessian_mode: mode,
            grad_tol: 1e-5,
            max_iters: 300,
            ..OptimizerConfig::default()
        };
        let (_, report) = optimize(&sys, &obj, &u0, &ic, &cfg).unwrap();
        report.accepted_iterations()
    };
    let gn = run(HessianMode::GaussNewton);
    let gd = run(HessianMode::GradientDescent);
    assert!(gn < gd, "gauss-newton {gn} iterations vs gradient descent {gd}");
}

#[test]
fn full_mode_is_refused_without_second_derivatives() {
    let sys =
        crate::dynamics::fixtures::WithoutSecondDerivatives(Pendulum::new(5, 0.05).unwrap());
    let obj = QuadraticTrackingObjective::new(
        dvector![0.5],
        DMatrix::identity(1, 1),
        0.01,
        TrackingMode::Terminal,
    )
    .unwrap();
    let ic = InitialConditions::at_rest(dvector![0.0]);
    let u0 = ControlSequence::zeros(1, 5);
    let cfg = OptimizerConfig {
        hessian_mode: HessianMode::Full,
        ..OptimizerConfig::default()
    };
    assert!(matches!(
        optimize(&sys, &obj, &u0, &ic, &cfg),
        Err(crate::Error::SecondDerivativesUnavailable)
    ));
}

#[test]
fn optimizer_config_validation_catches_bad_fields() {
    let bad_configs = [
        OptimizerConfig {
            ls_shrink: 1.0,
            ..OptimizerConfig::default()
        },
        OptimizerConfig {
            grad_tol: 0.0,
            ..OptimizerConfig::default()
        },
        OptimizerConfig {
            reg_growth: 1.0,
            ..OptimizerConfig::default()
        },
        OptimizerConfig {
            threads: 0,
            ..OptimizerConfig::default()
        },
    ];
    for cfg in bad_configs {
        assert!(cfg.validate().is_err());
    }
}

#[test]
fn initial_rollout_failure_is_tagged_with_iteration_zero() {
    // The pendulum cannot satisfy the state equation from a non-finite start.
    let sys = Pendulum::new(3, 0.05).unwrap();
    let obj = QuadraticTrackingObjective::new(
        dvector![0.0],
        DMatrix::identity(1, 1),
        0.01,
        TrackingMode::Terminal,
    )
    .unwrap();
    let ic = InitialConditions::at_rest(dvector![f64::NAN]);
    let u0 = ControlSequence::zeros(1, 3);
    match optimize(&sys, &obj, &u0, &ic, &OptimizerConfig::default()) {
        Err(crate::Error::OptimizeFailure { iter: 0, .. }) => {}
        other => panic!("expected iteration-0 failure, got {other:?}"),
    }
}
