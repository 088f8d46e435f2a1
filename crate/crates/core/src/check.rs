//! Independent derivative verification.
//!
//! Everything here reaches the quantities it checks by a different route
//! than the analytic implementations: finite differences of the residual for
//! the Jacobian blocks, finite differences through full re-simulation for
//! the gradient, a dense whole-trajectory solve for the sensitivity matrix,
//! and finite differences of the analytic gradient for the Hessian. The test
//! suite uses these as oracles and `check` on the command line runs them
//! against a configured experiment.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{
    self, DynamicalSystem, StepJacobians, StepSecondDerivatives, StepStates, Tensor3,
};
use crate::error::{Error, Result};
use crate::objectives::ObjectiveFunction;
use crate::sensitivity::{
    adjoint_gradient, compute_sensitivity, full_hessian, gradient, trajectory_jacobians,
};
use crate::simulate::{rollout, ControlSequence, InitialConditions, Trajectory};

/// Central-difference step: FD_STEP_SCALE * (1 + |value|).
pub const FD_STEP_SCALE: f64 = 1e-6;

/// Analytic Jacobian blocks must match FD of the residual to this relative error.
pub const JACOBIAN_TOL: f64 = 1e-6;

/// Analytic second derivatives must match FD of the Jacobians to this relative error.
pub const SECOND_DERIVATIVE_TOL: f64 = 1e-5;

/// The sensitivity gradient must match FD through re-simulation to this relative error.
pub const GRADIENT_TOL: f64 = 1e-5;

/// The exact Hessian must match FD of the gradient to this relative error.
pub const HESSIAN_TOL: f64 = 1e-4;

/// Block forward-substitution S must match the dense solve to this inf-norm.
pub const SENSITIVITY_TOL: f64 = 1e-10;

/// Adjoint and sensitivity gradients must agree to this inf-norm.
pub const ADJOINT_TOL: f64 = 1e-10;

/// FD probe step at a nominal value.
pub fn fd_step(value: f64) -> f64 {
    FD_STEP_SCALE * (1.0 + value.abs())
}

/// |a - b| relative to the larger magnitude, floored at 1.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

/// Largest entry-wise [`rel_err`] between two matrices (or vectors).
pub fn max_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shapes must match");
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}

/// Largest entry-wise absolute difference.
pub fn max_abs_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shapes must match");
    (a - b).amax()
}

/// Central finite differences of the residual with respect to each argument.
pub fn fd_step_jacobians(system: &dyn DynamicalSystem, s: &StepStates) -> Result<StepJacobians> {
    let dims = system.dims();
    let (n, m) = (dims.n, dims.m);

    let probe_state = |select: fn(&mut StepStates) -> &mut DVector<f64>| -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut sp = s.clone();
            let mut sm = s.clone();
            let base = select(&mut sp)[j];
            let e = fd_step(base);
            select(&mut sp)[j] = base + e;
            select(&mut sm)[j] = base - e;
            let gp = dynamics::residual(system, &sp)?;
            let gm = dynamics::residual(system, &sm)?;
            out.set_column(j, &((gp - gm) / (2.0 * e)));
        }
        Ok(out)
    };

    let a = probe_state(|s| &mut s.x_i)?;
    let b = probe_state(|s| &mut s.x_im1)?;
    let c = probe_state(|s| &mut s.x_im2)?;

    let mut d = DMatrix::zeros(n, m);
    for j in 0..m {
        let mut sp = s.clone();
        let mut sm = s.clone();
        let base = s.u_i[j];
        let e = fd_step(base);
        sp.u_i[j] = base + e;
        sm.u_i[j] = base - e;
        let gp = dynamics::residual(system, &sp)?;
        let gm = dynamics::residual(system, &sm)?;
        d.set_column(j, &((gp - gm) / (2.0 * e)));
    }

    Ok(StepJacobians { a, b, c, d })
}

/// Worst relative error across the four Jacobian blocks, with the name of
/// the worst block.
pub fn jacobian_check(
    system: &dyn DynamicalSystem,
    s: &StepStates,
) -> Result<(f64, &'static str)> {
    let analytic = dynamics::step_jacobians(system, s)?;
    let fd = fd_step_jacobians(system, s)?;
    let blocks = [
        ("A", &analytic.a, &fd.a),
        ("B", &analytic.b, &fd.b),
        ("C", &analytic.c, &fd.c),
        ("D", &analytic.d, &fd.d),
    ];
    let mut worst = (0.0, "A");
    for (name, an, num) in blocks {
        let err = max_rel_err(an, num);
        if err > worst.0 {
            worst = (err, name);
        }
    }
    Ok(worst)
}

/// Central finite differences of the analytic Jacobians: every second
/// derivative block, densely (no lag pair omitted).
pub fn fd_step_second_derivatives(
    system: &dyn DynamicalSystem,
    s: &StepStates,
) -> Result<StepSecondDerivatives> {
    let dims = system.dims();
    let (n, m) = (dims.n, dims.m);
    fn lag_field(s: &mut StepStates, lag: usize) -> &mut DVector<f64> {
        match lag {
            0 => &mut s.x_i,
            1 => &mut s.x_im1,
            _ => &mut s.x_im2,
        }
    }
    let lag_block = |j: &StepJacobians, lag: usize| -> DMatrix<f64> {
        match lag {
            0 => j.a.clone(),
            1 => j.b.clone(),
            _ => j.c.clone(),
        }
    };

    let mut out = StepSecondDerivatives::zero();
    for lag_a in 0..3usize {
        // Perturb the lag_a state entry j; read how every first-derivative
        // block moves.
        let mut gxx_tensors = [
            Tensor3::zeros(n, n, n),
            Tensor3::zeros(n, n, n),
            Tensor3::zeros(n, n, n),
        ];
        let mut gxu_tensor = Tensor3::zeros(n, n, m);
        for j in 0..n {
            let mut sp = s.clone();
            let mut sm = s.clone();
            let base = lag_field(&mut sp, lag_a)[j];
            let e = fd_step(base);
            lag_field(&mut sp, lag_a)[j] = base + e;
            lag_field(&mut sm, lag_a)[j] = base - e;
            let jp = dynamics::step_jacobians(system, &sp)?;
            let jm = dynamics::step_jacobians(system, &sm)?;
            for (lag_b, tensor) in gxx_tensors.iter_mut().enumerate() {
                let diff = (lag_block(&jp, lag_b) - lag_block(&jm, lag_b)) / (2.0 * e);
                // diff[(r, k)] = d2 g_r / d x_{i-lag_a, j} d x_{i-lag_b, k}
                for r in 0..n {
                    for k in 0..n {
                        tensor.slice_mut(r)[(j, k)] = diff[(r, k)];
                    }
                }
            }
            let diff_u = (&jp.d - &jm.d) / (2.0 * e);
            for r in 0..n {
                for p in 0..m {
                    gxu_tensor.slice_mut(r)[(j, p)] = diff_u[(r, p)];
                }
            }
        }
        for (lag_b, t) in gxx_tensors.into_iter().enumerate() {
            out.gxx.insert((lag_a, lag_b), t);
        }
        out.gxu.insert(lag_a, gxu_tensor);
    }

    let mut guu = Tensor3::zeros(n, m, m);
    for q in 0..m {
        let mut sp = s.clone();
        let mut sm = s.clone();
        let base = s.u_i[q];
        let e = fd_step(base);
        sp.u_i[q] = base + e;
        sm.u_i[q] = base - e;
        let jp = dynamics::step_jacobians(system, &sp)?;
        let jm = dynamics::step_jacobians(system, &sm)?;
        let diff = (&jp.d - &jm.d) / (2.0 * e);
        for r in 0..n {
            for p in 0..m {
                guu.slice_mut(r)[(p, q)] = diff[(r, p)];
            }
        }
    }
    out.guu = Some(guu);
    Ok(out)
}

/// Worst relative error between analytic and FD second derivatives, treating
/// blocks absent from the analytic (sparse) representation as zero.
pub fn second_derivative_check(system: &dyn DynamicalSystem, s: &StepStates) -> Result<f64> {
    let dims = system.dims();
    let (n, m) = (dims.n, dims.m);
    let analytic = dynamics::step_second_derivatives(system, s)?;
    let fd = fd_step_second_derivatives(system, s)?;

    let zero_nn = Tensor3::zeros(n, n, n);
    let zero_nm = Tensor3::zeros(n, n, m);
    let zero_mm = Tensor3::zeros(n, m, m);
    let mut worst: f64 = 0.0;
    let mut compare = |an: &Tensor3, num: &Tensor3| {
        for r in 0..n {
            worst = worst.max(max_rel_err(an.slice(r), num.slice(r)));
        }
    };
    for lag_a in 0..3usize {
        for lag_b in 0..3usize {
            let an = analytic.gxx.get(&(lag_a, lag_b)).unwrap_or(&zero_nn);
            let num = fd.gxx.get(&(lag_a, lag_b)).unwrap_or(&zero_nn);
            compare(an, num);
        }
        let an = analytic.gxu.get(&lag_a).unwrap_or(&zero_nm);
        let num = fd.gxu.get(&lag_a).unwrap_or(&zero_nm);
        compare(an, num);
    }
    compare(
        analytic.guu.as_ref().unwrap_or(&zero_mm),
        fd.guu.as_ref().unwrap_or(&zero_mm),
    );
    Ok(worst)
}

/// Objective gradient by central differences through full re-simulation:
/// each control entry is perturbed, the trajectory re-rolled, and the
/// objective re-evaluated. Touches none of the sensitivity machinery.
pub fn fd_objective_gradient(
    system: &dyn DynamicalSystem,
    obj: &dyn ObjectiveFunction,
    u: &ControlSequence,
    ic: &InitialConditions,
) -> Result<DVector<f64>> {
    let dims = system.dims();
    let m = dims.m;
    let stacked = u.stacked();
    let mut grad = DVector::zeros(stacked.len());
    for p in 0..stacked.len() {
        let e = fd_step(stacked[p]);
        let mut up = stacked.clone();
        let mut um = stacked.clone();
        up[p] += e;
        um[p] -= e;
        let u_plus = ControlSequence::from_stacked(&up, m);
        let u_minus = ControlSequence::from_stacked(&um, m);
        let o_plus = obj.evaluate(&rollout(system, &u_plus, ic)?, &u_plus)?;
        let o_minus = obj.evaluate(&rollout(system, &u_minus, ic)?, &u_minus)?;
        grad[p] = (o_plus - o_minus) / (2.0 * e);
    }
    Ok(grad)
}

/// Sensitivity matrix by the dense route: assemble the stacked dg/dx and
/// dg/du from the per-step blocks and solve the whole (nT) x (nT) system
/// with a dense LU, no forward substitution involved.
pub fn dense_sensitivity(
    system: &dyn DynamicalSystem,
    x: &Trajectory,
    u: &ControlSequence,
    ic: &InitialConditions,
) -> Result<DMatrix<f64>> {
    let dims = system.dims();
    let (n, m, steps) = (dims.n, dims.m, dims.steps);
    let jacs = trajectory_jacobians(system, x, u, ic)?;

    let mut dgdx = DMatrix::zeros(n * steps, n * steps);
    let mut dgdu = DMatrix::zeros(n * steps, m * steps);
    for (k, jac) in jacs.iter().enumerate() {
        dgdx.view_mut((k * n, k * n), (n, n)).copy_from(&jac.a);
        if k >= 1 {
            dgdx.view_mut((k * n, (k - 1) * n), (n, n)).copy_from(&jac.b);
        }
        if k >= 2 {
            dgdx.view_mut((k * n, (k - 2) * n), (n, n)).copy_from(&jac.c);
        }
        dgdu.view_mut((k * n, k * m), (n, m)).copy_from(&jac.d);
    }

    dgdx.lu().solve(&(-dgdu)).ok_or(Error::SingularBlock {
        step: 0,
        block: "stacked dg/dx",
        rcond: 0.0,
    })
}

/// Hessian of the reduced objective by central differences of the analytic
/// gradient: every probe re-simulates, recomputes S, and re-evaluates the
/// gradient.
pub fn fd_hessian(
    system: &dyn DynamicalSystem,
    obj: &dyn ObjectiveFunction,
    u: &ControlSequence,
    ic: &InitialConditions,
) -> Result<DMatrix<f64>> {
    let dims = system.dims();
    let m = dims.m;
    let stacked = u.stacked();
    let len = stacked.len();

    let grad_at = |stacked_u: &DVector<f64>| -> Result<DVector<f64>> {
        let u_probe = ControlSequence::from_stacked(stacked_u, m);
        let x_probe = rollout(system, &u_probe, ic)?;
        let derivs = obj.derivatives(&x_probe, &u_probe)?;
        let s = compute_sensitivity(system, &x_probe, &u_probe, ic)?;
        gradient(&derivs, &s)
    };

    let mut hess = DMatrix::zeros(len, len);
    for p in 0..len {
        let e = fd_step(stacked[p]);
        let mut up = stacked.clone();
        let mut um = stacked.clone();
        up[p] += e;
        um[p] -= e;
        let gp = grad_at(&up)?;
        let gm = grad_at(&um)?;
        hess.set_column(p, &((gp - gm) / (2.0 * e)));
    }
    Ok(hess)
}

/// Outcome of one verification in [`run_checks`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Passed,
    Failed,
    Skipped,
}

#[derive(Debug, Clone)]
pub struct DerivativeCheck {
    pub name: &'static str,
    /// Worst observed error (relative or inf-norm, depending on the check).
    pub error: f64,
    pub tolerance: f64,
    pub status: CheckStatus,
    /// Human-readable location of the worst deviation, when known.
    pub detail: String,
}

impl DerivativeCheck {
    fn graded(name: &'static str, error: f64, tolerance: f64, detail: String) -> Self {
        let status = if error <= tolerance {
            CheckStatus::Passed
        } else {
            CheckStatus::Failed
        };
        Self {
            name,
            error,
            tolerance,
            status,
            detail,
        }
    }

    fn skipped(name: &'static str, tolerance: f64, detail: String) -> Self {
        Self {
            name,
            error: 0.0,
            tolerance,
            status: CheckStatus::Skipped,
            detail,
        }
    }
}

/// Run the full verification suite at the iterate defined by `u`:
/// Jacobian blocks vs FD of the residual, gradient vs FD through
/// re-simulation, adjoint vs sensitivity gradient, S vs the dense solve, and
/// (when the system supports it) the exact Hessian vs FD of the gradient.
pub fn run_checks(
    system: &dyn DynamicalSystem,
    obj: &dyn ObjectiveFunction,
    u: &ControlSequence,
    ic: &InitialConditions,
) -> Result<Vec<DerivativeCheck>> {
    let dims = system.dims();
    let x = rollout(system, u, ic)?;
    let mut checks = Vec::new();

    // Jacobian blocks, probed at every step of the rollout.
    let mut worst = (0.0f64, 1usize, "A");
    for k in 0..dims.steps {
        let (err, block) = jacobian_check(system, &x.step_states(u, ic, k))?;
        if err > worst.0 {
            worst = (err, k + 1, block);
        }
    }
    checks.push(DerivativeCheck::graded(
        "jacobian blocks vs fd of residual",
        worst.0,
        JACOBIAN_TOL,
        format!("worst: step {} block {}", worst.1, worst.2),
    ));

    // Second derivatives, same probe points, when available.
    if system.has_second_derivatives() {
        let mut worst = 0.0f64;
        for k in 0..dims.steps {
            worst = worst.max(second_derivative_check(system, &x.step_states(u, ic, k))?);
        }
        checks.push(DerivativeCheck::graded(
            "second derivatives vs fd of jacobians",
            worst,
            SECOND_DERIVATIVE_TOL,
            String::new(),
        ));
    } else {
        checks.push(DerivativeCheck::skipped(
            "second derivatives vs fd of jacobians",
            SECOND_DERIVATIVE_TOL,
            "system has no second derivatives".into(),
        ));
    }

    let derivs = obj.derivatives(&x, u)?;
    let s = compute_sensitivity(system, &x, u, ic)?;
    let grad = gradient(&derivs, &s)?;

    let fd_grad = fd_objective_gradient(system, obj, u, ic)?;
    checks.push(DerivativeCheck::graded(
        "gradient vs fd through re-simulation",
        max_rel_err(
            &DMatrix::from_column_slice(grad.len(), 1, grad.as_slice()),
            &DMatrix::from_column_slice(fd_grad.len(), 1, fd_grad.as_slice()),
        ),
        GRADIENT_TOL,
        String::new(),
    ));

    let adj_grad = adjoint_gradient(system, &x, u, ic, &derivs)?;
    checks.push(DerivativeCheck::graded(
        "adjoint gradient vs sensitivity gradient",
        (&grad - &adj_grad).amax(),
        ADJOINT_TOL,
        String::new(),
    ));

    let s_dense_oracle = dense_sensitivity(system, &x, u, ic)?;
    checks.push(DerivativeCheck::graded(
        "sensitivity vs dense whole-system solve",
        max_abs_err(&s.to_dense(), &s_dense_oracle),
        SENSITIVITY_TOL,
        String::new(),
    ));

    if system.has_second_derivatives() {
        let h = full_hessian(system, &x, u, ic, &derivs, &s)?;
        let h_fd = fd_hessian(system, obj, u, ic)?;
        checks.push(DerivativeCheck::graded(
            "exact hessian vs fd of gradient",
            max_rel_err(h.matrix(), &h_fd),
            HESSIAN_TOL,
            String::new(),
        ));
    } else {
        checks.push(DerivativeCheck::skipped(
            "exact hessian vs fd of gradient",
            HESSIAN_TOL,
            "system has no second derivatives".into(),
        ));
    }

    Ok(checks)
}
