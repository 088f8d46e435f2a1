//! The outer descent loop: Hessian (or gradient-only) direction with
//! Cholesky-probe regularization, backtracking line search with full
//! re-simulation of every candidate, and per-iteration reporting.

use std::fmt;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dynamics::DynamicalSystem;
use crate::error::{Error, Result};
use crate::linalg;
use crate::objectives::ObjectiveFunction;
use crate::sensitivity::{
    adjoint_gradient, compute_sensitivity_threaded, full_hessian, gauss_newton_hessian, gradient,
    HessianMatrix,
};
use crate::simulate::{rollout, ControlSequence, InitialConditions, Trajectory};

/// Largest diagonal shift tried before regularization gives up.
pub const REG_LAMBDA_MAX: f64 = 1e12;

/// Accepted steps with inf-norm at or below this (relative to the iterate)
/// terminate the loop.
pub const STEP_FLOOR: f64 = 1e-14;

/// Which curvature model drives the search direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianMode {
    /// Generalized Gauss-Newton Hessian.
    GaussNewton,
    /// Exact Hessian including residual-curvature terms; requires a system
    /// with second derivatives.
    Full,
    /// No curvature: d = -grad. Kept as the first-order comparison baseline.
    GradientDescent,
}

impl fmt::Display for HessianMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HessianMode::GaussNewton => write!(f, "gauss_newton"),
            HessianMode::Full => write!(f, "full"),
            HessianMode::GradientDescent => write!(f, "gradient_descent"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub hessian_mode: HessianMode,
    /// Convergence threshold on the gradient inf-norm.
    pub grad_tol: f64,
    /// Cap on accepted iterations.
    pub max_iters: usize,
    /// Initial line-search step.
    pub ls_alpha0: f64,
    /// Backtracking shrink factor, in (0, 1).
    pub ls_shrink: f64,
    /// Armijo sufficient-decrease constant, in (0, 1).
    pub ls_c1: f64,
    /// Candidates tried before the line search fails.
    pub ls_max_backtracks: usize,
    /// First nonzero diagonal shift in the regularization schedule.
    pub reg_lambda0: f64,
    /// Multiplicative growth of the shift schedule, > 1.
    pub reg_growth: f64,
    /// Worker threads for the sensitivity column solve.
    pub threads: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            hessian_mode: HessianMode::GaussNewton,
            grad_tol: 1e-6,
            max_iters: 200,
            ls_alpha0: 1.0,
            ls_shrink: 0.5,
            ls_c1: 1e-4,
            ls_max_backtracks: 40,
            reg_lambda0: 1e-6,
            reg_growth: 10.0,
            threads: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&'static str, bool); 8] = [
            ("grad_tol", self.grad_tol > 0.0 && self.grad_tol.is_finite()),
            ("ls_alpha0", self.ls_alpha0 > 0.0 && self.ls_alpha0.is_finite()),
            ("ls_shrink", self.ls_shrink > 0.0 && self.ls_shrink < 1.0),
            ("ls_c1", self.ls_c1 > 0.0 && self.ls_c1 < 1.0),
            ("ls_max_backtracks", self.ls_max_backtracks > 0),
            ("reg_lambda0", self.reg_lambda0 > 0.0 && self.reg_lambda0.is_finite()),
            ("reg_growth", self.reg_growth > 1.0 && self.reg_growth.is_finite()),
            ("threads", self.threads > 0),
        ];
        for (what, ok) in checks {
            if !ok {
                return Err(Error::InvalidValue {
                    what,
                    details: "out of range".into(),
                });
            }
        }
        Ok(())
    }
}

/// A positive definite shifted Hessian H + lambda*I, Cholesky-factorized.
pub struct RegularizedHessian {
    chol: Cholesky<f64, Dyn>,
    lambda: f64,
}

impl RegularizedHessian {
    /// The shift that was actually applied.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// The direction, step size, and shift accepted at one iteration.
/// On acceptance the direction satisfies d^T grad < 0.
#[derive(Debug, Clone)]
pub struct SearchState {
    pub direction: DVector<f64>,
    pub alpha: f64,
    pub lambda_used: f64,
}

/// Why the outer loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    /// Gradient inf-norm reached `grad_tol`.
    GradientTolerance,
    /// Accepted-iteration cap reached.
    MaxIterations,
    /// Backtracking exhausted without sufficient decrease.
    LineSearchFailure,
    /// Accepted step fell below the step-size floor.
    StepSizeFloor,
}

impl TerminationReason {
    /// Whether the run converged by tolerance.
    pub fn converged(&self) -> bool {
        matches!(self, TerminationReason::GradientTolerance)
    }
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TerminationReason::GradientTolerance => write!(f, "gradient tolerance reached"),
            TerminationReason::MaxIterations => write!(f, "maximum iterations reached"),
            TerminationReason::LineSearchFailure => write!(f, "line search failed"),
            TerminationReason::StepSizeFloor => write!(f, "step size below floor"),
        }
    }
}

/// One row of the optimization report. `objective` and `grad_inf_norm` are
/// evaluated at the iterate the iteration started from; `alpha` and `lambda`
/// are the accepted step size and shift (zero when no step was taken, e.g.
/// on the terminating record).
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub grad_inf_norm: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub millis: u64,
}

/// Per-iteration records plus the termination reason. Objective values are
/// non-increasing across records: every accepted step satisfies Armijo.
#[derive(Debug, Clone)]
pub struct OptimizationReport {
    pub iterations: Vec<IterationRecord>,
    pub termination: TerminationReason,
    pub total_millis: u64,
}

impl OptimizationReport {
    /// Number of iterations that accepted a step.
    pub fn accepted_iterations(&self) -> usize {
        self.iterations.iter().filter(|r| r.alpha > 0.0).count()
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.iterations.last().map(|r| r.objective)
    }

    pub fn final_grad_norm(&self) -> Option<f64> {
        self.iterations.last().map(|r| r.grad_inf_norm)
    }
}

/// Find the smallest shift lambda in {0, lambda0, lambda0*growth, ...} that
/// makes H + lambda*I Cholesky-factorizable and yields a descent direction
/// for `grad`. Requires a nonzero gradient.
pub fn regularize(
    h: &HessianMatrix,
    grad: &DVector<f64>,
    cfg: &OptimizerConfig,
) -> Result<RegularizedHessian> {
    let dim = h.dim();
    if grad.len() != dim {
        return Err(Error::DimensionMismatch {
            context: "gradient for regularization",
            expected: dim,
            actual: grad.len(),
        });
    }
    let mut lambda = 0.0;
    loop {
        let shifted = if lambda == 0.0 {
            h.matrix().clone()
        } else {
            h.matrix() + DMatrix::identity(dim, dim) * lambda
        };
        if let Some(chol) = Cholesky::new(shifted) {
            let d = chol.solve(&(-grad));
            if linalg::all_finite_vec(&d) && d.dot(grad) < 0.0 {
                return Ok(RegularizedHessian { chol, lambda });
            }
        }
        lambda = if lambda == 0.0 {
            cfg.reg_lambda0
        } else {
            lambda * cfg.reg_growth
        };
        if lambda > REG_LAMBDA_MAX {
            return Err(Error::RegularizationFailure { max: REG_LAMBDA_MAX });
        }
    }
}

/// Solve (H + lambda*I) d = -grad. With `None` the curvature model is the
/// identity and the direction is plain steepest descent.
pub fn search_direction(reg: Option<&RegularizedHessian>, grad: &DVector<f64>) -> DVector<f64> {
    match reg {
        Some(r) => r.chol.solve(&(-grad)),
        None => -grad,
    }
}

/// Backtracking line search with full re-simulation of every candidate.
///
/// Tries alpha in {alpha0, alpha0*shrink, ...} and accepts the first step
/// satisfying the Armijo condition
/// O(x(u + alpha d), u + alpha d) <= O(x(u), u) + c1 * alpha * grad^T d.
/// Candidates whose rollout fails to converge are rejected like any other.
#[allow(clippy::too_many_arguments)]
pub fn line_search(
    system: &dyn DynamicalSystem,
    obj: &dyn ObjectiveFunction,
    u: &ControlSequence,
    x: &Trajectory,
    grad: &DVector<f64>,
    d: &DVector<f64>,
    ic: &InitialConditions,
    cfg: &OptimizerConfig,
) -> Result<(ControlSequence, Trajectory, f64)> {
    let slope = grad.dot(d);
    if slope.is_nan() || slope >= 0.0 {
        return Err(Error::InvalidValue {
            what: "search direction",
            details: format!("not a descent direction (grad . d = {slope:.3e})"),
        });
    }
    let m = system.dims().m;
    let objective = obj.evaluate(x, u)?;
    let u_stacked = u.stacked();

    let mut alpha = cfg.ls_alpha0;
    for _ in 0..cfg.ls_max_backtracks {
        let u_try = ControlSequence::from_stacked(&(&u_stacked + d * alpha), m);
        match rollout(system, &u_try, ic) {
            Ok(x_try) => {
                let o_try = obj.evaluate(&x_try, &u_try)?;
                if o_try <= objective + cfg.ls_c1 * alpha * slope {
                    return Ok((u_try, x_try, alpha));
                }
            }
            // A candidate that leaves the solvable region is rejected like
            // one that fails the Armijo test.
            Err(Error::StepSolveFailure { .. }) | Err(Error::SingularBlock { .. }) => {}
            Err(e) => return Err(e),
        }
        alpha *= cfg.ls_shrink;
    }
    Err(Error::LineSearchFailure {
        backtracks: cfg.ls_max_backtracks,
        objective,
        slope,
    })
}

/// The outer loop: rollout, gradient, Hessian per mode, regularized
/// direction solve, line search; repeated until the gradient tolerance,
/// the iteration cap, or a terminal failure.
///
/// Line-search exhaustion terminates the loop with a reason rather than an
/// error; hard numerical failures propagate, tagged with the iteration.
pub fn optimize(
    system: &dyn DynamicalSystem,
    obj: &dyn ObjectiveFunction,
    u_init: &ControlSequence,
    ic: &InitialConditions,
    cfg: &OptimizerConfig,
) -> Result<(ControlSequence, OptimizationReport)> {
    cfg.validate()?;
    if cfg.hessian_mode == HessianMode::Full && !system.has_second_derivatives() {
        return Err(Error::SecondDerivativesUnavailable);
    }

    let run_start = Instant::now();
    let mut u = u_init.clone();
    let mut x = rollout(system, &u, ic).map_err(|e| e.at_iteration(0))?;

    let mut records: Vec<IterationRecord> = Vec::new();
    let mut iter = 0usize;
    let termination;

    loop {
        let iter_start = Instant::now();
        let wrap = |e: Error| e.at_iteration(iter);

        let objective = obj.evaluate(&x, &u).map_err(wrap)?;
        let derivs = obj.derivatives(&x, &u).map_err(wrap)?;

        let (grad, sens) = match cfg.hessian_mode {
            HessianMode::GradientDescent => {
                (adjoint_gradient(system, &x, &u, ic, &derivs).map_err(wrap)?, None)
            }
            _ => {
                let s = compute_sensitivity_threaded(system, &x, &u, ic, cfg.threads)
                    .map_err(wrap)?;
                (gradient(&derivs, &s).map_err(wrap)?, Some(s))
            }
        };
        let grad_norm = linalg::inf_norm(&grad);

        let record = |alpha: f64, lambda: f64| IterationRecord {
            iter,
            objective,
            grad_inf_norm: grad_norm,
            alpha,
            lambda,
            millis: iter_start.elapsed().as_millis() as u64,
        };

        if grad_norm <= cfg.grad_tol {
            records.push(record(0.0, 0.0));
            termination = TerminationReason::GradientTolerance;
            break;
        }
        if iter >= cfg.max_iters {
            records.push(record(0.0, 0.0));
            termination = TerminationReason::MaxIterations;
            break;
        }

        let (direction, lambda_used) = match cfg.hessian_mode {
            HessianMode::GradientDescent => (search_direction(None, &grad), 0.0),
            HessianMode::GaussNewton => {
                let h = gauss_newton_hessian(&derivs, sens.as_ref().expect("S computed"))
                    .map_err(wrap)?;
                let reg = regularize(&h, &grad, cfg).map_err(wrap)?;
                (search_direction(Some(&reg), &grad), reg.lambda())
            }
            HessianMode::Full => {
                let h = full_hessian(system, &x, &u, ic, &derivs, sens.as_ref().expect("S computed"))
                    .map_err(wrap)?;
                let reg = regularize(&h, &grad, cfg).map_err(wrap)?;
                (search_direction(Some(&reg), &grad), reg.lambda())
            }
        };

        match line_search(system, obj, &u, &x, &grad, &direction, ic, cfg) {
            Ok((u_next, x_next, alpha)) => {
                let search = SearchState {
                    direction,
                    alpha,
                    lambda_used,
                };
                u = u_next;
                x = x_next;
                records.push(record(search.alpha, search.lambda_used));
                iter += 1;

                let step_inf = search.alpha * linalg::inf_norm(&search.direction);
                if step_inf <= STEP_FLOOR * (1.0 + linalg::inf_norm(&u.stacked())) {
                    termination = TerminationReason::StepSizeFloor;
                    break;
                }
            }
            Err(Error::LineSearchFailure { .. }) => {
                records.push(record(0.0, lambda_used));
                termination = TerminationReason::LineSearchFailure;
                break;
            }
            Err(e) => return Err(e.at_iteration(iter)),
        }
    }

    let report = OptimizationReport {
        iterations: records,
        termination,
        total_millis: run_start.elapsed().as_millis() as u64,
    };
    Ok((u, report))
}

#[cfg(test)]
mod tests;
