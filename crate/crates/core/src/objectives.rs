//! Objective-function contract and built-in quadratic objectives.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::sensitivity::ObjectiveDerivatives;
use crate::simulate::{ControlSequence, Trajectory};

/// Scalar objective O(x, u) over a whole trajectory, with analytic first and
/// second partials. Implementations are pure and safe to evaluate
/// concurrently.
pub trait ObjectiveFunction: Sync {
    fn evaluate(&self, x: &Trajectory, u: &ControlSequence) -> Result<f64>;
    fn derivatives(&self, x: &Trajectory, u: &ControlSequence) -> Result<ObjectiveDerivatives>;
}

/// Which states the tracking term penalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackingMode {
    /// Penalize only the final state x_T (the default).
    Terminal,
    /// Sum the state penalty over every step.
    FullTrajectory,
}

/// Quadratic tracking objective
/// O = 1/2 (x - x*)^T Q (x - x*) [terminal or summed] + rho/2 * sum_i |u_i|^2.
///
/// Q is required to be symmetric positive semidefinite and rho nonnegative,
/// so d2O/dx2 is PSD and d2O/du2 = rho * I; with rho > 0 the assembled
/// Gauss-Newton Hessian is positive definite. The mixed partial d2O/dxdu is
/// identically zero.
#[derive(Debug, Clone)]
pub struct QuadraticTrackingObjective {
    target: DVector<f64>,
    q: DMatrix<f64>,
    rho: f64,
    mode: TrackingMode,
}

impl QuadraticTrackingObjective {
    pub fn new(target: DVector<f64>, q: DMatrix<f64>, rho: f64, mode: TrackingMode) -> Result<Self> {
        let n = target.len();
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "objective weight Q",
                expected: n,
                actual: q.nrows().max(q.ncols()),
            });
        }
        if !linalg::all_finite_mat(&q) || !linalg::all_finite_vec(&target) {
            return Err(Error::NonFinite {
                context: "objective parameters".into(),
            });
        }
        let scale = 1.0 + q.amax();
        if (&q - q.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidValue {
                what: "objective weight Q",
                details: "must be symmetric".into(),
            });
        }
        let min_eig = q
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 * scale {
            return Err(Error::InvalidValue {
                what: "objective weight Q",
                details: format!("must be positive semidefinite (min eigenvalue {min_eig:.3e})"),
            });
        }
        if !rho.is_finite() || rho < 0.0 {
            return Err(Error::InvalidValue {
                what: "control-effort weight rho",
                details: format!("must be finite and nonnegative, got {rho}"),
            });
        }
        Ok(Self { target, q, rho, mode })
    }

    /// Quadratic tracking with a diagonal Q.
    pub fn with_diagonal(
        target: DVector<f64>,
        q_diag: &DVector<f64>,
        rho: f64,
        mode: TrackingMode,
    ) -> Result<Self> {
        if q_diag.len() != target.len() {
            return Err(Error::DimensionMismatch {
                context: "objective q_diag",
                expected: target.len(),
                actual: q_diag.len(),
            });
        }
        let q = DMatrix::from_diagonal(q_diag);
        Self::new(target, q, rho, mode)
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn mode(&self) -> TrackingMode {
        self.mode
    }

    fn check_dims(&self, x: &Trajectory, u: &ControlSequence) -> Result<(usize, usize, usize)> {
        let n = self.target.len();
        let steps = x.len();
        if steps == 0 {
            return Err(Error::InvalidValue {
                what: "trajectory",
                details: "must contain at least one step".into(),
            });
        }
        if u.len() != steps {
            return Err(Error::DimensionMismatch {
                context: "control sequence length",
                expected: steps,
                actual: u.len(),
            });
        }
        for s in x.states() {
            if s.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "trajectory state",
                    expected: n,
                    actual: s.len(),
                });
            }
        }
        let m = u.control(0).len();
        for c in u.controls() {
            if c.len() != m {
                return Err(Error::DimensionMismatch {
                    context: "control vector",
                    expected: m,
                    actual: c.len(),
                });
            }
        }
        Ok((n, m, steps))
    }
}

impl ObjectiveFunction for QuadraticTrackingObjective {
    fn evaluate(&self, x: &Trajectory, u: &ControlSequence) -> Result<f64> {
        let (_, _, steps) = self.check_dims(x, u)?;
        let state_term: f64 = match self.mode {
            TrackingMode::Terminal => {
                let e = x.final_state() - &self.target;
                0.5 * e.dot(&(&self.q * &e))
            }
            TrackingMode::FullTrajectory => (0..steps)
                .map(|k| {
                    let e = x.state(k) - &self.target;
                    0.5 * e.dot(&(&self.q * &e))
                })
                .sum(),
        };
        let control_term: f64 =
            0.5 * self.rho * u.controls().iter().map(|c| c.norm_squared()).sum::<f64>();
        let value = state_term + control_term;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: "objective value".into(),
            });
        }
        Ok(value)
    }

    fn derivatives(&self, x: &Trajectory, u: &ControlSequence) -> Result<ObjectiveDerivatives> {
        let (n, m, steps) = self.check_dims(x, u)?;
        let mut grad_x = DVector::zeros(n * steps);
        let mut hess_xx = DMatrix::zeros(n * steps, n * steps);

        let mut add_state_block = |k: usize| {
            let e = x.state(k) - &self.target;
            grad_x.rows_mut(k * n, n).copy_from(&(&self.q * e));
            hess_xx
                .view_mut((k * n, k * n), (n, n))
                .copy_from(&self.q);
        };
        match self.mode {
            TrackingMode::Terminal => add_state_block(steps - 1),
            TrackingMode::FullTrajectory => (0..steps).for_each(add_state_block),
        }

        let grad_u = u.stacked() * self.rho;
        let hess_uu = DMatrix::identity(m * steps, m * steps) * self.rho;
        let hess_xu = DMatrix::zeros(n * steps, m * steps);

        Ok(ObjectiveDerivatives {
            grad_x,
            grad_u,
            hess_xx,
            hess_xu,
            hess_uu,
        })
    }
}
