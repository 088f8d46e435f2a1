//! Dynamical-system contract: the per-step state equation and its derivatives.
//!
//! A system is described by a residual g(x_i, x_{i-1}, x_{i-2}, u_i) that is
//! zero exactly when step i satisfies the discretized equations of motion.
//! Velocity and acceleration are first-order finite differences of the
//! position states, which is why the residual sees three consecutive
//! configurations plus the control for the step.
//!
//! Implementations supply analytic first derivatives (and, optionally, second
//! derivatives) of the residual. Finite-difference probes of these contracts
//! live in [`crate::check`] and in the test suite; they are verification
//! tools, not a substitute for the analytic implementations.

pub mod fixtures;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Problem dimensions shared by every module.
///
/// `n` states and `m` controls per step, `steps` time steps of size `h`.
/// The stacked state vector has length `n * steps`, the stacked control
/// vector `m * steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemDims {
    pub n: usize,
    pub m: usize,
    pub steps: usize,
    pub h: f64,
}

impl SystemDims {
    pub fn new(n: usize, m: usize, steps: usize, h: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidValue {
                what: "state dimension n",
                details: "must be at least 1".into(),
            });
        }
        if m == 0 {
            return Err(Error::InvalidValue {
                what: "control dimension m",
                details: "must be at least 1".into(),
            });
        }
        if steps == 0 {
            return Err(Error::InvalidValue {
                what: "step count",
                details: "must be at least 1".into(),
            });
        }
        if !h.is_finite() || h <= 0.0 {
            return Err(Error::InvalidValue {
                what: "time step h",
                details: format!("must be finite and positive, got {h}"),
            });
        }
        Ok(Self { n, m, steps, h })
    }

    /// Length of the stacked state vector, n * steps.
    pub fn state_len(&self) -> usize {
        self.n * self.steps
    }

    /// Length of the stacked control vector, m * steps.
    pub fn control_len(&self) -> usize {
        self.m * self.steps
    }
}

/// Arguments of the state equation at one step: the configuration being
/// solved for, the two preceding configurations, and the step's control.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStates {
    pub x_i: DVector<f64>,
    pub x_im1: DVector<f64>,
    pub x_im2: DVector<f64>,
    pub u_i: DVector<f64>,
}

impl StepStates {
    pub fn new(
        x_i: DVector<f64>,
        x_im1: DVector<f64>,
        x_im2: DVector<f64>,
        u_i: DVector<f64>,
    ) -> Self {
        Self {
            x_i,
            x_im1,
            x_im2,
            u_i,
        }
    }

    pub fn validate(&self, dims: &SystemDims) -> Result<()> {
        for (v, ctx) in [
            (&self.x_i, "step states x_i"),
            (&self.x_im1, "step states x_im1"),
            (&self.x_im2, "step states x_im2"),
        ] {
            if v.len() != dims.n {
                return Err(Error::DimensionMismatch {
                    context: ctx,
                    expected: dims.n,
                    actual: v.len(),
                });
            }
            if !linalg::all_finite_vec(v) {
                return Err(Error::NonFinite { context: ctx.into() });
            }
        }
        if self.u_i.len() != dims.m {
            return Err(Error::DimensionMismatch {
                context: "step states u_i",
                expected: dims.m,
                actual: self.u_i.len(),
            });
        }
        if !linalg::all_finite_vec(&self.u_i) {
            return Err(Error::NonFinite {
                context: "step states u_i".into(),
            });
        }
        Ok(())
    }
}

/// First derivatives of the residual at one step.
///
/// `a` = dg/dx_i (n x n), `b` = dg/dx_{i-1} (n x n), `c` = dg/dx_{i-2}
/// (n x n), `d` = dg/du_i (n x m). These are the only nonzero blocks of the
/// stacked Jacobians dg/dx and dg/du, which is what gives the whole-trajectory
/// system its banded block-triangular structure.
#[derive(Debug, Clone, PartialEq)]
pub struct StepJacobians {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StepJacobians {
    pub fn validate(&self, dims: &SystemDims) -> Result<()> {
        for (m, ctx) in [
            (&self.a, "jacobian block A"),
            (&self.b, "jacobian block B"),
            (&self.c, "jacobian block C"),
        ] {
            if m.nrows() != dims.n || m.ncols() != dims.n {
                return Err(Error::DimensionMismatch {
                    context: ctx,
                    expected: dims.n,
                    actual: if m.nrows() != dims.n { m.nrows() } else { m.ncols() },
                });
            }
            if !linalg::all_finite_mat(m) {
                return Err(Error::NonFinite { context: ctx.into() });
            }
        }
        if self.d.nrows() != dims.n || self.d.ncols() != dims.m {
            return Err(Error::DimensionMismatch {
                context: "jacobian block D",
                expected: dims.m,
                actual: self.d.ncols(),
            });
        }
        if !linalg::all_finite_mat(&self.d) {
            return Err(Error::NonFinite {
                context: "jacobian block D".into(),
            });
        }
        Ok(())
    }
}

/// Third-order tensor stored as one matrix slice per residual row:
/// `slice(r)[(j, k)]` is the (j, k) second partial of residual row r.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    slices: Vec<DMatrix<f64>>,
}

impl Tensor3 {
    pub fn zeros(rows: usize, d1: usize, d2: usize) -> Self {
        Self {
            slices: vec![DMatrix::zeros(d1, d2); rows],
        }
    }

    /// Build from per-row slices; all slices must share one shape.
    pub fn from_slices(slices: Vec<DMatrix<f64>>) -> Self {
        if let Some(first) = slices.first() {
            let (d1, d2) = first.shape();
            assert!(
                slices.iter().all(|s| s.shape() == (d1, d2)),
                "tensor slices must share one shape"
            );
        }
        Self { slices }
    }

    pub fn rows(&self) -> usize {
        self.slices.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.slices.first().map_or((0, 0), |s| s.shape())
    }

    pub fn slice(&self, r: usize) -> &DMatrix<f64> {
        &self.slices[r]
    }

    pub fn slice_mut(&mut self, r: usize) -> &mut DMatrix<f64> {
        &mut self.slices[r]
    }

    /// Contract the row index with a weight vector: sum_r w[r] * slice(r).
    pub fn contract_rows(&self, w: &DVector<f64>) -> DMatrix<f64> {
        assert_eq!(w.len(), self.slices.len(), "weight length must match rows");
        let (d1, d2) = self.shape();
        let mut out = DMatrix::zeros(d1, d2);
        for (r, slice) in self.slices.iter().enumerate() {
            out += slice * w[r];
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.slices.iter().all(|s| s.iter().all(|&x| x == 0.0))
    }

    fn all_finite(&self) -> bool {
        self.slices.iter().all(linalg::all_finite_mat)
    }
}

/// Second derivatives of the residual at one step, stored sparsely by lag.
///
/// Lags index the state arguments: lag 0 is x_i, lag 1 is x_{i-1}, lag 2 is
/// x_{i-2}. `gxx[(a, b)]` holds d2g / dx_{i-a} dx_{i-b} as an n x n x n
/// tensor; a missing entry means the block is identically zero. `gxu[a]`
/// holds d2g / dx_{i-a} du_i (n x n x m) and `guu` holds d2g / du_i^2
/// (n x m x m).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepSecondDerivatives {
    pub gxx: BTreeMap<(usize, usize), Tensor3>,
    pub gxu: BTreeMap<usize, Tensor3>,
    pub guu: Option<Tensor3>,
}

impl StepSecondDerivatives {
    /// All-zero second derivatives (every block absent).
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.gxx.values().all(Tensor3::is_zero)
            && self.gxu.values().all(Tensor3::is_zero)
            && self.guu.as_ref().is_none_or(Tensor3::is_zero)
    }

    /// Shape, lag-range, finiteness, and exchange-symmetry checks.
    ///
    /// Symmetry is exact: gxx[(a, b)] must equal gxx[(b, a)] with the trailing
    /// indices transposed, and each guu slice must be symmetric.
    pub fn validate(&self, dims: &SystemDims) -> Result<()> {
        let (n, m) = (dims.n, dims.m);
        for (&(a, b), t) in &self.gxx {
            if a > 2 || b > 2 {
                return Err(Error::InvalidValue {
                    what: "second-derivative lag",
                    details: format!("gxx lag pair ({a}, {b}) outside 0..=2"),
                });
            }
            if t.rows() != n || t.shape() != (n, n) {
                return Err(Error::DimensionMismatch {
                    context: "gxx tensor block",
                    expected: n,
                    actual: t.rows(),
                });
            }
            if !t.all_finite() {
                return Err(Error::NonFinite {
                    context: format!("gxx[({a}, {b})]"),
                });
            }
            // Exchange symmetry against the mirrored block (absent = zero).
            let mirror = self.gxx.get(&(b, a));
            for r in 0..n {
                let slice = t.slice(r);
                let ok = match mirror {
                    Some(mt) => slice.transpose() == *mt.slice(r),
                    None => slice.iter().all(|&x| x == 0.0),
                };
                if !ok {
                    return Err(Error::InvalidValue {
                        what: "second-derivative symmetry",
                        details: format!("gxx[({a}, {b})] row {r} is not the transpose of gxx[({b}, {a})]"),
                    });
                }
            }
        }
        for (&a, t) in &self.gxu {
            if a > 2 {
                return Err(Error::InvalidValue {
                    what: "second-derivative lag",
                    details: format!("gxu lag {a} outside 0..=2"),
                });
            }
            if t.rows() != n || t.shape() != (n, m) {
                return Err(Error::DimensionMismatch {
                    context: "gxu tensor block",
                    expected: n,
                    actual: t.rows(),
                });
            }
            if !t.all_finite() {
                return Err(Error::NonFinite {
                    context: format!("gxu[{a}]"),
                });
            }
        }
        if let Some(t) = &self.guu {
            if t.rows() != n || t.shape() != (m, m) {
                return Err(Error::DimensionMismatch {
                    context: "guu tensor block",
                    expected: n,
                    actual: t.rows(),
                });
            }
            if !t.all_finite() {
                return Err(Error::NonFinite {
                    context: "guu".into(),
                });
            }
            for r in 0..n {
                if t.slice(r).transpose() != *t.slice(r) {
                    return Err(Error::InvalidValue {
                        what: "second-derivative symmetry",
                        details: format!("guu row {r} is not symmetric"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// The dynamical-system contract.
///
/// Implementations must be safe for concurrent read-only evaluation: all
/// methods are pure functions of their arguments (hence the `Sync` bound),
/// and the residual is expected to be twice continuously differentiable on
/// the domain of use.
///
/// The `eval_*` methods do the raw math and may assume dimension-checked
/// inputs; library code calls them through the checked entry points
/// [`residual`], [`step_jacobians`], and [`step_second_derivatives`].
pub trait DynamicalSystem: Sync {
    fn dims(&self) -> SystemDims;

    /// Whether [`DynamicalSystem::eval_second_derivatives`] is implemented.
    /// The exact-Hessian path is refused for systems that return false.
    fn has_second_derivatives(&self) -> bool {
        false
    }

    /// State-equation residual g(x_i, x_{i-1}, x_{i-2}, u_i).
    fn eval_residual(&self, s: &StepStates) -> DVector<f64>;

    /// Analytic first derivatives of the residual at `s`.
    fn eval_jacobians(&self, s: &StepStates) -> StepJacobians;

    /// Analytic second derivatives of the residual at `s`.
    /// Only called when `has_second_derivatives()` is true.
    fn eval_second_derivatives(&self, s: &StepStates) -> StepSecondDerivatives {
        let _ = s;
        unimplemented!("system reports has_second_derivatives() = false")
    }
}

/// First-order finite-difference velocity (x_i - x_{i-1}) / h.
pub fn fd_velocity(x_i: &DVector<f64>, x_im1: &DVector<f64>, h: f64) -> DVector<f64> {
    assert!(h > 0.0, "time step h must be positive");
    assert_eq!(x_i.len(), x_im1.len(), "state dimensions must match");
    (x_i - x_im1) / h
}

/// First-order finite-difference acceleration (x_i - 2 x_{i-1} + x_{i-2}) / h^2.
pub fn fd_acceleration(
    x_i: &DVector<f64>,
    x_im1: &DVector<f64>,
    x_im2: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    assert!(h > 0.0, "time step h must be positive");
    assert_eq!(x_i.len(), x_im1.len(), "state dimensions must match");
    assert_eq!(x_i.len(), x_im2.len(), "state dimensions must match");
    (x_i - x_im1 * 2.0 + x_im2) / (h * h)
}

/// Evaluate the state-equation residual with dimension and finiteness checks.
pub fn residual(system: &dyn DynamicalSystem, s: &StepStates) -> Result<DVector<f64>> {
    let dims = system.dims();
    s.validate(&dims)?;
    let g = system.eval_residual(s);
    if g.len() != dims.n {
        return Err(Error::DimensionMismatch {
            context: "residual output",
            expected: dims.n,
            actual: g.len(),
        });
    }
    if !linalg::all_finite_vec(&g) {
        return Err(Error::NonFinite {
            context: "residual output".into(),
        });
    }
    Ok(g)
}

/// Evaluate the analytic residual Jacobians with dimension and finiteness checks.
pub fn step_jacobians(system: &dyn DynamicalSystem, s: &StepStates) -> Result<StepJacobians> {
    let dims = system.dims();
    s.validate(&dims)?;
    let jac = system.eval_jacobians(s);
    jac.validate(&dims)?;
    Ok(jac)
}

/// Evaluate the analytic second derivatives with capability, dimension, and
/// symmetry checks. Errors with [`Error::SecondDerivativesUnavailable`] when
/// the system only supplies first derivatives.
pub fn step_second_derivatives(
    system: &dyn DynamicalSystem,
    s: &StepStates,
) -> Result<StepSecondDerivatives> {
    if !system.has_second_derivatives() {
        return Err(Error::SecondDerivativesUnavailable);
    }
    let dims = system.dims();
    s.validate(&dims)?;
    let sd = system.eval_second_derivatives(s);
    sd.validate(&dims)?;
    Ok(sd)
}
