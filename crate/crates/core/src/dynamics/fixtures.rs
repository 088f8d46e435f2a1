//! Built-in test systems.
//!
//! Every fixture follows the sign convention
//! g = (inertial + damping + internal forces) - control forcing,
//! so dg/du is minus the control map.

use nalgebra::{DMatrix, DVector};

use super::{
    fd_acceleration, fd_velocity, DynamicalSystem, StepJacobians, StepSecondDerivatives,
    StepStates, SystemDims, Tensor3,
};
use crate::error::Result;

/// Damped pendulum with gravity torque, n = m = 1:
/// g = M * acc + c * vel + k * sin(x_i) - u_i.
#[derive(Debug, Clone)]
pub struct Pendulum {
    pub mass: f64,
    pub damping: f64,
    pub gravity: f64,
    dims: SystemDims,
}

impl Pendulum {
    pub fn new(steps: usize, h: f64) -> Result<Self> {
        Self::with_params(1.0, 0.1, 9.81, steps, h)
    }

    pub fn with_params(mass: f64, damping: f64, gravity: f64, steps: usize, h: f64) -> Result<Self> {
        Ok(Self {
            mass,
            damping,
            gravity,
            dims: SystemDims::new(1, 1, steps, h)?,
        })
    }
}

impl DynamicalSystem for Pendulum {
    fn dims(&self) -> SystemDims {
        self.dims
    }

    fn has_second_derivatives(&self) -> bool {
        true
    }

    fn eval_residual(&self, s: &StepStates) -> DVector<f64> {
        let h = self.dims.h;
        let acc = fd_acceleration(&s.x_i, &s.x_im1, &s.x_im2, h);
        let vel = fd_velocity(&s.x_i, &s.x_im1, h);
        let mut g = acc * self.mass + vel * self.damping;
        g[0] += self.gravity * s.x_i[0].sin() - s.u_i[0];
        g
    }

    fn eval_jacobians(&self, s: &StepStates) -> StepJacobians {
        let h = self.dims.h;
        let h2 = h * h;
        StepJacobians {
            a: DMatrix::from_element(
                1,
                1,
                self.mass / h2 + self.damping / h + self.gravity * s.x_i[0].cos(),
            ),
            b: DMatrix::from_element(1, 1, -2.0 * self.mass / h2 - self.damping / h),
            c: DMatrix::from_element(1, 1, self.mass / h2),
            d: DMatrix::from_element(1, 1, -1.0),
        }
    }

    fn eval_second_derivatives(&self, s: &StepStates) -> StepSecondDerivatives {
        // Only the gravity term is nonlinear: d2g/dx_i^2 = -k * sin(x_i).
        let mut sd = StepSecondDerivatives::zero();
        let mut t = Tensor3::zeros(1, 1, 1);
        t.slice_mut(0)[(0, 0)] = -self.gravity * s.x_i[0].sin();
        sd.gxx.insert((0, 0), t);
        sd
    }
}

/// Chain of point masses coupled by springs with fixed ends, n = m = nodes:
/// g = M * acc + c * vel + K * x_i - P * u_i with tridiagonal stiffness K
/// and diagonal control map P.
#[derive(Debug, Clone)]
pub struct MassSpringChain {
    pub mass: f64,
    pub damping: f64,
    pub stiffness: f64,
    pub control_gain: f64,
    k_matrix: DMatrix<f64>,
    dims: SystemDims,
}

impl MassSpringChain {
    pub fn new(nodes: usize, steps: usize, h: f64) -> Result<Self> {
        Self::with_params(1.0, 0.2, 20.0, 1.0, nodes, steps, h)
    }

    pub fn with_params(
        mass: f64,
        damping: f64,
        stiffness: f64,
        control_gain: f64,
        nodes: usize,
        steps: usize,
        h: f64,
    ) -> Result<Self> {
        let dims = SystemDims::new(nodes, nodes, steps, h)?;
        let k_matrix = DMatrix::from_fn(nodes, nodes, |i, j| {
            if i == j {
                2.0 * stiffness
            } else if i.abs_diff(j) == 1 {
                -stiffness
            } else {
                0.0
            }
        });
        Ok(Self {
            mass,
            damping,
            stiffness,
            control_gain,
            k_matrix,
            dims,
        })
    }

    pub fn stiffness_matrix(&self) -> &DMatrix<f64> {
        &self.k_matrix
    }
}

impl DynamicalSystem for MassSpringChain {
    fn dims(&self) -> SystemDims {
        self.dims
    }

    fn has_second_derivatives(&self) -> bool {
        true
    }

    fn eval_residual(&self, s: &StepStates) -> DVector<f64> {
        let h = self.dims.h;
        let acc = fd_acceleration(&s.x_i, &s.x_im1, &s.x_im2, h);
        let vel = fd_velocity(&s.x_i, &s.x_im1, h);
        acc * self.mass + vel * self.damping + &self.k_matrix * &s.x_i
            - &s.u_i * self.control_gain
    }

    fn eval_jacobians(&self, _s: &StepStates) -> StepJacobians {
        let n = self.dims.n;
        let h = self.dims.h;
        let h2 = h * h;
        let eye = DMatrix::<f64>::identity(n, n);
        StepJacobians {
            a: &eye * (self.mass / h2 + self.damping / h) + &self.k_matrix,
            b: &eye * (-2.0 * self.mass / h2 - self.damping / h),
            c: &eye * (self.mass / h2),
            d: &eye * (-self.control_gain),
        }
    }

    fn eval_second_derivatives(&self, _s: &StepStates) -> StepSecondDerivatives {
        StepSecondDerivatives::zero()
    }
}

/// Planar double integrator, n = m = 2: g = M * acc - u_i.
/// Linear with a quadratic objective, this is the closed-form LQ fixture.
#[derive(Debug, Clone)]
pub struct PointMass2d {
    pub mass: f64,
    dims: SystemDims,
}

impl PointMass2d {
    pub fn new(steps: usize, h: f64) -> Result<Self> {
        Self::with_params(1.0, steps, h)
    }

    pub fn with_params(mass: f64, steps: usize, h: f64) -> Result<Self> {
        Ok(Self {
            mass,
            dims: SystemDims::new(2, 2, steps, h)?,
        })
    }
}

impl DynamicalSystem for PointMass2d {
    fn dims(&self) -> SystemDims {
        self.dims
    }

    fn has_second_derivatives(&self) -> bool {
        true
    }

    fn eval_residual(&self, s: &StepStates) -> DVector<f64> {
        fd_acceleration(&s.x_i, &s.x_im1, &s.x_im2, self.dims.h) * self.mass - &s.u_i
    }

    fn eval_jacobians(&self, _s: &StepStates) -> StepJacobians {
        let h2 = self.dims.h * self.dims.h;
        let eye = DMatrix::<f64>::identity(2, 2);
        StepJacobians {
            a: &eye * (self.mass / h2),
            b: &eye * (-2.0 * self.mass / h2),
            c: &eye * (self.mass / h2),
            d: -eye,
        }
    }

    fn eval_second_derivatives(&self, _s: &StepStates) -> StepSecondDerivatives {
        StepSecondDerivatives::zero()
    }
}

/// Wrapper that masks the second-derivative capability of a system, forcing
/// the first-order-only code paths (adjoint gradients, Gauss-Newton).
#[derive(Debug, Clone)]
pub struct WithoutSecondDerivatives<S>(pub S);

impl<S: DynamicalSystem> DynamicalSystem for WithoutSecondDerivatives<S> {
    fn dims(&self) -> SystemDims {
        self.0.dims()
    }

    fn eval_residual(&self, s: &StepStates) -> DVector<f64> {
        self.0.eval_residual(s)
    }

    fn eval_jacobians(&self, s: &StepStates) -> StepJacobians {
        self.0.eval_jacobians(s)
    }
}

/// Diagnostic wrapper that deliberately perturbs one Jacobian entry while
/// leaving the residual honest. Derivative checks must flag block A on it;
/// it exists to validate that detection and is not a real system.
#[derive(Debug, Clone)]
pub struct CorruptedJacobian<S> {
    inner: S,
    pub perturbation: f64,
}

impl<S: DynamicalSystem> CorruptedJacobian<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            perturbation: 0.5,
        }
    }
}

impl<S: DynamicalSystem> DynamicalSystem for CorruptedJacobian<S> {
    fn dims(&self) -> SystemDims {
        self.inner.dims()
    }

    fn has_second_derivatives(&self) -> bool {
        self.inner.has_second_derivatives()
    }

    fn eval_residual(&self, s: &StepStates) -> DVector<f64> {
        self.inner.eval_residual(s)
    }

    fn eval_jacobians(&self, s: &StepStates) -> StepJacobians {
        let mut jac = self.inner.eval_jacobians(s);
        jac.a[(0, 0)] += self.perturbation;
        jac
    }

    fn eval_second_derivatives(&self, s: &StepStates) -> StepSecondDerivatives {
        self.inner.eval_second_derivatives(s)
    }
}
