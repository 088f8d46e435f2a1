//! Trajectory optimization for implicitly time-stepped dynamical systems.
//!
//! The state trajectory is defined implicitly by a per-step residual
//! g(x_i, x_{i-1}, x_{i-2}, u_i) = 0 and computed by forward simulation.
//! The implicit function theorem then yields the sensitivity S = dx/du from
//! the banded block structure of dg/dx, and from S the objective gradient,
//! the generalized Gauss-Newton Hessian, and the exact Hessian with its
//! residual-curvature terms. A regularized Newton loop with backtracking
//! line search (every candidate fully re-simulated) drives the controls to
//! a stationary point.
//!
//! Module map:
//! - [`dynamics`]: the system contract, finite-difference kinematics, and
//!   built-in test systems.
//! - [`simulate`]: per-step implicit solves and whole-horizon rollouts.
//! - [`sensitivity`]: S by block forward-substitution, adjoint gradient,
//!   Gauss-Newton and exact Hessians.
//! - [`objectives`]: objective contract and quadratic tracking objectives.
//! - [`optimizer`]: the outer descent loop.
//! - [`check`]: finite-difference and dense-solve verification oracles.

pub mod check;
pub mod dynamics;
mod error;
mod linalg;
pub mod objectives;
pub mod optimizer;
pub mod sensitivity;
pub mod simulate;
#[cfg(test)]
pub(crate) mod test_util;

pub use error::{Error, Result};
