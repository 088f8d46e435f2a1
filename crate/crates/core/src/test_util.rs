//! Shared helpers for the unit tests: seeded random states and controls.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{StepStates, SystemDims};
use crate::simulate::ControlSequence;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-scale..scale))
}

pub fn rand_step_states(rng: &mut ChaCha8Rng, dims: &SystemDims, scale: f64) -> StepStates {
    StepStates::new(
        rand_vec(rng, dims.n, scale),
        rand_vec(rng, dims.n, scale),
        rand_vec(rng, dims.n, scale),
        rand_vec(rng, dims.m, scale),
    )
}

pub fn rand_controls(
    rng: &mut ChaCha8Rng,
    m: usize,
    steps: usize,
    scale: f64,
) -> ControlSequence {
    ControlSequence::new((0..steps).map(|_| rand_vec(rng, m, scale)).collect())
}

/// Stacked residual of a whole trajectory, built from the residual contract
/// alone (no Jacobians): block k is g(x_{k+1}, x_k, x_{k-1}, u_{k+1}).
pub fn stacked_residual(
    system: &dyn crate::dynamics::DynamicalSystem,
    ic: &crate::simulate::InitialConditions,
    xs: &DVector<f64>,
    us: &DVector<f64>,
) -> DVector<f64> {
    let dims = system.dims();
    let (n, m, steps) = (dims.n, dims.m, dims.steps);
    let x = crate::simulate::Trajectory::from_stacked(xs, n);
    let u = crate::simulate::ControlSequence::from_stacked(us, m);
    let mut out = DVector::zeros(n * steps);
    for k in 0..steps {
        let g = crate::dynamics::residual(system, &x.step_states(&u, ic, k)).unwrap();
        out.rows_mut(k * n, n).copy_from(&g);
    }
    out
}

/// For affine dynamics, recover the stacked system g(x, u) = Gx x + Gu u + r0
/// by probing the residual at zero and at unit vectors. Serves as a dense
/// whole-trajectory oracle that never touches the analytic Jacobians.
pub fn stacked_affine_parts(
    system: &dyn crate::dynamics::DynamicalSystem,
    ic: &crate::simulate::InitialConditions,
) -> (
    nalgebra::DMatrix<f64>,
    nalgebra::DMatrix<f64>,
    DVector<f64>,
) {
    let dims = system.dims();
    let (state_len, control_len) = (dims.state_len(), dims.control_len());
    let zero_x = DVector::zeros(state_len);
    let zero_u = DVector::zeros(control_len);
    let r0 = stacked_residual(system, ic, &zero_x, &zero_u);

    let mut gx = nalgebra::DMatrix::zeros(state_len, state_len);
    for j in 0..state_len {
        let mut e = zero_x.clone();
        e[j] = 1.0;
        gx.set_column(j, &(stacked_residual(system, ic, &e, &zero_u) - &r0));
    }
    let mut gu = nalgebra::DMatrix::zeros(state_len, control_len);
    for j in 0..control_len {
        let mut e = zero_u.clone();
        e[j] = 1.0;
        gu.set_column(j, &(stacked_residual(system, ic, &zero_x, &e) - &r0));
    }
    (gx, gu, r0)
}
