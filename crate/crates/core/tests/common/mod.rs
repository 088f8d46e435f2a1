//! Shared oracle helpers for the integration suites. Everything here reaches
//! its result through the residual contract and dense linear algebra only,
//! independent of the block-structured solvers under test.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trajopt::dynamics::DynamicalSystem;
use trajopt::simulate::{ControlSequence, InitialConditions, Trajectory};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-scale..scale))
}

pub fn rand_controls(rng: &mut ChaCha8Rng, m: usize, steps: usize, scale: f64) -> ControlSequence {
    ControlSequence::new((0..steps).map(|_| rand_vec(rng, m, scale)).collect())
}

/// Stacked residual of a whole trajectory, from the residual contract alone.
pub fn stacked_residual(
    system: &dyn DynamicalSystem,
    ic: &InitialConditions,
    xs: &DVector<f64>,
    us: &DVector<f64>,
) -> DVector<f64> {
    let dims = system.dims();
    let (n, m, steps) = (dims.n, dims.m, dims.steps);
    let x = Trajectory::from_stacked(xs, n);
    let u = ControlSequence::from_stacked(us, m);
    let mut out = DVector::zeros(n * steps);
    for k in 0..steps {
        let g = trajopt::dynamics::residual(system, &x.step_states(&u, ic, k)).unwrap();
        out.rows_mut(k * n, n).copy_from(&g);
    }
    out
}

/// Recover the stacked affine system g(x, u) = Gx x + Gu u + r0 by probing
/// the residual at zero and at unit vectors. Only valid for linear fixtures.
pub fn stacked_affine_parts(
    system: &dyn DynamicalSystem,
    ic: &InitialConditions,
) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let dims = system.dims();
    let (state_len, control_len) = (dims.state_len(), dims.control_len());
    let zero_x = DVector::zeros(state_len);
    let zero_u = DVector::zeros(control_len);
    let r0 = stacked_residual(system, ic, &zero_x, &zero_u);

    let mut gx = DMatrix::zeros(state_len, state_len);
    for j in 0..state_len {
        let mut e = zero_x.clone();
        e[j] = 1.0;
        gx.set_column(j, &(stacked_residual(system, ic, &e, &zero_u) - &r0));
    }
    let mut gu = DMatrix::zeros(state_len, control_len);
    for j in 0..control_len {
        let mut e = zero_u.clone();
        e[j] = 1.0;
        gu.set_column(j, &(stacked_residual(system, ic, &zero_x, &e) - &r0));
    }
    (gx, gu, r0)
}

/// Closed-form optimum of a linear-dynamics, terminal-quadratic problem:
/// minimize 1/2 (x_T - target)^T Q (x_T - target) + rho/2 |u|^2 subject to
/// the affine dynamics, solved densely.
pub fn lq_analytic_optimum(
    system: &dyn DynamicalSystem,
    target: &DVector<f64>,
    q: &DMatrix<f64>,
    rho: f64,
    ic: &InitialConditions,
) -> DVector<f64> {
    let dims = system.dims();
    let (n, steps) = (dims.n, dims.steps);
    let (gx, gu, r0) = stacked_affine_parts(system, ic);
    let gx_lu = gx.lu();
    let s = gx_lu.solve(&(-&gu)).unwrap();
    let x_free = gx_lu.solve(&(-&r0)).unwrap();

    let s_term = s.rows((steps - 1) * n, n).clone_owned();
    let x_term_free = x_free.rows((steps - 1) * n, n).clone_owned();

    let lhs = s_term.tr_mul(&(q * &s_term))
        + DMatrix::identity(dims.control_len(), dims.control_len()) * rho;
    let rhs = -s_term.tr_mul(&(q * (x_term_free - target)));
    lhs.lu().solve(&rhs).unwrap()
}

/// Print one pass/fail line for an acceptance criterion, then enforce it.
pub fn criterion(number: u32, description: &str, pass: bool, detail: &str) {
    println!(
        "criterion {number} [{}] {description}: {detail}",
        if pass { "PASS" } else { "FAIL" },
    );
    assert!(pass, "criterion {number} failed: {description} ({detail})");
}
