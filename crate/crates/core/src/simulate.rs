//! Forward simulation: produce the state trajectory satisfying the state
//! equation at every step, via chained per-step implicit solves.
//!
//! Steps are numbered 1..=T in the math and reported that way in errors;
//! containers are indexed 0..T internally. The two fixed configurations
//! x_0 and x_{-1} live in [`InitialConditions`], not in the trajectory.

use nalgebra::DVector;

use crate::dynamics::{self, DynamicalSystem, StepStates};
use crate::error::{Error, Result};
use crate::linalg::{self, FactorizedBlock};

/// Convergence threshold for the per-step implicit solve (inf-norm of g).
/// Kept tight so the sensitivity formulas, which assume g = 0 exactly,
/// hold to near machine precision.
pub const STEP_TOLERANCE: f64 = 1e-10;

/// Newton iteration cap for one implicit step.
pub const MAX_NEWTON_ITERS: usize = 50;

/// Step-halving cap inside one damped Newton iteration.
pub const MAX_HALVINGS: usize = 30;

/// The two fixed configurations the rollout starts from.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialConditions {
    pub x0: DVector<f64>,
    pub x_neg1: DVector<f64>,
}

impl InitialConditions {
    pub fn new(x0: DVector<f64>, x_neg1: DVector<f64>) -> Self {
        Self { x0, x_neg1 }
    }

    /// Start at rest: x_{-1} = x_0.
    pub fn at_rest(x0: DVector<f64>) -> Self {
        let x_neg1 = x0.clone();
        Self { x0, x_neg1 }
    }

    /// Start with a finite-difference initial velocity: x_{-1} = x_0 - h * v0.
    pub fn with_velocity(x0: DVector<f64>, v0: &DVector<f64>, h: f64) -> Self {
        let x_neg1 = &x0 - v0 * h;
        Self { x0, x_neg1 }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for (v, ctx) in [(&self.x0, "initial x0"), (&self.x_neg1, "initial x_neg1")] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    context: ctx,
                    expected: n,
                    actual: v.len(),
                });
            }
            if !linalg::all_finite_vec(v) {
                return Err(Error::NonFinite { context: ctx.into() });
            }
        }
        Ok(())
    }
}

/// The optimized-horizon states x_1..x_T (initial conditions excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(states: Vec<DVector<f64>>) -> Self {
        Self { states }
    }

    /// Number of steps T.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// State x_{k+1} for 0-based step index k.
    pub fn state(&self, k: usize) -> &DVector<f64> {
        &self.states[k]
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is non-empty")
    }

    /// Stack all states into one vector of length n * T.
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.states.first().map_or(0, |s| s.len());
        let mut out = DVector::zeros(n * self.states.len());
        for (k, s) in self.states.iter().enumerate() {
            out.rows_mut(k * n, n).copy_from(s);
        }
        out
    }

    pub fn from_stacked(stacked: &DVector<f64>, n: usize) -> Self {
        assert_eq!(stacked.len() % n, 0, "stacked length must be a multiple of n");
        let steps = stacked.len() / n;
        let states = (0..steps)
            .map(|k| stacked.rows(k * n, n).clone_owned())
            .collect();
        Self { states }
    }

    /// Assemble the state-equation arguments for 0-based step k, pulling
    /// missing history from the initial conditions: step 0 sees (x_0, x_{-1}),
    /// step 1 sees (x_1, x_0).
    pub fn step_states(
        &self,
        u: &ControlSequence,
        ic: &InitialConditions,
        k: usize,
    ) -> StepStates {
        let x_i = self.states[k].clone();
        let x_im1 = if k >= 1 {
            self.states[k - 1].clone()
        } else {
            ic.x0.clone()
        };
        let x_im2 = match k {
            0 => ic.x_neg1.clone(),
            1 => ic.x0.clone(),
            _ => self.states[k - 2].clone(),
        };
        StepStates::new(x_i, x_im1, x_im2, u.control(k).clone())
    }
}

/// The control trajectory u_1..u_T.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    controls: Vec<DVector<f64>>,
}

impl ControlSequence {
    pub fn new(controls: Vec<DVector<f64>>) -> Self {
        Self { controls }
    }

    /// All-zero controls, the default starting trajectory.
    pub fn zeros(m: usize, steps: usize) -> Self {
        Self {
            controls: vec![DVector::zeros(m); steps],
        }
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    /// Control u_{k+1} for 0-based step index k.
    pub fn control(&self, k: usize) -> &DVector<f64> {
        &self.controls[k]
    }

    pub fn control_mut(&mut self, k: usize) -> &mut DVector<f64> {
        &mut self.controls[k]
    }

    pub fn controls(&self) -> &[DVector<f64>] {
        &self.controls
    }

    pub fn stacked(&self) -> DVector<f64> {
        let m = self.controls.first().map_or(0, |c| c.len());
        let mut out = DVector::zeros(m * self.controls.len());
        for (k, c) in self.controls.iter().enumerate() {
            out.rows_mut(k * m, m).copy_from(c);
        }
        out
    }

    pub fn from_stacked(stacked: &DVector<f64>, m: usize) -> Self {
        assert_eq!(stacked.len() % m, 0, "stacked length must be a multiple of m");
        let steps = stacked.len() / m;
        let controls = (0..steps)
            .map(|k| stacked.rows(k * m, m).clone_owned())
            .collect();
        Self { controls }
    }

    pub fn validate(&self, m: usize, steps: usize) -> Result<()> {
        if self.controls.len() != steps {
            return Err(Error::DimensionMismatch {
                context: "control sequence length",
                expected: steps,
                actual: self.controls.len(),
            });
        }
        for c in &self.controls {
            if c.len() != m {
                return Err(Error::DimensionMismatch {
                    context: "control vector",
                    expected: m,
                    actual: c.len(),
                });
            }
            if !linalg::all_finite_vec(c) {
                return Err(Error::NonFinite {
                    context: "control vector".into(),
                });
            }
        }
        Ok(())
    }
}

/// Solve one implicit step: find x_i with ||g(x_i, x_{i-1}, x_{i-2}, u_i)||_inf
/// at or below [`STEP_TOLERANCE`], by damped Newton iteration on block A.
///
/// `step` is the 1-based step number, used only in error reports. The guess
/// defaults to x_{i-1}.
pub fn solve_step(
    system: &dyn DynamicalSystem,
    step: usize,
    x_im1: &DVector<f64>,
    x_im2: &DVector<f64>,
    u_i: &DVector<f64>,
    guess: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let mut x = guess.unwrap_or(x_im1).clone();
    let mut s = StepStates::new(x.clone(), x_im1.clone(), x_im2.clone(), u_i.clone());
    let mut g = dynamics::residual(system, &s)?;
    let mut g_norm = linalg::inf_norm(&g);

    for _iter in 0..MAX_NEWTON_ITERS {
        if g_norm <= STEP_TOLERANCE {
            return Ok(x);
        }
        let jac = dynamics::step_jacobians(system, &s)?;
        let a = FactorizedBlock::new(&jac.a, step, "A")?;
        let full_delta = a.solve(&(-&g)).ok_or(Error::SingularBlock {
            step,
            block: "A",
            rcond: 0.0,
        })?;

        // Halve the step until the residual norm decreases.
        let mut accepted = false;
        let mut scale = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let x_try = &x + &full_delta * scale;
            s.x_i = x_try.clone();
            let g_try = dynamics::residual(system, &s)?;
            let g_try_norm = linalg::inf_norm(&g_try);
            if g_try_norm < g_norm {
                x = x_try;
                g = g_try;
                g_norm = g_try_norm;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::StepSolveFailure {
                step,
                iters: MAX_NEWTON_ITERS,
                residual: g_norm,
            });
        }
    }

    if g_norm <= STEP_TOLERANCE {
        Ok(x)
    } else {
        Err(Error::StepSolveFailure {
            step,
            iters: MAX_NEWTON_ITERS,
            residual: g_norm,
        })
    }
}

/// Forward-simulate the whole horizon. Each step is warm-started from the
/// previous converged state; the result is deterministic for fixed inputs.
pub fn rollout(
    system: &dyn DynamicalSystem,
    u: &ControlSequence,
    ic: &InitialConditions,
) -> Result<Trajectory> {
    let dims = system.dims();
    ic.validate(dims.n)?;
    u.validate(dims.m, dims.steps)?;

    let mut states = Vec::with_capacity(dims.steps);
    let mut x_im1 = ic.x0.clone();
    let mut x_im2 = ic.x_neg1.clone();
    for k in 0..dims.steps {
        let x_i = solve_step(system, k + 1, &x_im1, &x_im2, u.control(k), None)?;
        x_im2 = std::mem::replace(&mut x_im1, x_i.clone());
        states.push(x_i);
    }
    Ok(Trajectory::new(states))
}

/// Largest per-step residual inf-norm along a trajectory. A converged rollout
/// certificate is `max_residual_norm(..) <= STEP_TOLERANCE`.
pub fn max_residual_norm(
    system: &dyn DynamicalSystem,
    x: &Trajectory,
    u: &ControlSequence,
    ic: &InitialConditions,
) -> Result<f64> {
    let dims = system.dims();
    ic.validate(dims.n)?;
    u.validate(dims.m, dims.steps)?;
    if x.len() != dims.steps {
        return Err(Error::DimensionMismatch {
            context: "trajectory length",
            expected: dims.steps,
            actual: x.len(),
        });
    }
    let mut worst: f64 = 0.0;
    for k in 0..dims.steps {
        let g = dynamics::residual(system, &x.step_states(u, ic, k))?;
        worst = worst.max(linalg::inf_norm(&g));
    }
    Ok(worst)
}
