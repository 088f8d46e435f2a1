//! Trajectory sensitivity analysis.
//!
//! With the state equation satisfied along a trajectory, the implicit
//! function theorem gives the sensitivity S = dx/du as the solution of
//! dg/dx * S = -dg/du. Because each step's residual only sees x_i, x_{i-1},
//! x_{i-2} and u_i, dg/dx is banded block lower-triangular and dg/du is
//! block diagonal, so S comes out block lower-triangular and can be computed
//! by block forward-substitution, one factorization of A_i per step.
//!
//! On top of S this module builds the reduced objective's gradient, the
//! adjoint-based gradient (one transpose solve, no S), the generalized
//! Gauss-Newton Hessian, and the exact Hessian whose second-order terms are
//! contracted against the adjoint vector instead of materializing any
//! third-order sensitivity tensor.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::{self, DynamicalSystem, StepJacobians};
use crate::error::{Error, Result};
use crate::linalg::{self, FactorizedBlock};
use crate::simulate::{ControlSequence, InitialConditions, Trajectory};

#[cfg(test)]
thread_local! {
    /// Per-thread count of SensitivityMatrix constructions; lets tests assert
    /// that the adjoint path never materializes S.
    pub(crate) static MATRICES_BUILT: std::cell::Cell<usize> =
        const { std::cell::Cell::new(0) };
}

/// Relative asymmetry tolerated in objective second derivatives.
const SYMMETRY_TOL: f64 = 1e-12;

/// Block lower-triangular sensitivity S = dx/du.
///
/// Block (i, j) is the n x m Jacobian of x_{i+1} with respect to u_{j+1}
/// (0-based step indices). Upper-triangle blocks are structurally absent:
/// controls cannot affect earlier states.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix {
    n: usize,
    m: usize,
    steps: usize,
    /// cols[j][i - j] holds block (i, j) for i >= j.
    cols: Vec<Vec<DMatrix<f64>>>,
}

impl SensitivityMatrix {
    fn new(n: usize, m: usize, steps: usize, cols: Vec<Vec<DMatrix<f64>>>) -> Self {
        #[cfg(test)]
        MATRICES_BUILT.with(|c| c.set(c.get() + 1));
        debug_assert_eq!(cols.len(), steps);
        Self { n, m, steps, cols }
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn control_dim(&self) -> usize {
        self.m
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Block (i, j), or `None` for the structurally-zero upper triangle
    /// (j > i). Those blocks are never stored or computed.
    pub fn block(&self, i: usize, j: usize) -> Option<&DMatrix<f64>> {
        if j > i || i >= self.steps {
            None
        } else {
            Some(&self.cols[j][i - j])
        }
    }

    /// Materialize the full (n*T) x (m*T) matrix, upper triangle zero.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n * self.steps, self.m * self.steps);
        for j in 0..self.steps {
            for i in j..self.steps {
                out.view_mut((i * self.n, j * self.m), (self.n, self.m))
                    .copy_from(&self.cols[j][i - j]);
            }
        }
        out
    }
}

/// First and second partials of the objective at a fixed (x, u), in stacked
/// form: gradients of length n*T and m*T, Hessian blocks sized to match.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveDerivatives {
    pub grad_x: DVector<f64>,
    pub grad_u: DVector<f64>,
    pub hess_xx: DMatrix<f64>,
    pub hess_xu: DMatrix<f64>,
    pub hess_uu: DMatrix<f64>,
}

impl ObjectiveDerivatives {
    pub fn validate(&self, state_len: usize, control_len: usize) -> Result<()> {
        let checks: [(&'static str, usize, usize, usize, usize); 5] = [
            ("grad_x", self.grad_x.len(), 1, state_len, 1),
            ("grad_u", self.grad_u.len(), 1, control_len, 1),
            ("hess_xx", self.hess_xx.nrows(), self.hess_xx.ncols(), state_len, state_len),
            ("hess_xu", self.hess_xu.nrows(), self.hess_xu.ncols(), state_len, control_len),
            ("hess_uu", self.hess_uu.nrows(), self.hess_uu.ncols(), control_len, control_len),
        ];
        for (name, r, c, er, ec) in checks {
            if r != er || c != ec {
                return Err(Error::DimensionMismatch {
                    context: name,
                    expected: er * ec,
                    actual: r * c,
                });
            }
        }
        for (m, name) in [(&self.hess_xx, "hess_xx"), (&self.hess_uu, "hess_uu")] {
            let scale = 1.0 + m.amax();
            let asym = (m - m.transpose()).amax();
            if asym > SYMMETRY_TOL * scale {
                return Err(Error::InvalidValue {
                    what: "objective second derivatives",
                    details: format!("{name} is asymmetric (max deviation {asym:.3e})"),
                });
            }
        }
        Ok(())
    }
}

/// The adjoint vector, defined by (dg/dx)^T * lam = (dO/dx)^T. Contracting
/// with it replaces every solve against dg/dx that the gradient and the
/// exact-Hessian tensor terms would otherwise need.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointVector {
    lam: DVector<f64>,
}

impl AdjointVector {
    pub fn vector(&self) -> &DVector<f64> {
        &self.lam
    }

    pub fn len(&self) -> usize {
        self.lam.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lam.len() == 0
    }
}

/// Which formula produced a [`HessianMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianKind {
    GaussNewton,
    Full,
}

/// Symmetric (m*T) x (m*T) Hessian of the reduced objective.
/// Symmetrized on construction, so the symmetry invariant holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianMatrix {
    matrix: DMatrix<f64>,
    kind: HessianKind,
}

impl HessianMatrix {
    pub fn new(matrix: DMatrix<f64>, kind: HessianKind) -> Self {
        assert_eq!(matrix.nrows(), matrix.ncols(), "Hessian must be square");
        Self {
            matrix: linalg::symmetrize(&matrix),
            kind,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn kind(&self) -> HessianKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

fn validate_pair(
    system: &dyn DynamicalSystem,
    x: &Trajectory,
    u: &ControlSequence,
    ic: &InitialConditions,
) -> Result<()> {
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
    Ok(())
}

/// Analytic Jacobian blocks at every step of a trajectory.
pub fn trajectory_jacobians(
    system: &dyn DynamicalSystem,
    x: &Trajectory,
    u: &ControlSequence,
    ic: &InitialConditions,
) -> Result<Vec<StepJacobians>> {
    validate_pair(system, x, u, ic)?;
    (0..system.dims().steps)
        .map(|k| dynamics::step_jacobians(system, &x.step_states(u, ic, k)))
        .collect()
}

/// One block column of S, marched forward from its diagonal block:
/// S(i, j) = -A_i^{-1} (B_i S(i-1, j) + C_i S(i-2, j) + delta_ij D_i),
/// where blocks below step j or reaching into the fixed initial
/// conditions are zero.
fn sensitivity_column(
    j: usize,
    steps: usize,
    jacs: &[StepJacobians],
    factors: &[FactorizedBlock],
) -> Result<Vec<DMatrix<f64>>> {
    let (n, m) = (jacs[j].d.nrows(), jacs[j].d.ncols());
    let mut col: Vec<DMatrix<f64>> = Vec::with_capacity(steps - j);
    for i in j..steps {
        let mut rhs = DMatrix::zeros(n, m);
        if i == j {
            rhs -= &jacs[i].d;
        }
        if i > j {
            rhs -= &jacs[i].b * &col[i - 1 - j];
        }
        if i > j + 1 {
            rhs -= &jacs[i].c * &col[i - 2 - j];
        }
        let block = factors[i].solve_matrix(&rhs).ok_or(Error::SingularBlock {
            step: i + 1,
            block: "A",
            rcond: 0.0,
        })?;
        col.push(block);
    }
    Ok(col)
}

/// Compute S by block forward-substitution. `x` must be a converged rollout
/// for `u`; each A_i is factorized once and reused for every column.
pub fn compute_sensitivity(
    system: &dyn DynamicalSystem,
    x: &Trajectory,
    u: &ControlSequence,
    ic: &InitialConditions,
) -> Result<SensitivityMatrix> {
    compute_sensitivity_threaded(system, x, u, ic, 1)
}

/// [`compute_sensitivity`] with block columns processed on `threads` worker
/// threads. Columns are independent given the per-step factorizations and
/// each one is marched sequentially, so the result is bitwise identical for
/// any thread count.
pub fn compute_sensitivity_threaded(
    system: &dyn DynamicalSystem,
    x: &Trajectory,
    u: &ControlSequence,
    ic: &InitialConditions,
    threads: usize,
) -> Result<SensitivityMatrix> {
    let dims = system.dims();
    let jacs = trajectory_jacobians(system, x, u, ic)?;
    let factors = jacs
        .iter()
        .enumerate()
        .map(|(k, jac)| FactorizedBlock::new(&jac.a, k + 1, "A"))
        .collect::<Result<Vec<_>>>()?;

    let cols = if threads <= 1 {
        (0..dims.steps)
            .map(|j| sensitivity_column(j, dims.steps, &jacs, &factors))
            .collect::<Result<Vec<_>>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::ThreadPool(e.to_string()))?;
        pool.install(|| {
            (0..dims.steps)
                .into_par_iter()
                .map(|j| sensitivity_column(j, dims.steps, &jacs, &factors))
                .collect::<Result<Vec<_>>>()
        })?
    };

    Ok(SensitivityMatrix::new(dims.n, dims.m, dims.steps, cols))
}

/// Objective gradient dO/du = dO/dx * S + dO/du, accumulated block-wise in
/// a fixed order.
pub fn gradient(derivs: &ObjectiveDerivatives, s: &SensitivityMatrix) -> Result<DVector<f64>> {
    let (n, m, steps) = (s.state_dim(), s.control_dim(), s.steps());
    derivs.validate(n * steps, m * steps)?;

    let mut out = derivs.grad_u.clone();
    for j in 0..steps {
        let mut acc = DVector::zeros(m);
        for i in j..steps {
            let block = s.block(i, j).expect("lower-triangle block");
            acc += block.tr_mul(&derivs.grad_x.rows(i * n, n));
        }
        let mut out_j = out.rows_mut(j * m, m);
        out_j += acc;
    }
    Ok(out)
}

/// Backward substitution on the transposed banded system:
/// A_i^T lam_i = rhs_i - B_{i+1}^T lam_{i+1} - C_{i+2}^T lam_{i+2}.
fn adjoint_from_jacobians(
    jacs: &[StepJacobians],
    grad_x: &DVector<f64>,
    n: usize,
) -> Result<DVector<f64>> {
    let steps = jacs.len();
    let mut lam = DVector::zeros(n * steps);
    for i in (0..steps).rev() {
        let mut rhs = grad_x.rows(i * n, n).clone_owned();
        if i + 1 < steps {
            rhs -= jacs[i + 1].b.tr_mul(&lam.rows((i + 1) * n, n));
        }
        if i + 2 < steps {
            rhs -= jacs[i + 2].c.tr_mul(&lam.rows((i + 2) * n, n));
        }
        let at = jacs[i].a.transpose();
        let factor = FactorizedBlock::new(&at, i + 1, "A^T")?;
        let lam_i = factor.solve(&rhs).ok_or(Error::SingularBlock {
            step: i + 1,
            block: "A^T",
            rcond: 0.0,
        })?;
        lam.rows_mut(i * n, n).copy_from(&lam_i);
    }
    Ok(lam)
}

/// The adjoint vector for a given dO/dx.
pub fn compute_adjoint(
    system: &dyn DynamicalSystem,
    x: &Trajectory,
    u: &ControlSequence,
    ic: &InitialConditions,
    grad_x: &DVector<f64>,
) -> Result<AdjointVector> {
    let dims = system.dims();
    if grad_x.len() != dims.state_len() {
        return Err(Error::DimensionMismatch {
            context: "grad_x",
            expected: dims.state_len(),
            actual: grad_x.len(),
        });
    }
    let jacs = trajectory_jacobians(system, x, u, ic)?;
    let lam = adjoint_from_jacobians(&jacs, grad_x, dims.n)?;
    Ok(AdjointVector { lam })
}

/// Objective gradient via the adjoint method: one transpose solve for lam,
/// then dO/du - lam^T * dg/du, block by block. Equals [`gradient`] without
/// ever forming S.
pub fn adjoint_gradient(
    system: &dyn DynamicalSystem,
    x: &Trajectory,
    u: &ControlSequence,
    ic: &InitialConditions,
    derivs: &ObjectiveDerivatives,
) -> Result<DVector<f64>> {
    let dims = system.dims();
    derivs.validate(dims.state_len(), dims.control_len())?;
    let jacs = trajectory_jacobians(system, x, u, ic)?;
    let lam = adjoint_from_jacobians(&jacs, &derivs.grad_x, dims.n)?;

    let (n, m) = (dims.n, dims.m);
    let mut out = derivs.grad_u.clone();
    for (j, jac) in jacs.iter().enumerate() {
        let contribution = jac.d.tr_mul(&lam.rows(j * n, n));
        let mut out_j = out.rows_mut(j * m, m);
        out_j -= contribution;
    }
    Ok(out)
}

/// Generalized Gauss-Newton Hessian
/// H = S^T d2O/dx2 S + 2 S^T d2O/dxdu + d2O/du2,
/// the exact Hessian with every residual-curvature term dropped.
pub fn gauss_newton_hessian(
    derivs: &ObjectiveDerivatives,
    s: &SensitivityMatrix,
) -> Result<HessianMatrix> {
    let (n, m, steps) = (s.state_dim(), s.control_dim(), s.steps());
    derivs.validate(n * steps, m * steps)?;

    let sd = s.to_dense();
    let h = sd.tr_mul(&(&derivs.hess_xx * &sd))
        + sd.tr_mul(&derivs.hess_xu) * 2.0
        + &derivs.hess_uu;
    Ok(HessianMatrix::new(h, HessianKind::GaussNewton))
}

/// Exact Hessian: the Gauss-Newton part plus the residual-curvature terms,
/// contracted against the adjoint vector.
///
/// For each step the second derivatives of g are contracted with the step's
/// adjoint block first, producing small per-lag matrices W; the remaining
/// contractions with S are then plain matrix products against the stored
/// sensitivity rows. Rows that would differentiate the fixed initial
/// conditions are zero and are skipped.
pub fn full_hessian(
    system: &dyn DynamicalSystem,
    x: &Trajectory,
    u: &ControlSequence,
    ic: &InitialConditions,
    derivs: &ObjectiveDerivatives,
    s: &SensitivityMatrix,
) -> Result<HessianMatrix> {
    if !system.has_second_derivatives() {
        return Err(Error::SecondDerivativesUnavailable);
    }
    let dims = system.dims();
    let (n, m, steps) = (dims.n, dims.m, dims.steps);
    derivs.validate(dims.state_len(), dims.control_len())?;

    let gn = gauss_newton_hessian(derivs, s)?;

    let jacs = trajectory_jacobians(system, x, u, ic)?;
    let lam = adjoint_from_jacobians(&jacs, &derivs.grad_x, n)?;
    let s_dense = s.to_dense();

    let m_total = dims.control_len();
    let mut tensor_term = DMatrix::zeros(m_total, m_total);
    for k in 0..steps {
        let sd = dynamics::step_second_derivatives(system, &x.step_states(u, ic, k))?;
        if sd.gxx.is_empty() && sd.gxu.is_empty() && sd.guu.is_none() {
            continue;
        }
        let lam_k = lam.rows(k * n, n).clone_owned();

        for (&(lag_a, lag_b), t) in &sd.gxx {
            if k < lag_a || k < lag_b {
                continue;
            }
            let w = t.contract_rows(&lam_k);
            let rows_a = s_dense.rows((k - lag_a) * n, n);
            let rows_b = s_dense.rows((k - lag_b) * n, n);
            tensor_term -= rows_a.tr_mul(&(w * rows_b));
        }
        for (&lag, t) in &sd.gxu {
            if k < lag {
                continue;
            }
            let w = t.contract_rows(&lam_k);
            let rows = s_dense.rows((k - lag) * n, n);
            let contribution = w.tr_mul(&rows);
            let mut row_block = tensor_term.view_mut((k * m, 0), (m, m_total));
            row_block -= &contribution;
            let mut col_block = tensor_term.view_mut((0, k * m), (m_total, m));
            col_block -= contribution.transpose();
        }
        if let Some(t) = &sd.guu {
            let w = t.contract_rows(&lam_k);
            let mut diag_block = tensor_term.view_mut((k * m, k * m), (m, m));
            diag_block -= &w;
        }
    }

    Ok(HessianMatrix::new(
        gn.matrix() + tensor_term,
        HessianKind::Full,
    ))
}
