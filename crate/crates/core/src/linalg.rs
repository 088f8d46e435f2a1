//! Small dense linear-algebra helpers shared by the solver modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Reciprocal-condition threshold below which a block is treated as singular.
pub(crate) const RCOND_MIN: f64 = 1e-12;

/// LU factorization of a per-step block with a conditioning guard.
///
/// The guard uses the exact singular-value ratio; blocks are small (n x n per
/// time step), so the extra SVD is cheap.
pub(crate) struct FactorizedBlock {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl FactorizedBlock {
    pub(crate) fn new(matrix: &DMatrix<f64>, step: usize, block: &'static str) -> Result<Self> {
        let sv = matrix.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let rcond = if smax > 0.0 { smin / smax } else { 0.0 };
        if !rcond.is_finite() || rcond < RCOND_MIN {
            return Err(Error::SingularBlock { step, block, rcond });
        }
        Ok(Self {
            lu: matrix.clone().lu(),
        })
    }

    pub(crate) fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        self.lu.solve(rhs)
    }

    pub(crate) fn solve_matrix(&self, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        self.lu.solve(rhs)
    }
}

/// (M + M^T) / 2.
pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Max absolute entry of a vector (the inf-norm used throughout).
pub(crate) fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

pub(crate) fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub(crate) fn all_finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}
