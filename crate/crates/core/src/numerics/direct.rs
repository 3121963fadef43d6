use faer::sparse::linalg::solvers::Llt;
use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use super::{accurate_sum, MaskedOperator};
use crate::error::{Error, Result};

/// Factored `shift·I + scale·A` for repeated implicit diffusion solves.
///
/// `A` has zero row and column sums, so the system maps the mean of the
/// right-hand side to `mean/shift` exactly. [`ShiftedSolver::solve`] splits
/// that mean off before the factored solve and reinstates it afterwards,
/// which keeps the discrete mass balance at round-off level regardless of
/// the factorization's backward error.
pub struct ShiftedSolver {
    llt: Llt<usize, f64>,
    shift: f64,
    n: usize,
}

impl ShiftedSolver {
    pub fn new(op: &MaskedOperator, shift: f64, scale: f64) -> Result<Self> {
        if !(shift > 0.0) {
            return Err(Error::Factorization("shift must be positive".into()));
        }
        let matrix = op.shifted_matrix(shift, scale)?;
        let llt = matrix
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(ShiftedSolver {
            llt,
            shift,
            n: op.len(),
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        if self.n == 0 {
            return Vec::new();
        }
        let mean = accurate_sum(b) / self.n as f64;
        let mut rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i] - mean);
        self.llt.solve_in_place(rhs.as_mut());
        let z: Vec<f64> = (0..self.n).map(|i| rhs[(i, 0)]).collect();
        let zmean = accurate_sum(&z) / self.n as f64;
        let base = mean / self.shift;
        z.into_iter().map(|v| base + (v - zmean)).collect()
    }
}
