//! Periodic corrector problems on the perforated unit cell and the effective
//! diffusion tensor.
//!
//! For each direction `j` the corrector `ω_j` minimizes the discrete energy
//! `Σ_edges η^d (δ_aj + Δω/η)²` over fluid–fluid edges of the periodic cell
//! (η = 1/m, `a` the edge axis). Its Euler–Lagrange equation is the masked
//! periodic Laplacian with the flux of `e_j` across the hole faces moved to
//! the right-hand side. The same energy evaluated at the minimizers is the
//! effective tensor; the volume-averaged gradient formula
//! `D_ij = ∫_{Y*} (δ_ij + ∂ω_j/∂y_i)` serves as an independent cross-check.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::UnitCellSpec;
use crate::numerics::{
    cg_solve, is_positive_definite, Boundary, CgOptions, Coefficient, MaskedOperator, Nullspace,
    SolveReport, CELL_PROBLEM_TOL,
};

/// Target for the entrywise gap between the two tensor formulas at fine
/// resolution.
pub const FORMULA_GAP_TOL: f64 = 1e-4;

/// Operational bound on the formula gap at resolution `m`. The gap is a sum
/// over the staircase boundary and therefore `O(1/m)` with a constant of
/// roughly 0.25 for Θ ≤ 1/4; anything well above that indicates a broken
/// discretization rather than resolution error.
pub fn formula_gap_bound(m: usize) -> f64 {
    (0.5 / m as f64).max(FORMULA_GAP_TOL)
}

#[derive(Debug, Clone)]
pub struct CorrectorField {
    pub direction: usize,
    /// Values on fluid cells, compact order.
    pub values: Vec<f64>,
    pub report: SolveReport,
}

/// Periodic operator on the fluid cells of the unit cell (unit coefficient).
pub fn cell_operator(cell: &UnitCellSpec) -> Result<MaskedOperator> {
    MaskedOperator::assemble(
        cell.shape(),
        &cell.fluid_mask,
        cell.spacing(),
        Coefficient::Scalar(1.0),
        Boundary::Periodic,
    )
}

/// Right-hand side for direction `j`: minus the flux of `e_j` through the
/// hole faces of each fluid cell, per unit cell volume.
fn corrector_rhs(op: &MaskedOperator, direction: usize) -> Vec<f64> {
    let eta = op.h();
    let shape = op.shape();
    let mut b = vec![0.0; op.len()];
    for (i, &idx) in op.fluid_cells().iter().enumerate() {
        for (forward, sign) in [(true, 1.0), (false, -1.0)] {
            let nb = if forward {
                shape.forward(idx, direction, true)
            } else {
                shape.backward(idx, direction, true)
            };
            if let Some(nb) = nb {
                if op.compact_index(nb) == crate::numerics::SOLID {
                    b[i] -= sign / eta;
                }
            }
        }
    }
    b
}

pub fn solve_corrector_with(
    cell: &UnitCellSpec,
    op: &MaskedOperator,
    direction: usize,
) -> Result<CorrectorField> {
    assert!(direction < cell.dim, "direction out of range");
    let b = corrector_rhs(op, direction);
    let opts = CgOptions {
        tol: CELL_PROBLEM_TOL,
        max_iter: 50 * op.len().max(100),
        nullspace: Nullspace::ProjectMean,
        shift: 0.0,
    };
    let (values, report) = cg_solve(op, &b, opts);
    if !report.converged {
        return Err(Error::Solver {
            what: format!("corrector problem in direction {}", direction + 1),
            report,
        });
    }
    Ok(CorrectorField {
        direction,
        values,
        report,
    })
}

pub fn solve_corrector(cell: &UnitCellSpec, direction: usize) -> Result<CorrectorField> {
    let op = cell_operator(cell)?;
    solve_corrector_with(cell, &op, direction)
}

/// All `d` correctors; the solves run in parallel on the current rayon pool.
pub fn solve_correctors(cell: &UnitCellSpec) -> Result<(MaskedOperator, Vec<CorrectorField>)> {
    let op = cell_operator(cell)?;
    let fields = (0..cell.dim)
        .into_par_iter()
        .map(|j| solve_corrector_with(cell, &op, j))
        .collect::<Result<Vec<_>>>()?;
    Ok((op, fields))
}

/// Cell-centered gradient of a compact field: central differences where both
/// neighbors are fluid, one-sided where only one is, zero otherwise.
pub fn cell_gradient(op: &MaskedOperator, field: &[f64], axis: usize) -> Vec<f64> {
    let eta = op.h();
    (0..op.len())
        .map(|i| {
            match (
                op.neighbor(i, axis, true),
                op.neighbor(i, axis, false),
            ) {
                (Some(f), Some(b)) => (field[f] - field[b]) / (2.0 * eta),
                (Some(f), None) => (field[f] - field[i]) / eta,
                (None, Some(b)) => (field[i] - field[b]) / eta,
                (None, None) => 0.0,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct EffectiveTensor {
    pub dim: usize,
    /// Energy-form tensor, row-major.
    #[serde(rename = "D")]
    pub d: Vec<f64>,
    /// Volume-averaged gradient form, row-major.
    #[serde(rename = "D_flux")]
    pub d_flux: Vec<f64>,
    /// Fluid fraction of the raster (the porosity the tensor is consistent with).
    pub theta: f64,
    pub theta_exact: f64,
    /// `|Γ|`.
    pub gamma: f64,
    pub formula_gap: f64,
    pub m: usize,
    #[serde(rename = "Theta")]
    pub hole_radius: f64,
}

impl EffectiveTensor {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.dim + j]
    }

    /// Smallest eigenvalue (closed form in 2D, Jacobi sweeps in 3D).
    pub fn min_eigenvalue(&self) -> f64 {
        symmetric_eigenvalues(&self.d, self.dim)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        symmetric_eigenvalues(&self.d, self.dim)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub(crate) fn symmetric_eigenvalues(a: &[f64], dim: usize) -> Vec<f64> {
    if dim == 2 {
        let (p, q, r) = (a[0], a[1], a[3]);
        let mid = 0.5 * (p + r);
        let rad = (0.25 * (p - r) * (p - r) + q * q).sqrt();
        return vec![mid - rad, mid + rad];
    }
    let mut m = a.to_vec();
    for _ in 0..50 {
        let mut off = 0.0;
        for i in 0..dim {
            for j in (i + 1)..dim {
                off += m[i * dim + j].powi(2);
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                let apq = m[p * dim + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (m[q * dim + q] - m[p * dim + p]) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..dim {
                    let mkp = m[k * dim + p];
                    let mkq = m[k * dim + q];
                    m[k * dim + p] = c * mkp - s * mkq;
                    m[k * dim + q] = s * mkp + c * mkq;
                }
                for k in 0..dim {
                    let mpk = m[p * dim + k];
                    let mqk = m[q * dim + k];
                    m[p * dim + k] = c * mpk - s * mqk;
                    m[q * dim + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..dim).map(|i| m[i * dim + i]).collect()
}

/// Effective tensor from solved correctors, by the energy and the gradient
/// formulas. Fails with a consistency error when the formulas disagree by
/// more than `gap_tol`.
pub fn effective_tensor_with(
    cell: &UnitCellSpec,
    op: &MaskedOperator,
    correctors: &[CorrectorField],
    gap_tol: f64,
) -> Result<EffectiveTensor> {
    let dim = cell.dim;
    assert_eq!(correctors.len(), dim, "one corrector per direction required");
    let eta = op.h();
    let vol = op.cell_volume();

    let mut d = vec![0.0; dim * dim];
    for axis in 0..dim {
        for (lo, hi) in op.axis_faces(axis) {
            let g: Vec<f64> = (0..dim)
                .map(|i| {
                    let delta = if i == axis { 1.0 } else { 0.0 };
                    delta + (correctors[i].values[hi] - correctors[i].values[lo]) / eta
                })
                .collect();
            for i in 0..dim {
                for j in 0..dim {
                    d[i * dim + j] += vol * g[i] * g[j];
                }
            }
        }
    }

    let theta = cell.fluid_fraction();
    let mut d_flux = vec![0.0; dim * dim];
    for j in 0..dim {
        for i in 0..dim {
            let grad = cell_gradient(op, &correctors[j].values, i);
            let mean: f64 = grad.iter().sum::<f64>() * vol;
            d_flux[i * dim + j] = if i == j { theta } else { 0.0 } + mean;
        }
    }

    let formula_gap = d
        .iter()
        .zip(&d_flux)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if formula_gap > gap_tol {
        return Err(Error::Consistency(format!(
            "energy and gradient forms of the effective tensor differ by {formula_gap:.3e} (> {gap_tol:.1e}) at m = {}",
            cell.resolution
        )));
    }
    if cell.hole_radius > 0.0 && !is_positive_definite(&d, dim) {
        return Err(Error::Consistency("effective tensor is not positive definite".into()));
    }
    Ok(EffectiveTensor {
        dim,
        d,
        d_flux,
        theta,
        theta_exact: cell.theta_exact,
        gamma: cell.gamma_exact,
        formula_gap,
        m: cell.resolution,
        hole_radius: cell.hole_radius,
    })
}

pub fn effective_tensor(
    cell: &UnitCellSpec,
    op: &MaskedOperator,
    correctors: &[CorrectorField],
) -> Result<EffectiveTensor> {
    effective_tensor_with(cell, op, correctors, formula_gap_bound(cell.resolution))
}

/// Solves the cell problem and returns the tensor.
pub fn homogenize(cell: &UnitCellSpec) -> Result<EffectiveTensor> {
    let (op, correctors) = solve_correctors(cell)?;
    effective_tensor(cell, &op, &correctors)
}

/// Solved cell problem kept around for corrector reconstruction.
pub struct CellSolution {
    pub cell: UnitCellSpec,
    pub op: MaskedOperator,
    pub correctors: Vec<CorrectorField>,
    /// `gradients[j][k]`: cell gradient `∂ω_j/∂y_k`, compact order.
    pub gradients: Vec<Vec<Vec<f64>>>,
    pub tensor: EffectiveTensor,
}

impl CellSolution {
    pub fn new(cell: UnitCellSpec, gap_tol: f64) -> Result<Self> {
        let (op, correctors) = solve_correctors(&cell)?;
        let tensor = effective_tensor_with(&cell, &op, &correctors, gap_tol)?;
        let gradients = correctors
            .iter()
            .map(|c| (0..cell.dim).map(|k| cell_gradient(&op, &c.values, k)).collect())
            .collect();
        Ok(CellSolution {
            cell,
            op,
            correctors,
            gradients,
            tensor,
        })
    }

    /// `∇_y ω_j` at `y ∈ Y` (piecewise constant per cell; zero inside the hole).
    pub fn corrector_gradient(&self, j: usize, y: [f64; 3]) -> [f64; 3] {
        let m = self.cell.resolution;
        let shape = self.cell.shape();
        let mut ijk = [0; 3];
        for a in 0..self.cell.dim {
            let s = ((y[a] + 0.5).rem_euclid(1.0) * m as f64).floor() as usize;
            ijk[a] = s.min(m - 1);
        }
        let c = self.op.compact_index(shape.index(ijk));
        let mut g = [0.0; 3];
        if c != crate::numerics::SOLID {
            for k in 0..self.cell.dim {
                g[k] = self.gradients[j][k][c];
            }
        }
        g
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementRow {
    pub m: usize,
    #[serde(rename = "D11")]
    pub d11: f64,
    #[serde(rename = "D12")]
    pub d12: f64,
    pub formula_gap: f64,
}

pub fn refinement_table(dim: usize, hole_radius: f64, resolutions: &[usize]) -> Result<Vec<RefinementRow>> {
    resolutions
        .iter()
        .map(|&m| {
            let cell = UnitCellSpec::new(dim, hole_radius, m)?;
            let t = homogenize(&cell)?;
            Ok(RefinementRow {
                m,
                d11: t.get(0, 0),
                d12: t.get(0, 1),
                formula_gap: t.formula_gap,
            })
        })
        .collect()
}

/// Richardson extrapolation from three values on successively doubled
/// resolutions; returns `(extrapolated value, observed order)`.
pub fn richardson(coarse: f64, medium: f64, fine: f64) -> (f64, f64) {
    let d1 = medium - coarse;
    let d2 = fine - medium;
    if d2 == 0.0 || d1 == 0.0 || d1.signum() != d2.signum() {
        return (fine, f64::NAN);
    }
    let order = (d1 / d2).log2();
    let factor = 2f64.powf(order);
    (fine + d2 / (factor - 1.0), order)
}
