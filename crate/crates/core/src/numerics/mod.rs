//! Masked-grid operators, solvers and quadratures shared by the solvers.

mod cg;
mod direct;
mod grid;
mod operator;
mod quadrature;

pub use cg::{cg_solve, cg_solve_from, CgOptions, Nullspace, SolveReport};
pub use direct::ShiftedSolver;
pub use grid::Shape;
pub use operator::{assemble_diffusion, Boundary, Coefficient, MaskedOperator, SOLID};
pub(crate) use operator::is_positive_definite;
pub use quadrature::{accurate_sum, circle_quadrature, gauss_legendre, integrate_field};

/// Corrector cell problem tolerance.
pub const CELL_PROBLEM_TOL: f64 = 1e-10;
/// Tolerance for iterative implicit diffusion solves.
pub const DIFFUSION_TOL: f64 = 1e-9;
