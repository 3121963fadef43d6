//! The homogenized (effective) model on the unperforated box:
//!
//! ```text
//! θ ∂_t a^i − d_i ∇·(D ∇a^i) = θ σ_i (a³ − a¹a²) + d_i ∫_Γ ψ_i(t, x, y) dσ_y
//! ```
//!
//! with insulated outer boundary. The surface integral is evaluated by
//! quadrature on the sphere `|y| = Θ` and applied at cell centers, either on
//! the whole box or only inside the security zone.

use serde::{Deserialize, Serialize};

use crate::cell_problem::{cell_gradient, CellSolution, EffectiveTensor};
use crate::error::{Error, Result};
use crate::micro_solver::{BoundaryFlux, SpeciesFlux};
use crate::numerics::{circle_quadrature, Boundary, Coefficient, MaskedOperator, Shape};
use crate::timestep::{step_count, ImexSystem, PhysicalParams, RunRecord, SpeciesState, StepOutcome};

/// Quadrature points on `Γ` for the homogenized source.
pub const DEFAULT_SOURCE_QUADRATURE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceSupport {
    /// Only inside the security zone, where holes exist.
    #[default]
    Delta,
    /// The whole box.
    Global,
}

#[derive(Debug, Clone, Serialize)]
pub struct EffectiveModel {
    pub dim: usize,
    /// Row-major `D`.
    pub tensor: Vec<f64>,
    pub theta: f64,
    pub gamma: f64,
    pub hole_radius: f64,
    pub diffusion: [f64; 3],
    pub n_q: usize,
    pub support: SourceSupport,
}

impl EffectiveModel {
    pub fn from_tensor(t: &EffectiveTensor, diffusion: [f64; 3], support: SourceSupport) -> Self {
        EffectiveModel {
            dim: t.dim,
            tensor: t.d.clone(),
            theta: t.theta,
            gamma: t.gamma,
            hole_radius: t.hole_radius,
            diffusion,
            n_q: DEFAULT_SOURCE_QUADRATURE,
            support,
        }
    }

    /// No holes: `D = I`, `θ = 1`.
    pub fn unperforated(dim: usize, diffusion: [f64; 3]) -> Self {
        let mut tensor = vec![0.0; dim * dim];
        for a in 0..dim {
            tensor[a * dim + a] = 1.0;
        }
        EffectiveModel {
            dim,
            tensor,
            theta: 1.0,
            gamma: 0.0,
            hole_radius: 0.0,
            diffusion,
            n_q: DEFAULT_SOURCE_QUADRATURE,
            support: SourceSupport::Delta,
        }
    }

    fn coefficient(&self) -> Coefficient {
        let dim = self.dim;
        let isotropic = (0..dim).all(|a| {
            (0..dim).all(|b| {
                let v = self.tensor[a * dim + b];
                if a == b {
                    v == self.tensor[0]
                } else {
                    v.abs() <= 1e-14 * self.tensor[0].abs()
                }
            })
        });
        if isotropic {
            Coefficient::Scalar(self.tensor[0])
        } else {
            Coefficient::Tensor(self.tensor.clone())
        }
    }
}

/// Box `[0, L]^d` with spacing `h` and a security-zone width for the source.
#[derive(Debug, Clone)]
pub struct MacroGrid {
    pub dim: usize,
    pub length: f64,
    pub h: f64,
    pub delta: f64,
    pub shape: Shape,
}

impl MacroGrid {
    pub fn new(dim: usize, length: f64, h: f64, delta: f64) -> Result<Self> {
        let q = length / h;
        let n = q.round();
        if n < 1.0 || (q - n).abs() > 1e-9 * q {
            return Err(Error::config("geometry.h", format!("length / h must be a positive integer, got {q}")));
        }
        let n = n as usize;
        Ok(MacroGrid {
            dim,
            length,
            h: length / n as f64,
            delta,
            shape: Shape::new(dim, n),
        })
    }

    pub fn cell_center(&self, idx: usize) -> [f64; 3] {
        let c = self.shape.coords(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = (c[a] as f64 + 0.5) * self.h;
        }
        x
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn in_security_interior(&self, x: [f64; 3]) -> bool {
        (0..self.dim).all(|a| x[a] > self.delta && x[a] < self.length - self.delta)
    }

    /// Measure of the cells on which the source is active.
    pub fn support_measure(&self, support: SourceSupport) -> f64 {
        let count = (0..self.shape.len())
            .filter(|&c| support == SourceSupport::Global || self.in_security_interior(self.cell_center(c)))
            .count();
        count as f64 * self.cell_volume()
    }
}

/// `∫_Γ ψ_i(t, x, y) dσ_y` by quadrature on the sphere (without `d_i`).
pub fn homogenized_source(flux: &BoundaryFlux, i: usize, t: f64, x: [f64; 3], model: &EffectiveModel, length: f64) -> f64 {
    flux.ramp.value(t) * static_source(&flux.species[i], x, model, length)
}

/// [`homogenized_source`] at `s(t) = 1`.
fn static_source(sp: &SpeciesFlux, x: [f64; 3], model: &EffectiveModel, length: f64) -> f64 {
    if sp.amplitude == 0.0 || model.hole_radius == 0.0 {
        return 0.0;
    }
    let surface = circle_quadrature(|y| sp.y.value(y), model.dim, model.hole_radius, model.n_q);
    sp.amplitude * sp.x.value(x, model.dim, length) * surface
}

pub struct MacroSolver {
    pub grid: MacroGrid,
    pub model: EffectiveModel,
    pub params: PhysicalParams,
    system: ImexSystem,
}

impl MacroSolver {
    pub fn new(grid: MacroGrid, model: EffectiveModel, params: PhysicalParams, flux: &BoundaryFlux) -> Result<Self> {
        params.validate()?;
        flux.validate(grid.dim)?;
        let mask = vec![true; grid.shape.len()];
        let op = MaskedOperator::assemble(grid.shape, &mask, grid.h, model.coefficient(), Boundary::Neumann)?;
        let sources = Self::sources(&grid, &model, &params, flux);
        let ramp = (!flux.is_zero()).then_some(flux.ramp);
        let system = ImexSystem::new(op, model.theta, params.diffusion, sources, ramp, params.dt);
        Ok(MacroSolver {
            grid,
            model,
            params,
            system,
        })
    }

    fn sources(grid: &MacroGrid, model: &EffectiveModel, params: &PhysicalParams, flux: &BoundaryFlux) -> [Vec<f64>; 3] {
        std::array::from_fn(|i| {
            let coef = flux.convention.source_factor(params.diffusion[i]);
            (0..grid.shape.len())
                .map(|c| {
                    let x = grid.cell_center(c);
                    if model.support == SourceSupport::Delta && !grid.in_security_interior(x) {
                        0.0
                    } else {
                        coef * static_source(&flux.species[i], x, model, grid.length)
                    }
                })
                .collect()
        })
    }

    pub fn system(&self) -> &ImexSystem {
        &self.system
    }

    pub fn operator(&self) -> &MaskedOperator {
        self.system.operator()
    }

    pub fn constant_state(&self, values: [f64; 3]) -> SpeciesState {
        SpeciesState::constant(self.grid.shape.len(), values)
    }

    pub fn state_from_fn(&self, f: impl Fn(usize, [f64; 3]) -> f64) -> SpeciesState {
        SpeciesState {
            t: 0.0,
            a: std::array::from_fn(|i| (0..self.grid.shape.len()).map(|c| f(i, self.grid.cell_center(c))).collect()),
        }
    }

    pub fn step(&self, state: &SpeciesState) -> Result<StepOutcome> {
        self.system.step(state)
    }

    pub fn run(&self, initial: SpeciesState, snapshot_steps: &[usize]) -> Result<RunRecord> {
        let n = step_count(self.params.t_final, self.params.dt)?;
        self.system.run(initial, n, snapshot_steps)
    }

    /// Cell-centered gradient of a macro field (one-sided at the box faces).
    pub fn gradient(&self, field: &[f64]) -> Vec<[f64; 3]> {
        let mut g = vec![[0.0; 3]; field.len()];
        for a in 0..self.grid.dim {
            for (c, v) in cell_gradient(self.operator(), field, a).into_iter().enumerate() {
                g[c][a] = v;
            }
        }
        g
    }
}

/// `∇_x a + ∇_y a^{(1)}` with `a^{(1)}(x, y) = ω_j(y) ∂_j a(x)`, at cell
/// coordinate `y`, given the macroscopic gradient `grad`.
pub fn corrector_reconstruction(grad: [f64; 3], cell: &CellSolution, y: [f64; 3]) -> [f64; 3] {
    let dim = cell.cell.dim;
    let mut out = grad;
    for j in 0..dim {
        let gw = cell.corrector_gradient(j, y);
        for k in 0..dim {
            out[k] += gw[k] * grad[j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Phase, PeriodicFactor, RampKind, TimeRamp, TrigTerm};
    use crate::geometry::build_unit_cell;

    fn params() -> PhysicalParams {
        PhysicalParams {
            diffusion: [1.0, 0.5, 0.25],
            t_final: 0.1,
            dt: 0.01,
        }
    }

    fn model(theta: f64) -> EffectiveModel {
        EffectiveModel {
            dim: 2,
            tensor: vec![0.66, 0.0, 0.0, 0.66],
            theta,
            gamma: 2.0 * std::f64::consts::PI * 0.25,
            hole_radius: 0.25,
            diffusion: params().diffusion,
            n_q: 64,
            support: SourceSupport::Delta,
        }
    }

    #[test]
    fn source_values() {
        let m = model(0.8);
        let mut flux = BoundaryFlux::zero();
        flux.ramp = TimeRamp { kind: RampKind::Linear, tau: 1.0 };
        flux.species[0] = SpeciesFlux::constant(1.0);
        let v = homogenized_source(&flux, 0, 0.5, [0.3, 0.3, 0.0], &m, 1.0);
        assert!((v - 0.5 * 2.0 * std::f64::consts::PI * 0.25).abs() < 1e-14);
        assert_eq!(homogenized_source(&flux, 1, 0.5, [0.3, 0.3, 0.0], &m, 1.0), 0.0);
        flux.species[2] = SpeciesFlux {
            amplitude: 1.0,
            x: Default::default(),
            y: PeriodicFactor(vec![
                TrigTerm { coef: 1.0, k: vec![], phase: Phase::Cos },
                TrigTerm { coef: 1.0, k: vec![1, 0], phase: Phase::Cos },
            ]),
        };
        let v = homogenized_source(&flux, 2, 2.0, [0.3, 0.3, 0.0], &m, 1.0);
        assert!((v - 2.312_214_102_766_365).abs() < 1e-12);
    }

    #[test]
    fn one_step_balance_with_constant_source() {
        let grid = MacroGrid::new(2, 1.0, 1.0 / 32.0, 0.1).unwrap();
        let m = model(0.8);
        let mut flux = BoundaryFlux::zero();
        flux.ramp = TimeRamp { kind: RampKind::Linear, tau: 1e-9 };
        flux.species[0] = SpeciesFlux::constant(1.0);
        let support = grid.support_measure(SourceSupport::Delta);
        let solver = MacroSolver::new(grid, m.clone(), params(), &flux).unwrap();
        let s0 = solver.constant_state([0.5, 0.5, 0.5]);
        let out = solver.step(&s0).unwrap();
        let before = solver.system().masses(&s0);
        let after = solver.system().masses(&out.state);
        let big_s = m.gamma;
        let expect = 0.01 * 1.0 * big_s * support;
        let got = (after[0] + after[2]) - (before[0] + before[2]);
        assert!((got - expect).abs() <= 1e-14, "{got} vs {expect}");
    }

    #[test]
    fn equilibrium_unchanged() {
        let grid = MacroGrid::new(2, 1.0, 1.0 / 16.0, 0.1).unwrap();
        let solver = MacroSolver::new(grid, model(0.8), params(), &BoundaryFlux::zero()).unwrap();
        let s0 = solver.constant_state([1.0, 1.0, 1.0]);
        let out = solver.step(&s0).unwrap();
        assert!(out.state.a.iter().flatten().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn reconstruction_properties() {
        let cell = CellSolution::new(build_unit_cell(2, 0.0, 16).unwrap(), 1.0).unwrap();
        let g = corrector_reconstruction([0.3, -0.2, 0.0], &cell, [0.1, 0.2, 0.0]);
        assert_eq!(g, [0.3, -0.2, 0.0]);
        let cell = CellSolution::new(build_unit_cell(2, 0.25, 16).unwrap(), 1.0).unwrap();
        assert_eq!(corrector_reconstruction([0.0; 3], &cell, [0.3, 0.1, 0.0]), [0.0; 3]);
    }

    #[test]
    fn rejects_non_divisible_grid() {
        assert!(MacroGrid::new(2, 1.0, 0.3, 0.1).is_err());
    }
}
