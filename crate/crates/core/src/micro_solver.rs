//! The ε-scale system on the perforated grid.
//!
//! Hole boundaries carry the influx `∇a^i·n = εψ_i(t, x, x/ε)`; each boundary
//! face contributes `d_i ε ψ_i · |face| / h^d` to the cell behind it (the
//! diffusive flux is `d_i ∇a·n`). The outer boundary is insulated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{PeriodicFactor, SpatialFactor, TimeRamp};
use crate::geometry::{map_to_cell_coords, PerforatedGrid};
use crate::numerics::{assemble_diffusion, Boundary, Coefficient, MaskedOperator};
use crate::timestep::{step_count, ImexSystem, PhysicalParams, RunRecord, SpeciesState, StepOutcome};

/// Which quantity the influx condition prescribes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxConvention {
    /// `∇a^i·n = εψ_i`; the face source carries `d_i`.
    #[default]
    Gradient,
    /// `d_i ∇a^i·n = εψ_i`; the face source does not.
    Flux,
}

impl FluxConvention {
    pub fn source_factor(self, diffusion: f64) -> f64 {
        match self {
            FluxConvention::Gradient => diffusion,
            FluxConvention::Flux => 1.0,
        }
    }
}

/// `ψ_i(t, x, y) = amplitude · s(t) · g(x) · q(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesFlux {
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub x: SpatialFactor,
    #[serde(default)]
    pub y: PeriodicFactor,
}

impl SpeciesFlux {
    pub fn zero() -> Self {
        SpeciesFlux {
            amplitude: 0.0,
            x: SpatialFactor::default(),
            y: PeriodicFactor::default(),
        }
    }

    pub fn constant(amplitude: f64) -> Self {
        SpeciesFlux {
            amplitude,
            ..SpeciesFlux::zero()
        }
    }

    /// `ψ / s(t)`.
    pub fn static_value(&self, x: [f64; 3], y: [f64; 3], dim: usize, length: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        self.amplitude * self.x.value(x, dim, length) * self.y.value(y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFlux {
    pub ramp: TimeRamp,
    pub species: [SpeciesFlux; 3],
    #[serde(default)]
    pub convention: FluxConvention,
}

impl BoundaryFlux {
    pub fn zero() -> Self {
        BoundaryFlux {
            ramp: TimeRamp {
                kind: crate::expr::RampKind::Linear,
                tau: 1.0,
            },
            species: std::array::from_fn(|_| SpeciesFlux::zero()),
            convention: FluxConvention::Gradient,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.species.iter().all(|s| s.amplitude == 0.0)
    }

    pub fn psi(&self, i: usize, t: f64, x: [f64; 3], y: [f64; 3], dim: usize, length: f64) -> f64 {
        self.ramp.value(t) * self.species[i].static_value(x, y, dim, length)
    }

    /// Checks `ψ_i ≥ 0` through guaranteed lower bounds of each factor.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let mut errors = Vec::new();
        if !(self.ramp.tau > 0.0) {
            errors.push(Error::config("flux.tau", "ramp time must be positive"));
        }
        for (i, s) in self.species.iter().enumerate() {
            let name = |part: &str| format!("flux.species{}.{part}", i + 1);
            if !(s.amplitude >= 0.0 && s.amplitude.is_finite()) {
                errors.push(Error::config(name("amplitude"), "must be nonnegative"));
            }
            if let Err(e) = s.x.validate(&name("x"), dim) {
                errors.push(e);
            } else if s.x.lower_bound() < 0.0 {
                errors.push(Error::config(name("x"), "spatial factor must be nonnegative"));
            }
            if let Err(e) = s.y.validate(&name("y"), dim) {
                errors.push(e);
            } else if s.y.lower_bound() < 0.0 {
                errors.push(Error::config(
                    name("y"),
                    "periodic factor must be nonnegative (constant term must dominate the others)",
                ));
            }
        }
        Error::collect(errors)
    }
}

/// Per-cell face sources at `s(t) = 1`, compact order.
pub fn face_sources(
    grid: &PerforatedGrid,
    op: &MaskedOperator,
    params: &PhysicalParams,
    flux: &BoundaryFlux,
) -> Result<[Vec<f64>; 3]> {
    let dim = grid.dim();
    let eps = grid.epsilon();
    let length = grid.spec.length;
    let inv_vol = 1.0 / grid.cell_volume();
    let mut sources: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; op.len()]);
    for face in &grid.boundary_faces {
        let y = map_to_cell_coords(face.center, eps, grid.hole_centers[face.hole], dim, face.hole)?;
        let c = op.compact_index(face.fluid_cell);
        for i in 0..3 {
            let coef = flux.convention.source_factor(params.diffusion[i]);
            sources[i][c] +=
                coef * eps * flux.species[i].static_value(face.center, y, dim, length) * face.corrected_measure * inv_vol;
        }
    }
    Ok(sources)
}

pub struct MicroSolver<'g> {
    pub grid: &'g PerforatedGrid,
    pub params: PhysicalParams,
    system: ImexSystem,
}

impl<'g> MicroSolver<'g> {
    pub fn new(grid: &'g PerforatedGrid, params: PhysicalParams, flux: &BoundaryFlux) -> Result<Self> {
        params.validate()?;
        flux.validate(grid.dim())?;
        let op = assemble_diffusion(grid.shape, &grid.fluid_mask, grid.h(), Coefficient::Scalar(1.0), Boundary::Neumann)?;
        let sources = face_sources(grid, &op, &params, flux)?;
        let ramp = (!flux.is_zero()).then_some(flux.ramp);
        let system = ImexSystem::new(op, 1.0, params.diffusion, sources, ramp, params.dt);
        Ok(MicroSolver { grid, params, system })
    }

    pub fn system(&self) -> &ImexSystem {
        &self.system
    }

    pub fn operator(&self) -> &MaskedOperator {
        self.system.operator()
    }

    pub fn constant_state(&self, values: [f64; 3]) -> SpeciesState {
        SpeciesState::constant(self.operator().len(), values)
    }

    /// Restricts full-grid initial fields to the fluid cells.
    pub fn state_from_full(&self, fields: &[Vec<f64>; 3]) -> SpeciesState {
        SpeciesState {
            t: 0.0,
            a: std::array::from_fn(|i| self.operator().restrict(&fields[i])),
        }
    }

    pub fn step(&self, state: &SpeciesState) -> Result<StepOutcome> {
        self.system.step(state)
    }

    pub fn run(&self, initial: SpeciesState, snapshot_steps: &[usize]) -> Result<RunRecord> {
        let n = step_count(self.params.t_final, self.params.dt)?;
        self.system.run(initial, n, snapshot_steps)
    }

    /// Full-grid fields with zeros in the holes.
    pub fn extend_by_zero(&self, state: &SpeciesState) -> [Vec<f64>; 3] {
        extend_by_zero(self.operator(), state)
    }
}

pub fn extend_by_zero(op: &MaskedOperator, state: &SpeciesState) -> [Vec<f64>; 3] {
    std::array::from_fn(|i| op.extend_by_zero(&state.a[i]))
}
