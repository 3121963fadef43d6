//! IMEX time stepping shared by the micro and macro solvers.
//!
//! Both models have the form
//!
//! ```text
//! w ∂_t a^i − d_i ∇·(K ∇a^i) = w·σ_i·r + S_i(t, x),     r = a³ − a¹a²,
//! ```
//!
//! with `σ = (+1, +1, −1)`, porosity weight `w` (1 on the perforated grid,
//! θ for the effective model) and a source that is a static field times the
//! ramp `s(t)`. One step evaluates `r` once, adds it with opposite signs,
//! adds the source at the step midpoint and solves `(w I + Δt d_i A) a⁺ = rhs`.
//! Because `A` has zero column sums the discrete masses of `a¹+a³` and
//! `a²+a³` change exactly by the tallied inflow.

use std::fmt::Write as _;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::TimeRamp;
use crate::numerics::{accurate_sum, MaskedOperator, ShiftedSolver};

/// Reaction sign per species.
pub const REACTION_SIGN: [f64; 3] = [1.0, 1.0, -1.0];
/// Maximum number of successive step halvings before giving up.
pub const MAX_HALVINGS: usize = 6;
/// Values below this count as a positivity violation.
pub const NEGATIVITY_TOL: f64 = -1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// `d₁, d₂, d₃`.
    pub diffusion: [f64; 3],
    pub t_final: f64,
    pub dt: f64,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        for (i, d) in self.diffusion.iter().enumerate() {
            if !(*d > 0.0 && d.is_finite()) {
                errors.push(Error::config(format!("physics.d{}", i + 1), format!("must be positive, got {d}")));
            }
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            errors.push(Error::config("physics.T", format!("must be nonnegative, got {}", self.t_final)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            errors.push(Error::config("physics.dt", format!("must be positive, got {}", self.dt)));
        }
        Error::collect(errors)
    }
}

/// The three concentrations on the fluid cells (compact order) at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesState {
    pub t: f64,
    pub a: [Vec<f64>; 3],
}

impl SpeciesState {
    pub fn constant(n: usize, values: [f64; 3]) -> Self {
        SpeciesState {
            t: 0.0,
            a: values.map(|v| vec![v; n]),
        }
    }

    pub fn len(&self) -> usize {
        self.a[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.a[0].is_empty()
    }

    pub fn min(&self) -> f64 {
        self.a.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    fn max_of(&self, i: usize) -> f64 {
        self.a[i].iter().copied().fold(0.0, f64::max)
    }
}

/// `r = a³ − a¹a²`, cellwise.
pub fn reaction_rate(state: &SpeciesState) -> Vec<f64> {
    let [a1, a2, a3] = &state.a;
    a1.iter().zip(a2).zip(a3).map(|((x, y), z)| z - x * y).collect()
}

/// Step-start guard `Δt·max(a¹, a², 1) ≤ 1/2`, under which the explicit
/// reaction update keeps every right-hand side nonnegative.
pub fn positivity_guard(state: &SpeciesState, dt: f64) -> bool {
    dt * state.max_of(0).max(state.max_of(1)).max(1.0) <= 0.5
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub step: usize,
    pub t: f64,
    /// `w ∫ a^i`: the conserved amount (porosity-weighted for the effective model).
    pub mass: [f64; 3],
    /// Inflow of species `i` during the step ending at `t`.
    pub inflow: [f64; 3],
    pub min_a: f64,
    /// `(Σ_steps Δt Σ_i ‖a^i‖²_{L²})^{1/2}` up to `t`.
    pub l2l2_partial: f64,
    /// Smallest sub-step taken (equals the nominal step unless halved).
    pub dt_used: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
    /// Relative mass-balance residuals of `(a¹+a³, a²+a³)` per step.
    pub balance_residuals: Vec<[f64; 2]>,
    pub snapshots: Vec<SpeciesState>,
    pub halvings: usize,
}

pub const RUN_RECORD_HEADER: &str =
    "step,t,mass_a1,mass_a2,mass_a3,inflow_1,inflow_2,inflow_3,min_a,L2L2_partial,dt_used";

impl RunRecord {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(RUN_RECORD_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.step,
                r.t,
                r.mass[0],
                r.mass[1],
                r.mass[2],
                r.inflow[0],
                r.inflow[1],
                r.inflow[2],
                r.min_a,
                r.l2l2_partial,
                r.dt_used
            );
        }
        s
    }

    pub fn max_balance_residual(&self) -> f64 {
        self.balance_residuals
            .iter()
            .flatten()
            .copied()
            .fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.rows.iter().map(|r| r.min_a).fold(f64::INFINITY, f64::min)
    }

    pub fn total_inflow(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for r in &self.rows {
            for i in 0..3 {
                acc[i] += r.inflow[i];
            }
        }
        acc
    }

    pub fn final_time(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.t)
    }
}

/// Result of one (possibly subdivided) step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: SpeciesState,
    pub inflow: [f64; 3],
    pub dt_used: f64,
    pub halvings: usize,
}

/// Weighted IMEX system on a fixed operator.
pub struct ImexSystem {
    op: MaskedOperator,
    weight: f64,
    diffusion: [f64; 3],
    /// Source density at `s(t) = 1`, per fluid cell.
    sources: [Vec<f64>; 3],
    ramp: Option<TimeRamp>,
    /// `solvers[i][level]` factors `w I + (Δt/2^level) d_i A`.
    solvers: [Vec<OnceLock<ShiftedSolver>>; 3],
    dt: f64,
}

impl ImexSystem {
    pub fn new(
        op: MaskedOperator,
        weight: f64,
        diffusion: [f64; 3],
        sources: [Vec<f64>; 3],
        ramp: Option<TimeRamp>,
        dt: f64,
    ) -> Self {
        assert!(weight > 0.0);
        assert!(sources.iter().all(|s| s.len() == op.len()));
        let solvers = std::array::from_fn(|_| (0..=MAX_HALVINGS).map(|_| OnceLock::new()).collect());
        ImexSystem {
            op,
            weight,
            diffusion,
            sources,
            ramp,
            solvers,
            dt,
        }
    }

    pub fn operator(&self) -> &MaskedOperator {
        &self.op
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn sources(&self) -> &[Vec<f64>; 3] {
        &self.sources
    }

    pub fn ramp_value(&self, t: f64) -> f64 {
        self.ramp.map_or(0.0, |r| r.value(t))
    }

    fn solver(&self, species: usize, level: usize) -> Result<&ShiftedSolver> {
        let slot = &self.solvers[species][level];
        if let Some(s) = slot.get() {
            return Ok(s);
        }
        let dt = self.dt / f64::from(1u32 << level);
        let s = ShiftedSolver::new(&self.op, self.weight, dt * self.diffusion[species])?;
        Ok(slot.get_or_init(|| s))
    }

    /// `w ∫ a^i` for each species.
    pub fn masses(&self, state: &SpeciesState) -> [f64; 3] {
        let vol = self.op.cell_volume();
        std::array::from_fn(|i| self.weight * accurate_sum(&state.a[i]) * vol)
    }

    fn single_step(&self, state: &SpeciesState, level: usize) -> Result<(SpeciesState, [f64; 3])> {
        let dt = self.dt / f64::from(1u32 << level);
        let r = reaction_rate(state);
        let s_mid = self.ramp_value(state.t + 0.5 * dt);
        let vol = self.op.cell_volume();
        let w = self.weight;
        let results = (0..3)
            .into_par_iter()
            .map(|i| {
                let sign = REACTION_SIGN[i];
                let rhs: Vec<f64> = state.a[i]
                    .iter()
                    .zip(&r)
                    .zip(&self.sources[i])
                    .map(|((a, r), src)| w * (a + sign * dt * r) + dt * s_mid * src)
                    .collect();
                let inflow = dt * s_mid * accurate_sum(&self.sources[i]) * vol;
                Ok((self.solver(i, level)?.solve(&rhs), inflow))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut it = results.into_iter();
        let mut next = |_| it.next().unwrap();
        let (a1, f1) = next(0);
        let (a2, f2) = next(1);
        let (a3, f3) = next(2);
        Ok((
            SpeciesState {
                t: state.t + dt,
                a: [a1, a2, a3],
            },
            [f1, f2, f3],
        ))
    }

    fn advance(&self, state: &SpeciesState, level: usize) -> Result<StepOutcome> {
        let dt = self.dt / f64::from(1u32 << level);
        if positivity_guard(state, dt) {
            let (next, inflow) = self.single_step(state, level)?;
            let min = next.min();
            if min >= NEGATIVITY_TOL {
                return Ok(StepOutcome {
                    state: next,
                    inflow,
                    dt_used: dt,
                    halvings: level,
                });
            }
            if level == MAX_HALVINGS {
                return Err(Error::Positivity {
                    value: min,
                    time: state.t,
                    halvings: level as u32,
                });
            }
        } else if level == MAX_HALVINGS {
            return Err(Error::Positivity {
                value: state.max_of(0).max(state.max_of(1)),
                time: state.t,
                halvings: level as u32,
            });
        }
        let first = self.advance(state, level + 1)?;
        let second = self.advance(&first.state, level + 1)?;
        Ok(StepOutcome {
            inflow: std::array::from_fn(|i| first.inflow[i] + second.inflow[i]),
            dt_used: first.dt_used.min(second.dt_used),
            halvings: first.halvings.max(second.halvings),
            state: second.state,
        })
    }

    /// One nominal step of size `dt`, halved as needed.
    pub fn step(&self, state: &SpeciesState) -> Result<StepOutcome> {
        self.advance(state, 0)
    }

    /// Advances `n_steps` nominal steps, recording every step and keeping
    /// snapshots at the requested step indices.
    pub fn run(&self, initial: SpeciesState, n_steps: usize, snapshot_steps: &[usize]) -> Result<RunRecord> {
        let vol = self.op.cell_volume();
        let sq = |s: &SpeciesState| -> f64 {
            s.a.iter().flatten().map(|v| v * v).sum::<f64>() * vol
        };
        let mut record = RunRecord::default();
        let mut state = initial;
        let mut mass = self.masses(&state);
        let mut l2l2 = 0.0;
        record.rows.push(RunRow {
            step: 0,
            t: state.t,
            mass,
            inflow: [0.0; 3],
            min_a: state.min(),
            l2l2_partial: 0.0,
            dt_used: 0.0,
        });
        if snapshot_steps.contains(&0) {
            record.snapshots.push(state.clone());
        }
        for step in 1..=n_steps {
            let out = self.step(&state)?;
            let new_mass = self.masses(&out.state);
            let residual = |a: usize, b: usize| {
                let change = (new_mass[a] + new_mass[b]) - (mass[a] + mass[b]);
                let scale = (new_mass[a] + new_mass[b]).abs().max(mass[a] + mass[b]).max(f64::MIN_POSITIVE);
                (change - out.inflow[a] - out.inflow[b]).abs() / scale
            };
            record.balance_residuals.push([residual(0, 2), residual(1, 2)]);
            record.halvings = record.halvings.max(out.halvings);
            l2l2 += self.dt * sq(&out.state);
            mass = new_mass;
            state = out.state;
            record.rows.push(RunRow {
                step,
                t: state.t,
                mass,
                inflow: out.inflow,
                min_a: state.min(),
                l2l2_partial: l2l2.sqrt(),
                dt_used: out.dt_used,
            });
            if snapshot_steps.contains(&step) {
                record.snapshots.push(state.clone());
            }
        }
        Ok(record)
    }
}

/// Number of steps of size `dt` needed to reach `t_final`; `t_final` must
/// be a multiple of `dt` to round-off.
pub fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    let q = t_final / dt;
    let n = q.round();
    if (q - n).abs() > 1e-9 * q.max(1.0) {
        return Err(Error::config("physics.T", format!("T / dt must be an integer, got {q}")));
    }
    Ok(n as usize)
}

/// Step indices for `count` snapshots evenly spread over `n_steps`
/// (always including the first and last step).
pub fn uniform_snapshot_steps(n_steps: usize, count: usize) -> Vec<usize> {
    if count <= 1 || n_steps == 0 {
        return vec![n_steps];
    }
    let mut v: Vec<usize> = (0..count)
        .map(|k| ((k as f64) * n_steps as f64 / (count - 1) as f64).round() as usize)
        .collect();
    v.dedup();
    v
}
