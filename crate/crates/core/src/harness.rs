//! ε-studies: two-scale functionals, micro–macro comparison and the
//! uniform-estimate norm ladder.
//!
//! All functionals act on full-grid fields (micro fields extended by zero
//! into the holes); space is integrated by the midpoint rule at cell
//! centers and time by the trapezoid rule over snapshot times.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell_problem::CellSolution;
use crate::error::{Error, Result};
use crate::expr::{PeriodicFactor, SpatialFactor};
use crate::geometry::{periodic_cell_coords, GridSpec, PerforatedGrid};
use crate::initial_data::{assemble_well_prepared, AnnulusBasis, IcDiagnostics};
use crate::macro_solver::{EffectiveModel, MacroGrid, MacroSolver, SourceSupport};
use crate::micro_solver::{extend_by_zero, BoundaryFlux, MicroSolver};
use crate::numerics::{circle_quadrature, gauss_legendre, Shape};
use crate::timestep::{step_count, uniform_snapshot_steps, PhysicalParams, RunRecord, SpeciesState};

/// Orders are reported only when both errors exceed this.
pub const ORDER_FLOOR: f64 = 1e-12;
/// Largest max/min ratio of a ladder entry across the ε study.
pub const LADDER_RATIO: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSupport {
    #[default]
    Global,
    /// A bump supported inside the security zone.
    Delta,
}

/// `φ(t, x, y) = (c₀ + c₁ t) · φ_x(x) · φ_Y(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunction {
    pub id: String,
    #[serde(default = "unit_time")]
    pub time: [f64; 2],
    #[serde(default)]
    pub x: SpatialFactor,
    #[serde(default)]
    pub y: PeriodicFactor,
    #[serde(default)]
    pub support: TestSupport,
}

fn unit_time() -> [f64; 2] {
    [1.0, 0.0]
}

impl TestFunction {
    pub fn new(id: &str, x: SpatialFactor, y: PeriodicFactor, support: TestSupport) -> Self {
        TestFunction {
            id: id.to_string(),
            time: unit_time(),
            x,
            y,
            support,
        }
    }

    pub fn phi0(&self, t: f64, x: [f64; 3], dim: usize, length: f64) -> f64 {
        (self.time[0] + self.time[1] * t) * self.x.value(x, dim, length)
    }

    pub fn value(&self, t: f64, x: [f64; 3], y: [f64; 3], dim: usize, length: f64) -> f64 {
        self.phi0(t, x, dim, length) * self.y.value(y)
    }

    /// Copy with the periodic factor replaced by 1.
    pub fn macroscopic(&self) -> Self {
        TestFunction {
            y: PeriodicFactor::constant(1.0),
            ..self.clone()
        }
    }

    pub fn validate(&self, dim: usize, length: f64, delta: f64) -> Result<()> {
        let field = format!("tests.{}", self.id);
        self.x.validate(&field, dim)?;
        self.y.validate(&field, dim)?;
        if self.support == TestSupport::Delta {
            match &self.x {
                SpatialFactor::Bump { center, radius }
                    if center.iter().all(|&c| c - radius >= delta && c + radius <= length - delta) => {}
                _ => {
                    return Err(Error::config(
                        field,
                        "a security-zone test function must be a bump inside the zone",
                    ))
                }
            }
        }
        Ok(())
    }
}

/// Three bumps in the security zone with periodic factors `1`,
/// `1 + ½cos 2πy₁` and `1 − ½cos 2π(y₁ + … + y_d)`.
pub fn default_test_set(dim: usize, length: f64) -> Vec<TestFunction> {
    use crate::expr::{Phase, TrigTerm};
    let bump = |c: f64, r: f64| SpatialFactor::Bump {
        center: vec![c * length; dim],
        radius: r * length,
    };
    let one = || TrigTerm {
        coef: 1.0,
        k: vec![],
        phase: Phase::Cos,
    };
    let mut k1 = vec![0; dim];
    k1[0] = 1;
    let mut k2 = vec![1; dim];
    k2[0] = 1;
    vec![
        TestFunction::new("bump_center", bump(0.5, 0.3), PeriodicFactor::constant(1.0), TestSupport::Delta),
        TestFunction::new(
            "bump_cos_y1",
            bump(0.45, 0.25),
            PeriodicFactor(vec![
                one(),
                TrigTerm {
                    coef: 0.5,
                    k: k1,
                    phase: Phase::Cos,
                },
            ]),
            TestSupport::Delta,
        ),
        TestFunction::new(
            "bump_cos_diag",
            bump(0.55, 0.2),
            PeriodicFactor(vec![
                one(),
                TrigTerm {
                    coef: -0.5,
                    k: k2,
                    phase: Phase::Cos,
                },
            ]),
            TestSupport::Delta,
        ),
    ]
}

/// Cell-centered Cartesian raster over `[0, L]^d`, optionally masked.
#[derive(Debug, Clone)]
pub struct Raster {
    pub shape: Shape,
    pub h: f64,
    pub length: f64,
    /// Fluid cells; `None` means all cells.
    pub mask: Option<Vec<bool>>,
}

impl Raster {
    pub fn micro(grid: &PerforatedGrid) -> Self {
        Raster {
            shape: grid.shape,
            h: grid.h(),
            length: grid.spec.length,
            mask: Some(grid.fluid_mask.clone()),
        }
    }

    pub fn macroscopic(grid: &MacroGrid) -> Self {
        Raster {
            shape: grid.shape,
            h: grid.h,
            length: grid.length,
            mask: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.shape.dim
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim() as i32)
    }

    pub fn center(&self, idx: usize) -> [f64; 3] {
        let c = self.shape.coords(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim() {
            x[a] = (c[a] as f64 + 0.5) * self.h;
        }
        x
    }

    fn is_fluid(&self, idx: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[idx])
    }
}

/// One time level of the three species on the full grid.
#[derive(Debug, Clone)]
pub struct FieldSnapshot {
    pub t: f64,
    pub a: [Vec<f64>; 3],
}

/// Trapezoid weights for sorted times; a single time gets weight 1.
pub fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    if n == 1 {
        return vec![1.0];
    }
    let mut w = vec![0.0; n];
    for k in 0..n - 1 {
        let dt = times[k + 1] - times[k];
        w[k] += 0.5 * dt;
        w[k + 1] += 0.5 * dt;
    }
    w
}

/// `∫ v(x) φ(t, x, x/ε) dx` at a single time.
pub fn volume_functional_at(field: &[f64], raster: &Raster, phi: &TestFunction, t: f64, epsilon: f64) -> f64 {
    let dim = raster.dim();
    let sum: f64 = field
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v != 0.0)
        .map(|(c, &v)| {
            let x = raster.center(c);
            v * phi.value(t, x, periodic_cell_coords(x, epsilon, dim), dim, raster.length)
        })
        .sum();
    sum * raster.cell_volume()
}

/// `∫₀ᵀ∫_Ω v(t, x) φ(t, x, x/ε) dx dt` over the snapshot times.
pub fn volume_two_scale_functional(
    times: &[f64],
    fields: &[&[f64]],
    raster: &Raster,
    phi: &TestFunction,
    epsilon: f64,
) -> f64 {
    assert_eq!(times.len(), fields.len());
    trapezoid_weights(times)
        .iter()
        .zip(times.iter().zip(fields))
        .map(|(w, (&t, f))| w * volume_functional_at(f, raster, phi, t, epsilon))
        .sum()
}

/// Gauss–Legendre nodes and weights on `[t₀, t₁]`, split at the ramp kink
/// so piecewise-polynomial time factors integrate exactly.
fn time_nodes(t_range: (f64, f64), kink: f64, n: usize) -> Vec<(f64, f64)> {
    let (nodes, weights) = gauss_legendre(n);
    let mut cuts = vec![t_range.0];
    if kink > t_range.0 && kink < t_range.1 {
        cuts.push(kink);
    }
    cuts.push(t_range.1);
    let mut out = Vec::new();
    for pair in cuts.windows(2) {
        let half = 0.5 * (pair[1] - pair[0]);
        let mid = 0.5 * (pair[1] + pair[0]);
        for (s, w) in nodes.iter().zip(&weights) {
            out.push((mid + half * s, half * w));
        }
    }
    out
}

/// `ε ∫_{t₀}^{t₁} ∫_{Γ_ε} ψ_i φ dσ dt`, Gauss–Legendre in time.
///
/// Each boundary face carries its corrected measure and is evaluated at its
/// radial projection onto the hole sphere.
pub fn surface_two_scale_functional(
    flux: &BoundaryFlux,
    species: usize,
    phi: &TestFunction,
    grid: &PerforatedGrid,
    t_range: (f64, f64),
    n_t: usize,
) -> f64 {
    let dim = grid.dim();
    let eps = grid.epsilon();
    let length = grid.spec.length;
    let r = grid.hole_radius_physical();
    let points: Vec<([f64; 3], [f64; 3], f64)> = grid
        .boundary_faces
        .iter()
        .map(|f| {
            let c = grid.hole_centers[f.hole];
            let d = (0..dim).map(|a| (f.center[a] - c[a]).powi(2)).sum::<f64>().sqrt();
            let mut x = [0.0; 3];
            let mut y = [0.0; 3];
            for a in 0..dim {
                let n = (f.center[a] - c[a]) / d;
                x[a] = c[a] + r * n;
                y[a] = r * n / eps;
            }
            (x, y, f.corrected_measure)
        })
        .collect();
    let mut total = 0.0;
    for (t, w) in time_nodes(t_range, flux.ramp.tau, n_t) {
        let inner: f64 = points
            .iter()
            .map(|&(x, y, m)| flux.psi(species, t, x, y, dim, length) * phi.value(t, x, y, dim, length) * m)
            .sum();
        total += w * eps * inner;
    }
    total
}

/// Limit `∫∫_{Ω^δ}∫_Γ ψ_i φ dσ dt` of the surface functional for separable data.
pub fn surface_limit(
    flux: &BoundaryFlux,
    species: usize,
    phi: &TestFunction,
    dim: usize,
    length: f64,
    delta: f64,
    hole_radius: f64,
    t_range: (f64, f64),
) -> f64 {
    let sp = &flux.species[species];
    let n_q = 128;
    let gamma = circle_quadrature(|y| sp.y.value(y) * phi.y.value(y), dim, hole_radius, n_q);
    let time: f64 = time_nodes(t_range, flux.ramp.tau, 8)
        .into_iter()
        .map(|(t, w)| w * flux.ramp.value(t) * (phi.time[0] + phi.time[1] * t))
        .sum();
    // space: composite Gauss over Ω^δ
    let panels = 32;
    let (gx, gw) = gauss_legendre(6);
    let a0 = delta;
    let span = (length - 2.0 * delta) / panels as f64;
    let mut pts = Vec::new();
    for p in 0..panels {
        for (s, w) in gx.iter().zip(&gw) {
            pts.push((a0 + span * (p as f64 + 0.5 * (s + 1.0)), 0.5 * span * w));
        }
    }
    let mut space = 0.0;
    let n = pts.len();
    let total_pts = n.pow(dim as u32);
    for idx in 0..total_pts {
        let mut x = [0.0; 3];
        let mut w = 1.0;
        let mut rem = idx;
        for a in 0..dim {
            let (xa, wa) = pts[rem % n];
            rem /= n;
            x[a] = xa;
            w *= wa;
        }
        space += w * sp.x.value(x, dim, length) * phi.x.value(x, dim, length);
    }
    sp.amplitude * time * space * gamma
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub phi_id: String,
    pub error: f64,
    /// Order against the previous (coarser) ε of the same test.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsilonSummary {
    pub epsilon: f64,
    pub max_balance_residual: f64,
    pub min_value: f64,
    pub micro_inflow: [f64; 3],
    pub macro_inflow: [f64; 3],
    pub halvings: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// Sorted by decreasing ε, then test id.
    pub rows: Vec<ConvergenceRow>,
    pub runs: Vec<EpsilonSummary>,
    pub ladder: Option<NormLadder>,
    pub ic: Vec<IcDiagnostics>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSummary {
    pub passed: bool,
    pub worst_order: Option<f64>,
    pub ladder_flags: Vec<String>,
}

/// `log(e₁/e₂)/log(ε₁/ε₂)` when both errors are above [`ORDER_FLOOR`].
pub fn estimated_order(eps_coarse: f64, err_coarse: f64, eps_fine: f64, err_fine: f64) -> Option<f64> {
    (err_coarse > ORDER_FLOOR && err_fine > ORDER_FLOOR)
        .then(|| (err_coarse / err_fine).ln() / (eps_coarse / eps_fine).ln())
}

impl ConvergenceReport {
    pub fn test_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.rows.iter().map(|r| r.phi_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn errors(&self, phi_id: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.phi_id == phi_id).map(|r| r.error).collect()
    }

    /// Every test's error sequence is non-increasing as ε decreases.
    pub fn monotone(&self) -> bool {
        self.test_ids().iter().all(|id| self.errors(id).windows(2).all(|w| w[1] <= w[0]))
    }

    /// Smallest order over the whole ε range, per test, minimized over tests.
    pub fn worst_order(&self) -> Option<f64> {
        self.test_ids()
            .iter()
            .filter_map(|id| {
                let rows: Vec<&ConvergenceRow> = self.rows.iter().filter(|r| &r.phi_id == id).collect();
                let (first, last) = (rows.first()?, rows.last()?);
                if rows.len() < 2 {
                    return None;
                }
                estimated_order(first.epsilon, first.error, last.epsilon, last.error)
            })
            .min_by(f64::total_cmp)
    }

    pub fn summary(&self) -> ReportSummary {
        let worst_order = self.worst_order();
        let ladder_flags = self.ladder.as_ref().map(|l| l.flags.clone()).unwrap_or_default();
        ReportSummary {
            passed: self.monotone() && worst_order.is_some_and(|o| o > 0.0) && ladder_flags.is_empty(),
            worst_order,
            ladder_flags,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,phi_id,error,order\n");
        for r in &self.rows {
            let order = r.order.map(|o| format!("{o:.6e}")).unwrap_or_default();
            out.push_str(&format!("{:.9e},{},{:.9e},{}\n", r.epsilon, r.phi_id, r.error, order));
        }
        out
    }
}

/// Micro snapshots for one ε.
pub struct MicroSeries<'a> {
    pub epsilon: f64,
    pub raster: &'a Raster,
    pub snapshots: &'a [FieldSnapshot],
}

/// `|∫∫ ã_ε φ − θ ∫∫ a φ₀ · mean_{Y*} φ_Y|` per ε, test and species.
pub fn micro_macro_error(
    micro: &[MicroSeries],
    macro_raster: &Raster,
    macro_snapshots: &[FieldSnapshot],
    tests: &[TestFunction],
    theta: f64,
    hole_radius: f64,
) -> Result<Vec<ConvergenceRow>> {
    let macro_times: Vec<f64> = macro_snapshots.iter().map(|s| s.t).collect();
    for m in micro {
        let times: Vec<f64> = m.snapshots.iter().map(|s| s.t).collect();
        if times.len() != macro_times.len() || times.iter().zip(&macro_times).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(Error::config(
                "run.snapshots",
                format!("micro snapshots at ε = {} do not match the macro time grid", m.epsilon),
            ));
        }
    }
    let dim = macro_raster.dim();
    let mut targets = Vec::new();
    for phi in tests {
        let mean = phi.y.mean_over_fluid(dim, hole_radius);
        let plain = phi.macroscopic();
        let t: [f64; 3] = std::array::from_fn(|i| {
            let fields: Vec<&[f64]> = macro_snapshots.iter().map(|s| s.a[i].as_slice()).collect();
            theta * mean * volume_two_scale_functional(&macro_times, &fields, macro_raster, &plain, 1.0)
        });
        targets.push(t);
    }

    let mut order: Vec<&MicroSeries> = micro.iter().collect();
    order.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
    let values: Vec<Vec<[f64; 3]>> = order
        .par_iter()
        .map(|m| {
            tests
                .iter()
                .map(|phi| {
                    std::array::from_fn(|i| {
                        let fields: Vec<&[f64]> = m.snapshots.iter().map(|s| s.a[i].as_slice()).collect();
                        volume_two_scale_functional(&macro_times, &fields, m.raster, phi, m.epsilon)
                    })
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    let mut prev: Vec<Option<(f64, f64)>> = vec![None; tests.len() * 3];
    for (m, vals) in order.iter().zip(&values) {
        for (p, phi) in tests.iter().enumerate() {
            for i in 0..3 {
                let error = (vals[p][i] - targets[p][i]).abs();
                let slot = &mut prev[3 * p + i];
                let order = slot.and_then(|(e0, err0)| estimated_order(e0, err0, m.epsilon, error));
                *slot = Some((m.epsilon, error));
                rows.push(ConvergenceRow {
                    epsilon: m.epsilon,
                    phi_id: format!("{}:a{}", phi.id, i + 1),
                    error,
                    order,
                });
            }
        }
    }
    Ok(rows)
}

pub const NORM_NAMES: [&str; 5] = ["L2L2", "LinfL2", "grad_L2L2", "LinfL4", "dt_L2L2"];

/// The five diagnostic norms of each species for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormRow {
    pub epsilon: f64,
    /// `norms[i][k]` for species `i`, norm [`NORM_NAMES`]`[k]`.
    pub norms: [[f64; 5]; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormLadder {
    pub rows: Vec<NormRow>,
    /// `max/min` across ε of every entry, `[species][norm]`.
    pub ratios: [[f64; 5]; 3],
    /// Entries whose ratio exceeds [`LADDER_RATIO`].
    pub flags: Vec<String>,
}

impl NormLadder {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,species");
        for n in NORM_NAMES {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for r in &self.rows {
            for i in 0..3 {
                out.push_str(&format!("{:.9e},a{}", r.epsilon, i + 1));
                for v in r.norms[i] {
                    out.push_str(&format!(",{v:.9e}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Diagnostic norms of one run from its snapshots (sorted in time).
pub fn run_norms(epsilon: f64, raster: &Raster, snapshots: &[FieldSnapshot]) -> NormRow {
    let vol = raster.cell_volume();
    let times: Vec<f64> = snapshots.iter().map(|s| s.t).collect();
    let w = trapezoid_weights(&times);
    let dim = raster.dim();
    let norms = std::array::from_fn(|i| {
        let mut l2l2 = 0.0;
        let mut linf_l2: f64 = 0.0;
        let mut grad = 0.0;
        let mut linf_l4: f64 = 0.0;
        for (k, s) in snapshots.iter().enumerate() {
            let f = &s.a[i];
            let (mut sq, mut quart, mut g) = (0.0, 0.0, 0.0);
            for (c, &v) in f.iter().enumerate() {
                if !raster.is_fluid(c) {
                    continue;
                }
                sq += v * v;
                quart += v.powi(4);
                for a in 0..dim {
                    if let Some(nb) = raster.shape.forward(c, a, false) {
                        if raster.is_fluid(nb) {
                            let d = (f[nb] - v) / raster.h;
                            g += d * d;
                        }
                    }
                }
            }
            l2l2 += w[k] * sq * vol;
            grad += w[k] * g * vol;
            linf_l2 = linf_l2.max((sq * vol).sqrt());
            linf_l4 = linf_l4.max((quart * vol).powf(0.25));
        }
        let mut dt = 0.0;
        for pair in snapshots.windows(2) {
            let tau = pair[1].t - pair[0].t;
            let sq: f64 = pair[1].a[i]
                .iter()
                .zip(&pair[0].a[i])
                .enumerate()
                .filter(|(c, _)| raster.is_fluid(*c))
                .map(|(_, (b, a))| ((b - a) / tau).powi(2))
                .sum();
            dt += tau * sq * vol;
        }
        [l2l2.sqrt(), linf_l2, grad.sqrt(), linf_l4, dt.sqrt()]
    });
    NormRow { epsilon, norms }
}

/// Ladder over an ε study; flags entries varying by more than [`LADDER_RATIO`].
pub fn norm_ladder(mut rows: Vec<NormRow>) -> NormLadder {
    rows.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
    let mut ratios = [[1.0; 5]; 3];
    let mut flags = Vec::new();
    for i in 0..3 {
        for k in 0..5 {
            let vals: Vec<f64> = rows.iter().map(|r| r.norms[i][k]).collect();
            let max = vals.iter().cloned().fold(0.0, f64::max);
            let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let ratio = if max == 0.0 { 1.0 } else if min == 0.0 { f64::INFINITY } else { max / min };
            ratios[i][k] = ratio;
            if ratio > LADDER_RATIO {
                flags.push(format!("a{}.{}", i + 1, NORM_NAMES[k]));
            }
        }
    }
    NormLadder { rows, ratios, flags }
}

/// Initial data of an ε study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// The same constant concentrations on micro fluid cells and macro cells.
    Constant { values: [f64; 3] },
    /// `α a₀ χ + Σ w̃_k` on the micro grid, `α a₀` on the macro grid.
    WellPrepared {
        profiles: [SpatialFactor; 3],
        n_rho: usize,
        n_phi: usize,
    },
}

/// Everything an ε study needs.
#[derive(Debug, Clone)]
pub struct StudySpec {
    pub dim: usize,
    pub length: f64,
    pub delta: f64,
    pub hole_radius: f64,
    pub cells_per_period: usize,
    pub epsilons: Vec<f64>,
    /// Macro spacing; the finest micro spacing when `None`.
    pub macro_h: Option<f64>,
    pub params: PhysicalParams,
    pub flux: BoundaryFlux,
    pub ic: InitialCondition,
    pub snapshots: usize,
    pub support: SourceSupport,
    pub tests: Vec<TestFunction>,
}

/// Raw results of a study, kept for further checks.
pub struct StudyOutput {
    pub cell: CellSolution,
    pub model: EffectiveModel,
    pub report: ConvergenceReport,
    pub micro_records: Vec<(f64, RunRecord)>,
    pub macro_record: RunRecord,
}

impl StudySpec {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.epsilons.is_empty() {
            errors.push(Error::config("geometry.epsilon_list", "at least one ε is required"));
        }
        if self.snapshots < 2 {
            errors.push(Error::config("run.snapshots", "at least two snapshots are required"));
        }
        if let Err(e) = self.params.validate() {
            errors.push(e);
        }
        if let Err(e) = self.flux.validate(self.dim) {
            errors.push(e);
        }
        for t in &self.tests {
            if let Err(e) = t.validate(self.dim, self.length, self.delta) {
                errors.push(e);
            }
        }
        Error::collect(errors)
    }

    fn grid(&self, eps: f64) -> Result<PerforatedGrid> {
        PerforatedGrid::new(GridSpec {
            dim: self.dim,
            length: self.length,
            h: eps / self.cells_per_period as f64,
            epsilon: eps,
            delta: self.delta,
            hole_radius: self.hole_radius,
        })
    }

    fn snapshot_steps(&self) -> Result<Vec<usize>> {
        let n = step_count(self.params.t_final, self.params.dt)?;
        Ok(uniform_snapshot_steps(n, self.snapshots))
    }
}

fn to_snapshots(states: &[SpeciesState], full: impl Fn(&SpeciesState) -> [Vec<f64>; 3]) -> Vec<FieldSnapshot> {
    states.iter().map(|s| FieldSnapshot { t: s.t, a: full(s) }).collect()
}

/// One micro run at a given ε.
pub struct MicroRun {
    pub epsilon: f64,
    pub grid: PerforatedGrid,
    pub record: RunRecord,
    pub snapshots: Vec<FieldSnapshot>,
    pub ic: Option<IcDiagnostics>,
}

/// One macro run.
pub struct MacroRun {
    pub grid: MacroGrid,
    pub record: RunRecord,
    pub snapshots: Vec<FieldSnapshot>,
}

impl StudySpec {
    /// Cell problem at `m = cells_per_period`, so that porosity and tensor
    /// describe the same raster as the micro grids.
    pub fn cell_solution(&self) -> Result<CellSolution> {
        CellSolution::new(
            crate::geometry::build_unit_cell(self.dim, self.hole_radius, self.cells_per_period)?,
            crate::cell_problem::formula_gap_bound(self.cells_per_period),
        )
    }

    pub fn model(&self, cell: &CellSolution) -> EffectiveModel {
        EffectiveModel::from_tensor(&cell.tensor, self.params.diffusion, self.support)
    }

    fn basis(&self) -> Result<Option<AnnulusBasis>> {
        match &self.ic {
            InitialCondition::WellPrepared { n_rho, n_phi, .. } => Ok(Some(AnnulusBasis::new(*n_rho, *n_phi)?)),
            InitialCondition::Constant { .. } => Ok(None),
        }
    }

    pub fn run_micro(&self, epsilon: f64, cell: &CellSolution) -> Result<MicroRun> {
        self.run_micro_with(epsilon, cell, self.basis()?.as_ref())
    }

    fn run_micro_with(&self, epsilon: f64, cell: &CellSolution, basis: Option<&AnnulusBasis>) -> Result<MicroRun> {
        let grid = self.grid(epsilon)?;
        let steps = self.snapshot_steps()?;
        let (record, snapshots, ic) = {
            let solver = MicroSolver::new(&grid, self.params, &self.flux)?;
            let (initial, diag) = match &self.ic {
                InitialCondition::Constant { values } => (solver.constant_state(*values), None),
                InitialCondition::WellPrepared { profiles, .. } => {
                    let basis = basis.expect("well-prepared data need an annulus basis");
                    let ic = assemble_well_prepared(profiles, &grid, &cell.cell, basis, true)?;
                    (solver.state_from_full(&ic.fields), Some(ic.diagnostics(&grid)))
                }
            };
            let record = solver.run(initial, &steps)?;
            let snaps = to_snapshots(&record.snapshots, |s| extend_by_zero(solver.operator(), s));
            (record, snaps, diag)
        };
        Ok(MicroRun {
            epsilon,
            grid,
            record,
            snapshots,
            ic,
        })
    }

    /// Macro spacing: `macro_h`, or the finest micro spacing of the study.
    pub fn macro_spacing(&self) -> f64 {
        let finest = self.epsilons.iter().cloned().fold(f64::INFINITY, f64::min);
        self.macro_h.unwrap_or(finest / self.cells_per_period as f64)
    }

    pub fn run_macro(&self, cell: &CellSolution) -> Result<MacroRun> {
        let grid = MacroGrid::new(self.dim, self.length, self.macro_spacing(), self.delta)?;
        let solver = MacroSolver::new(grid.clone(), self.model(cell), self.params, &self.flux)?;
        let initial = match &self.ic {
            InitialCondition::Constant { values } => solver.constant_state(*values),
            InitialCondition::WellPrepared { profiles, .. } => {
                let alpha = 1.0 / cell.cell.fluid_fraction();
                solver.state_from_fn(|i, x| alpha * profiles[i].value(x, self.dim, self.length))
            }
        };
        let record = solver.run(initial, &self.snapshot_steps()?)?;
        let snapshots = to_snapshots(&record.snapshots, |s| s.a.clone());
        Ok(MacroRun { grid, record, snapshots })
    }
}

/// Run the micro problem at every ε (in parallel) and the macro problem
/// once, then compare.
pub fn run_study(spec: &StudySpec) -> Result<StudyOutput> {
    spec.validate()?;
    let cell = spec.cell_solution()?;
    let model = spec.model(&cell);
    let mut epsilons = spec.epsilons.clone();
    epsilons.sort_by(|a, b| b.total_cmp(a));
    let basis = spec.basis()?;
    let micro: Vec<MicroRun> = epsilons
        .par_iter()
        .map(|&eps| spec.run_micro_with(eps, &cell, basis.as_ref()))
        .collect::<Result<_>>()?;
    let mac = spec.run_macro(&cell)?;
    let macro_raster = Raster::macroscopic(&mac.grid);

    let rasters: Vec<Raster> = micro.iter().map(|m| Raster::micro(&m.grid)).collect();
    let series: Vec<MicroSeries> = micro
        .iter()
        .zip(&rasters)
        .map(|(m, raster)| MicroSeries {
            epsilon: m.epsilon,
            raster,
            snapshots: &m.snapshots,
        })
        .collect();
    let rows = micro_macro_error(&series, &macro_raster, &mac.snapshots, &spec.tests, model.theta, spec.hole_radius)?;
    let ladder = norm_ladder(
        micro
            .iter()
            .zip(&rasters)
            .map(|(m, raster)| run_norms(m.epsilon, raster, &m.snapshots))
            .collect(),
    );
    let macro_inflow = mac.record.total_inflow();
    let runs = micro
        .iter()
        .map(|m| EpsilonSummary {
            epsilon: m.epsilon,
            max_balance_residual: m.record.max_balance_residual(),
            min_value: m.record.min_value(),
            micro_inflow: m.record.total_inflow(),
            macro_inflow,
            halvings: m.record.halvings,
        })
        .collect();
    let ic = micro.iter().filter_map(|m| m.ic.clone()).collect();
    let micro_records = micro.into_iter().map(|m| (m.epsilon, m.record)).collect();
    Ok(StudyOutput {
        cell,
        model,
        report: ConvergenceReport {
            rows,
            runs,
            ladder: Some(ladder),
            ic,
        },
        micro_records,
        macro_record: mac.record,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Phase, RampKind, TimeRamp, TrigTerm};
    use crate::micro_solver::SpeciesFlux;

    fn grid(eps: f64, m: usize, theta: f64) -> PerforatedGrid {
        PerforatedGrid::new(GridSpec {
            dim: 2,
            length: 1.0,
            h: eps / m as f64,
            epsilon: eps,
            delta: 0.032,
            hole_radius: theta,
        })
        .unwrap()
    }

    fn unit_flux(y: PeriodicFactor) -> BoundaryFlux {
        BoundaryFlux {
            ramp: TimeRamp {
                kind: RampKind::Linear,
                tau: 0.5,
            },
            species: std::array::from_fn(|_| SpeciesFlux {
                y: y.clone(),
                ..SpeciesFlux::constant(1.0)
            }),
            ..BoundaryFlux::zero()
        }
    }

    fn one() -> TestFunction {
        TestFunction::new("one", SpatialFactor::default(), PeriodicFactor::default(), TestSupport::Global)
    }

    #[test]
    fn trivial_volume_values() {
        let g = MacroGrid::new(2, 1.0, 1.0 / 32.0, 0.0).unwrap();
        let r = Raster::macroscopic(&g);
        let zero = vec![0.0; r.shape.len()];
        let ones = vec![1.0; r.shape.len()];
        let times = [0.0, 0.5, 1.0, 2.0];
        assert_eq!(volume_two_scale_functional(&times, &[zero.as_slice(); 4], &r, &one(), 0.1), 0.0);
        let v = volume_two_scale_functional(&times, &[ones.as_slice(); 4], &r, &one(), 0.1);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn volume_functional_is_linear() {
        let gr = grid(0.125, 16, 0.2);
        let r = Raster::micro(&gr);
        let tests = default_test_set(2, 1.0);
        let f: Vec<f64> = (0..r.shape.len()).map(|c| (c as f64 * 0.37).sin()).collect();
        let g: Vec<f64> = (0..r.shape.len()).map(|c| (c as f64 * 0.11).cos()).collect();
        let combo: Vec<f64> = f.iter().zip(&g).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
        for phi in &tests {
            let lhs = volume_functional_at(&combo, &r, phi, 0.3, 0.125);
            let rhs = 2.0 * volume_functional_at(&f, &r, phi, 0.3, 0.125) - 3.0 * volume_functional_at(&g, &r, phi, 0.3, 0.125);
            assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn extended_constant_tends_to_porosity_weighted_integral() {
        // a single block: the raster fraction is exact per block
        let phi = &default_test_set(2, 1.0)[0];
        let mut errs = Vec::new();
        for eps in [0.125, 0.0625, 0.03125] {
            let gr = grid(eps, 16, 0.25);
            let cell = crate::geometry::build_unit_cell(2, 0.25, 16).unwrap();
            let r = Raster::micro(&gr);
            let field: Vec<f64> = gr.fluid_mask.iter().map(|&f| if f { 3.0 } else { 0.0 }).collect();
            let value = volume_functional_at(&field, &r, phi, 0.0, eps);
            let unp = MacroGrid::new(2, 1.0, 1.0 / 1024.0, 0.0).unwrap();
            let ones = vec![1.0; unp.shape.len()];
            let target = 3.0 * cell.fluid_fraction() * volume_functional_at(&ones, &Raster::macroscopic(&unp), phi, 0.0, 1.0);
            errs.push((value - target).abs());
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] < 2e-3);
    }

    #[test]
    fn surface_functional_of_unit_flux_is_exact_measure() {
        let gr = grid(0.0625, 16, 0.2);
        let flux = unit_flux(PeriodicFactor::default());
        let v = surface_two_scale_functional(&flux, 0, &one(), &gr, (0.0, 2.0), 4);
        let expected = flux.ramp.integral(0.0, 2.0) * gr.eps_gamma_eps();
        assert!((v - expected).abs() < 1e-12 * expected);
        let zero = surface_two_scale_functional(&BoundaryFlux::zero(), 0, &one(), &gr, (0.0, 2.0), 4);
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn surface_functional_converges_to_limit() {
        let y = PeriodicFactor(vec![
            TrigTerm {
                coef: 1.0,
                k: vec![],
                phase: Phase::Cos,
            },
            TrigTerm {
                coef: 1.0,
                k: vec![1, 0],
                phase: Phase::Cos,
            },
        ]);
        let flux = unit_flux(y);
        // ∫_Γ (1 + cos 2πy₁) dσ = 2πΘ (1 + J₀(2πΘ))
        let theta: f64 = 0.2;
        let per_hole = 2.0 * std::f64::consts::PI * theta * (1.0 + puruspe::Jn(0, 2.0 * std::f64::consts::PI * theta));
        let limit = surface_limit(&flux, 0, &one(), 2, 1.0, 0.032, theta, (0.0, 1.0));
        let omega_delta = (1.0f64 - 0.064).powi(2);
        assert!((limit - flux.ramp.integral(0.0, 1.0) * omega_delta * per_hole).abs() < 1e-10);
        let mut errs = Vec::new();
        for eps in [0.125, 0.0625, 0.03125] {
            let v = surface_two_scale_functional(&flux, 0, &one(), &grid(eps, 16, theta), (0.0, 1.0), 4);
            errs.push((v - limit).abs() / limit);
        }
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }

    #[test]
    fn orders_and_monotonicity() {
        assert!((estimated_order(0.1, 0.4, 0.05, 0.1).unwrap() - 2.0).abs() < 1e-12);
        assert!(estimated_order(0.1, 1e-13, 0.05, 1e-14).is_none());
        let row = |e: f64, err: f64| ConvergenceRow {
            epsilon: e,
            phi_id: "p".into(),
            error: err,
            order: None,
        };
        let rep = ConvergenceReport {
            rows: vec![row(0.25, 0.1), row(0.125, 0.04), row(0.0625, 0.02)],
            runs: vec![],
            ladder: None,
            ic: vec![],
        };
        assert!(rep.monotone());
        let s = rep.summary();
        assert!(s.passed && (s.worst_order.unwrap() - (5.0f64).log2() / 2.0).abs() < 1e-12);
        assert!(rep.to_csv().starts_with("epsilon,phi_id,error,order\n"));
    }

    #[test]
    fn constant_field_norms() {
        let gr = grid(0.125, 8, 0.25);
        let r = Raster::micro(&gr);
        let c = 1.5;
        let snaps: Vec<FieldSnapshot> = (0..=20)
            .map(|k| FieldSnapshot {
                t: k as f64 * 0.1,
                a: std::array::from_fn(|_| gr.fluid_mask.iter().map(|&f| if f { c } else { 0.0 }).collect()),
            })
            .collect();
        let row = run_norms(0.125, &r, &snaps);
        let vol = gr.fluid_volume();
        let n = row.norms[0];
        assert!((n[0] - c * (2.0 * vol).sqrt()).abs() < 1e-12);
        assert!((n[1] - c * vol.sqrt()).abs() < 1e-12);
        assert_eq!(n[2], 0.0);
        assert!((n[3] - c * vol.powf(0.25)).abs() < 1e-12);
        assert_eq!(n[4], 0.0);

        let zero: Vec<FieldSnapshot> = snaps
            .iter()
            .map(|s| FieldSnapshot {
                t: s.t,
                a: std::array::from_fn(|_| vec![0.0; r.shape.len()]),
            })
            .collect();
        assert!(run_norms(0.125, &r, &zero).norms.iter().flatten().all(|&v| v == 0.0));
        let ladder = norm_ladder(vec![row.clone(), NormRow { epsilon: 0.0625, ..row }]);
        assert!(ladder.flags.is_empty());
    }

    #[test]
    fn mismatched_time_grids_rejected() {
        let gr = grid(0.125, 8, 0.25);
        let r = Raster::micro(&gr);
        let snap = |t: f64| FieldSnapshot {
            t,
            a: std::array::from_fn(|_| vec![1.0; r.shape.len()]),
        };
        let micro = [snap(0.0), snap(1.0)];
        let mac = [snap(0.0), snap(0.5)];
        let series = [MicroSeries {
            epsilon: 0.125,
            raster: &r,
            snapshots: &micro,
        }];
        assert!(micro_macro_error(&series, &r, &mac, &[one()], 1.0, 0.25).is_err());
    }

    fn small_study(hole_radius: f64, ic: InitialCondition, flux: BoundaryFlux) -> StudySpec {
        StudySpec {
            dim: 2,
            length: 1.0,
            delta: 0.032,
            hole_radius,
            cells_per_period: 8,
            epsilons: vec![0.25, 0.125],
            macro_h: None,
            params: PhysicalParams {
                diffusion: [1.0, 1.0, 1.0],
                t_final: 0.2,
                dt: 0.01,
            },
            flux,
            ic,
            snapshots: 5,
            support: SourceSupport::Delta,
            tests: default_test_set(2, 1.0),
        }
    }

    #[test]
    fn no_holes_micro_equals_macro() {
        let spec = small_study(
            0.0,
            InitialCondition::Constant {
                values: [1.0, 0.5, 0.1],
            },
            BoundaryFlux::zero(),
        );
        let out = run_study(&spec).unwrap();
        // the finest micro grid coincides with the macro grid; non-oscillating φ only
        let rows: Vec<&ConvergenceRow> = out
            .report
            .rows
            .iter()
            .filter(|r| r.epsilon == 0.125 && r.phi_id.starts_with("bump_center"))
            .collect();
        assert_eq!(rows.len(), 3);
        for r in rows {
            assert!(r.error < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn species_swap_symmetry() {
        let profiles = crate::initial_data::default_profiles(2);
        let swapped = [profiles[1].clone(), profiles[0].clone(), profiles[2].clone()];
        let flux = unit_flux(PeriodicFactor::default());
        let ic = |p: [SpatialFactor; 3]| InitialCondition::WellPrepared {
            profiles: p,
            n_rho: 16,
            n_phi: 32,
        };
        let a = run_study(&small_study(0.2, ic(profiles), flux.clone())).unwrap();
        let b = run_study(&small_study(0.2, ic(swapped), flux)).unwrap();
        for (ra, rb) in a.report.rows.iter().zip(&b.report.rows) {
            let swap = |id: &str| id.replace(":a1", ":aX").replace(":a2", ":a1").replace(":aX", ":a2");
            let rb_match = b.report.rows.iter().find(|r| r.epsilon == ra.epsilon && r.phi_id == swap(&ra.phi_id)).unwrap();
            assert!((ra.error - rb_match.error).abs() <= 1e-12 * ra.error.max(1e-12), "{ra:?} {rb:?}");
        }
    }
}

