//! Closed expression set for fluxes, initial profiles and test functions.
//!
//! Every factor here has either an analytic gradient (spatial profiles) or
//! analytic integrals over `Y*` and `Γ` (periodic factors), which the
//! harness and the initial-data construction rely on.

use std::f64::consts::PI;

use puruspe::Jn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ball_volume, sphere_measure};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampKind {
    /// `min(t/τ, 1)`.
    Linear,
    /// `3u² − 2u³` with `u = min(t/τ, 1)`; C¹.
    Smooth,
}

/// Time factor `s(t)` with `s(0) = 0` by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeRamp {
    pub kind: RampKind,
    pub tau: f64,
}

impl TimeRamp {
    pub fn value(&self, t: f64) -> f64 {
        let u = (t / self.tau).clamp(0.0, 1.0);
        match self.kind {
            RampKind::Linear => u,
            RampKind::Smooth => u * u * (3.0 - 2.0 * u),
        }
    }

    /// `∫_a^b s(t) dt`, exact.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let prim = |t: f64| {
            let tau = self.tau;
            if t <= 0.0 {
                0.0
            } else if t >= tau {
                // both ramps average 1/2 over [0, τ]
                0.5 * tau + (t - tau)
            } else {
                let u = t / tau;
                match self.kind {
                    RampKind::Linear => 0.5 * tau * u * u,
                    RampKind::Smooth => tau * (u.powi(3) - 0.5 * u.powi(4)),
                }
            }
        };
        prim(b) - prim(a)
    }
}

/// `coef · Π_j cos(k_j π x_j / L)`; every term has zero normal derivative on
/// the faces of `[0, L]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineTerm {
    pub coef: f64,
    #[serde(default)]
    pub k: Vec<u32>,
}

impl CosineTerm {
    fn wave(&self, axis: usize, length: f64) -> f64 {
        self.k.get(axis).copied().unwrap_or(0) as f64 * PI / length
    }
}

/// Smooth spatial factor `g(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialFactor {
    Constant { value: f64 },
    /// `exp(1 − 1/(1 − |x−c|²/R²))` inside the ball, 0 outside; peak 1.
    Bump { center: Vec<f64>, radius: f64 },
    Cosine { terms: Vec<CosineTerm> },
}

impl Default for SpatialFactor {
    fn default() -> Self {
        SpatialFactor::Constant { value: 1.0 }
    }
}

impl SpatialFactor {
    /// `c + A·sin²(πx₁/L)·…·sin²(πx_d/L)` written as a cosine series.
    pub fn raised_bump(dim: usize, base: f64, amplitude: f64) -> Self {
        let mut terms = vec![CosineTerm {
            coef: base,
            k: vec![0; dim],
        }];
        // Π (1 − cos 2πx_j)/2 expanded over subsets of axes
        for mask in 0..(1u32 << dim) {
            let k: Vec<u32> = (0..dim).map(|a| if mask >> a & 1 == 1 { 2 } else { 0 }).collect();
            let sign = if mask.count_ones() % 2 == 1 { -1.0 } else { 1.0 };
            terms.push(CosineTerm {
                coef: amplitude * sign / f64::from(1u32 << dim),
                k,
            });
        }
        SpatialFactor::Cosine { terms }
    }

    pub fn value(&self, x: [f64; 3], dim: usize, length: f64) -> f64 {
        match self {
            SpatialFactor::Constant { value } => *value,
            SpatialFactor::Bump { center, radius } => {
                let q = dist2(x, center, dim) / (radius * radius);
                if q >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - q)).exp()
                }
            }
            SpatialFactor::Cosine { terms } => terms
                .iter()
                .map(|t| {
                    (0..dim).fold(t.coef, |acc, a| acc * (t.wave(a, length) * x[a]).cos())
                })
                .sum(),
        }
    }

    pub fn gradient(&self, x: [f64; 3], dim: usize, length: f64) -> [f64; 3] {
        let mut g = [0.0; 3];
        match self {
            SpatialFactor::Constant { .. } => {}
            SpatialFactor::Bump { center, radius } => {
                let r2 = radius * radius;
                let q = dist2(x, center, dim) / r2;
                if q < 1.0 {
                    let v = (1.0 - 1.0 / (1.0 - q)).exp();
                    // d/dq exp(1 − 1/(1−q)) = −v/(1−q)²; dq/dx = 2(x−c)/R²
                    let f = -v / ((1.0 - q) * (1.0 - q)) * 2.0 / r2;
                    for a in 0..dim {
                        g[a] = f * (x[a] - center[a]);
                    }
                }
            }
            SpatialFactor::Cosine { terms } => {
                for t in terms {
                    for a in 0..dim {
                        let mut p = t.coef;
                        for b in 0..dim {
                            let w = t.wave(b, length);
                            p *= if a == b { -w * (w * x[b]).sin() } else { (w * x[b]).cos() };
                        }
                        g[a] += p;
                    }
                }
            }
        }
        g
    }

    /// A guaranteed lower bound of the factor over the whole box.
    pub fn lower_bound(&self) -> f64 {
        match self {
            SpatialFactor::Constant { value } => *value,
            SpatialFactor::Bump { .. } => 0.0,
            SpatialFactor::Cosine { terms } => terms
                .iter()
                .map(|t| if t.k.iter().all(|&k| k == 0) { t.coef } else { -t.coef.abs() })
                .sum(),
        }
    }

    pub fn validate(&self, field: &str, dim: usize) -> Result<()> {
        match self {
            SpatialFactor::Constant { value } if !value.is_finite() => {
                Err(Error::config(field, "constant must be finite"))
            }
            SpatialFactor::Bump { center, radius } => {
                if center.len() != dim {
                    Err(Error::config(field, format!("bump center needs {dim} coordinates")))
                } else if !(*radius > 0.0) {
                    Err(Error::config(field, "bump radius must be positive"))
                } else {
                    Ok(())
                }
            }
            SpatialFactor::Cosine { terms } => {
                if terms.iter().any(|t| t.k.len() > dim || !t.coef.is_finite()) {
                    Err(Error::config(field, format!("cosine terms take at most {dim} wave numbers")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

fn dist2(x: [f64; 3], c: &[f64], dim: usize) -> f64 {
    (0..dim).map(|a| (x[a] - c[a]).powi(2)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    #[default]
    Cos,
    Sin,
}

/// `coef · cos(2π k·y)` or `coef · sin(2π k·y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub coef: f64,
    #[serde(default)]
    pub k: Vec<i32>,
    #[serde(default)]
    pub phase: Phase,
}

impl TrigTerm {
    fn wavenumber(&self) -> f64 {
        2.0 * PI * self.k.iter().map(|&k| f64::from(k * k)).sum::<f64>().sqrt()
    }

    fn is_constant(&self) -> bool {
        self.k.iter().all(|&k| k == 0)
    }
}

/// Y-periodic factor: a trigonometric polynomial in `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeriodicFactor(pub Vec<TrigTerm>);

impl Default for PeriodicFactor {
    fn default() -> Self {
        PeriodicFactor::constant(1.0)
    }
}

impl PeriodicFactor {
    pub fn constant(c: f64) -> Self {
        PeriodicFactor(vec![TrigTerm {
            coef: c,
            k: Vec::new(),
            phase: Phase::Cos,
        }])
    }

    pub fn value(&self, y: [f64; 3]) -> f64 {
        self.0
            .iter()
            .map(|t| {
                let arg: f64 = 2.0 * PI * t.k.iter().enumerate().map(|(a, &k)| f64::from(k) * y[a]).sum::<f64>();
                t.coef
                    * match t.phase {
                        Phase::Cos => arg.cos(),
                        Phase::Sin => arg.sin(),
                    }
            })
            .sum()
    }

    /// `∫_{Y*} q(y) dy` in closed form (Bessel terms for d = 2).
    pub fn integral_over_fluid(&self, dim: usize, hole_radius: f64) -> f64 {
        self.0
            .iter()
            .filter(|t| t.phase == Phase::Cos)
            .map(|t| {
                let over_cell = if t.is_constant() { 1.0 } else { 0.0 };
                t.coef * (over_cell - ball_cos_integral(dim, hole_radius, t.wavenumber()))
            })
            .sum()
    }

    /// Mean over `Y*`.
    pub fn mean_over_fluid(&self, dim: usize, hole_radius: f64) -> f64 {
        self.integral_over_fluid(dim, hole_radius) / (1.0 - ball_volume(dim, hole_radius))
    }

    /// `∫_Γ q dσ` in closed form.
    pub fn integral_over_sphere(&self, dim: usize, hole_radius: f64) -> f64 {
        self.0
            .iter()
            .filter(|t| t.phase == Phase::Cos)
            .map(|t| t.coef * sphere_cos_integral(dim, hole_radius, t.wavenumber()))
            .sum()
    }

    pub fn lower_bound(&self) -> f64 {
        self.0
            .iter()
            .map(|t| if t.is_constant() && t.phase == Phase::Cos { t.coef } else { -t.coef.abs() })
            .sum()
    }

    pub fn validate(&self, field: &str, dim: usize) -> Result<()> {
        if self.0.iter().any(|t| t.k.len() > dim || !t.coef.is_finite()) {
            return Err(Error::config(field, format!("periodic terms take at most {dim} integer frequencies")));
        }
        Ok(())
    }
}

/// `∫_{|y|<Θ} cos(κ·y) dy` for `|κ| = kappa`.
pub fn ball_cos_integral(dim: usize, radius: f64, kappa: f64) -> f64 {
    if radius == 0.0 {
        return 0.0;
    }
    if kappa == 0.0 {
        return ball_volume(dim, radius);
    }
    let z = kappa * radius;
    if dim == 2 {
        2.0 * PI * radius * Jn(1, z) / kappa
    } else {
        4.0 * PI * (z.sin() - z * z.cos()) / kappa.powi(3)
    }
}

/// `∫_{|y|=Θ} cos(κ·y) dσ`.
pub fn sphere_cos_integral(dim: usize, radius: f64, kappa: f64) -> f64 {
    if radius == 0.0 {
        return 0.0;
    }
    if kappa == 0.0 {
        return sphere_measure(dim, radius);
    }
    let z = kappa * radius;
    if dim == 2 {
        2.0 * PI * radius * Jn(0, z)
    } else {
        4.0 * PI * radius * radius * z.sin() / z
    }
}
