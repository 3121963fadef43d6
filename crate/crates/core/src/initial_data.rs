//! Well-prepared initial data: `a_{ε,0} = α a₀ χ_{Ω_ε} + Σ_k w̃_k`, where each
//! `w_k` is a harmonic corrector on the annulus `r ≤ |x − x_k| ≤ 2r` that
//! cancels the normal derivative of `α a₀` on the hole boundary and vanishes
//! on the outer circle.
//!
//! The annulus problem is solved once per hole on the reference annulus
//! `1 ≤ ρ ≤ 2` (physical radius `rρ`) with Neumann data
//! `∂_ρ w(1, φ) = −α r ∇a₀(x_k + r e_φ)·e_ρ`. The angular direction is
//! treated spectrally (the data are sampled at `N_φ` equispaced angles and
//! transformed), the radial direction by cell-centered finite volumes, so
//! each Fourier mode needs a single tridiagonal solve whose unit-data
//! profile is shared by all holes. Values off the polar nodes come from
//! bilinear interpolation in `(ρ, φ)`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::SpatialFactor;
use crate::geometry::{PerforatedGrid, UnitCellSpec};

pub const DEFAULT_N_RHO: usize = 64;
pub const DEFAULT_N_PHI: usize = 128;

/// Default macroscopic profiles `a₀^i = c_i + A_i (cos πx₁/L + … + cos πx_d/L)`.
pub fn default_profiles(dim: usize) -> [SpatialFactor; 3] {
    let profile = |c: f64, amp: f64| {
        let mut terms = vec![crate::expr::CosineTerm { coef: c, k: vec![0; dim] }];
        for a in 0..dim {
            let mut k = vec![0; dim];
            k[a] = 1;
            terms.push(crate::expr::CosineTerm { coef: amp, k });
        }
        SpatialFactor::Cosine { terms }
    };
    [profile(1.0, 0.25), profile(1.0, -0.2), profile(0.5, 0.1)]
}

/// Radial profiles `P_n(ρ)` of every angular mode for unit Neumann data at
/// `ρ = 1` and zero Dirichlet data at `ρ = 2`.
#[derive(Debug, Clone)]
pub struct AnnulusBasis {
    pub n_rho: usize,
    pub n_phi: usize,
    /// `1`, the cell centers, `2`.
    pub rho_nodes: Vec<f64>,
    /// `profiles[n][i]` at `rho_nodes[i]`, `n = 0..=n_phi/2`.
    profiles: Vec<Vec<f64>>,
    /// Largest relative residual of the tridiagonal solves.
    pub residual: f64,
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

impl AnnulusBasis {
    pub fn new(n_rho: usize, n_phi: usize) -> Result<Self> {
        if n_rho < 16 {
            return Err(Error::config("ic.n_rho", "at least 16 radial cells required"));
        }
        if n_phi < 32 || n_phi % 2 != 0 {
            return Err(Error::config("ic.n_phi", "an even number of at least 32 angles required"));
        }
        let dr = 1.0 / n_rho as f64;
        let centers: Vec<f64> = (0..n_rho).map(|i| 1.0 + (i as f64 + 0.5) * dr).collect();
        let face = |i: usize| 1.0 + i as f64 * dr;
        let mut rho_nodes = vec![1.0];
        rho_nodes.extend(&centers);
        rho_nodes.push(2.0);

        let mut residual: f64 = 0.0;
        let profiles = (0..=n_phi / 2)
            .map(|n| {
                let n2 = (n * n) as f64;
                let (mut lo, mut di, mut up) = (vec![0.0; n_rho], vec![0.0; n_rho], vec![0.0; n_rho]);
                let mut rhs = vec![0.0; n_rho];
                for i in 0..n_rho {
                    // ∫ (ρ c')' − n² c/ρ over the cell, sign flipped
                    di[i] = n2 * dr / centers[i];
                    if i > 0 {
                        let w = face(i) / dr;
                        lo[i] = -w;
                        di[i] += w;
                    } else {
                        // inner face flux ρ c' = 1 (unit data)
                        rhs[i] = -1.0;
                    }
                    if i + 1 < n_rho {
                        let w = face(i + 1) / dr;
                        up[i] = -w;
                        di[i] += w;
                    } else {
                        // c(2) = 0 at half a cell
                        di[i] += 2.0 / (0.5 * dr);
                    }
                }
                let c = thomas(&lo, &di, &up, &rhs);
                let mut res: f64 = 0.0;
                for i in 0..n_rho {
                    let mut r = di[i] * c[i] - rhs[i];
                    if i > 0 {
                        r += lo[i] * c[i - 1];
                    }
                    if i + 1 < n_rho {
                        r += up[i] * c[i + 1];
                    }
                    res = res.max(r.abs());
                }
                residual = residual.max(res);
                let mut p = Vec::with_capacity(n_rho + 2);
                p.push(c[0] - 0.5 * dr);
                p.extend(&c);
                p.push(0.0);
                p
            })
            .collect();
        Ok(AnnulusBasis {
            n_rho,
            n_phi,
            rho_nodes,
            profiles,
            residual,
        })
    }

    pub fn angle(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.n_phi as f64
    }

    /// Fourier coefficients of data sampled at `angle(j)`; modes whose
    /// coefficients vanish to round-off are dropped.
    fn transform(&self, data: &[f64]) -> Vec<(usize, f64, f64)> {
        let n_phi = self.n_phi;
        let scale = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return Vec::new();
        }
        let mut modes = Vec::new();
        for n in 0..=n_phi / 2 {
            let (mut a, mut b) = (0.0, 0.0);
            for (j, d) in data.iter().enumerate() {
                let arg = (n * j % n_phi) as f64 * 2.0 * PI / n_phi as f64;
                a += d * arg.cos();
                b += d * arg.sin();
            }
            let norm = if n == 0 || n == n_phi / 2 { 1.0 } else { 2.0 } / n_phi as f64;
            let (a, b) = (a * norm, if n == n_phi / 2 { 0.0 } else { b * norm });
            if a.abs().max(b.abs()) > 1e-15 * scale {
                modes.push((n, a, b));
            }
        }
        modes
    }

    /// Corrector for Neumann data `data[j] = ∂_ρ w(1, angle(j))`.
    pub fn solve(&self, data: &[f64]) -> AnnulusCorrector {
        assert_eq!(data.len(), self.n_phi);
        AnnulusCorrector {
            modes: self.transform(data),
            data: data.to_vec(),
        }
    }

    /// `w` at polar node `(i, j)`.
    pub fn node_value(&self, w: &AnnulusCorrector, i: usize, j: usize) -> f64 {
        let phi = self.angle(j);
        w.modes
            .iter()
            .map(|&(n, a, b)| {
                let arg = n as f64 * phi;
                self.profiles[n][i] * (a * arg.cos() + b * arg.sin())
            })
            .sum()
    }

    /// Bilinear interpolation of the polar nodes at `(ρ, φ)`, `1 ≤ ρ ≤ 2`.
    pub fn value(&self, w: &AnnulusCorrector, rho: f64, phi: f64) -> f64 {
        if w.modes.is_empty() {
            return 0.0;
        }
        let rho = rho.clamp(1.0, 2.0);
        let i = match self.rho_nodes.partition_point(|&r| r <= rho) {
            0 => 0,
            k => (k - 1).min(self.rho_nodes.len() - 2),
        };
        let (r0, r1) = (self.rho_nodes[i], self.rho_nodes[i + 1]);
        let s = (rho - r0) / (r1 - r0);
        let u = phi.rem_euclid(2.0 * PI) / (2.0 * PI) * self.n_phi as f64;
        let j0 = (u.floor() as usize) % self.n_phi;
        let j1 = (j0 + 1) % self.n_phi;
        let t = u - u.floor();
        let v = |ii, jj| self.node_value(w, ii, jj);
        (1.0 - s) * ((1.0 - t) * v(i, j0) + t * v(i, j1)) + s * ((1.0 - t) * v(i + 1, j0) + t * v(i + 1, j1))
    }

    /// `max |w|` over the polar nodes.
    pub fn max_abs(&self, w: &AnnulusCorrector) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.rho_nodes.len() {
            for j in 0..self.n_phi {
                m = m.max(self.node_value(w, i, j).abs());
            }
        }
        m
    }
}

/// Solved annulus corrector for one hole and species.
#[derive(Debug, Clone)]
pub struct AnnulusCorrector {
    /// `(n, a_n, b_n)` of the nonzero angular modes.
    modes: Vec<(usize, f64, f64)>,
    /// Sampled Neumann data `∂_ρ w(1, φ_j)`.
    pub data: Vec<f64>,
}

impl AnnulusCorrector {
    pub fn is_zero(&self) -> bool {
        self.modes.is_empty()
    }
}

/// Neumann data `−α r ∇a₀(x_k + r e_ρ)·e_ρ` at the basis angles, and the
/// corrector solving the reference problem with it.
pub fn solve_annulus(
    basis: &AnnulusBasis,
    profile: &SpatialFactor,
    center: [f64; 3],
    alpha: f64,
    r: f64,
    length: f64,
) -> AnnulusCorrector {
    let data: Vec<f64> = (0..basis.n_phi)
        .map(|j| {
            let phi = basis.angle(j);
            let (c, s) = (phi.cos(), phi.sin());
            let x = [center[0] + r * c, center[1] + r * s, 0.0];
            let g = profile.gradient(x, 2, length);
            -alpha * r * (g[0] * c + g[1] * s)
        })
        .collect();
    basis.solve(&data)
}

/// Closed-form corrector for a constant gradient `|g|` along `φ = 0`:
/// `w = α r |g| (Aρ + B/ρ) cos φ` with `A = −1/5`, `B = 4/5`.
pub fn annulus_closed_form(alpha: f64, r: f64, g: f64, rho: f64, phi: f64) -> f64 {
    alpha * r * g * (-rho / 5.0 + 4.0 / (5.0 * rho)) * phi.cos()
}

/// Assembled well-prepared initial data together with the per-hole
/// correctors, evaluable at arbitrary points.
#[derive(Debug, Clone)]
pub struct WellPreparedIC {
    pub alpha: f64,
    /// Physical hole radius `r(ε)`.
    pub r: f64,
    pub length: f64,
    pub epsilon: f64,
    pub h: f64,
    pub profiles: [SpatialFactor; 3],
    pub basis: AnnulusBasis,
    pub hole_centers: Vec<[f64; 3]>,
    /// `correctors[k][i]` for hole `k`, species `i`; empty when built raw.
    pub correctors: Vec<[AnnulusCorrector; 3]>,
    /// Full-grid fields, zero in the holes.
    pub fields: [Vec<f64>; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IcDiagnostics {
    pub epsilon: f64,
    pub h: f64,
    pub r: f64,
    pub alpha: f64,
    pub min_value: f64,
    /// `α min a₀` over fluid cells.
    pub i_min: f64,
    /// `max_k max|w_k| / r(ε)`.
    pub w_over_r: f64,
    /// `‖Σ_k w̃_k‖_{L²(Ω_ε)}`.
    pub corrector_l2: f64,
    /// Norms entering the uniform bound on the initial data.
    pub l2: [f64; 3],
    pub l4: [f64; 3],
    pub grad_l2: [f64; 3],
    pub supports_disjoint: bool,
}

impl WellPreparedIC {
    /// Annulus corrector of hole `k`, species `i`, at `x`, if `x` is in its annulus.
    fn corrector_at(&self, k: usize, i: usize, x: [f64; 3]) -> Option<f64> {
        let c = self.hole_centers[k];
        let (dx, dy) = (x[0] - c[0], x[1] - c[1]);
        let rho = (dx * dx + dy * dy).sqrt() / self.r;
        if !(1.0 - 1e-12..=2.0).contains(&rho) || self.correctors.is_empty() {
            return None;
        }
        Some(self.basis.value(&self.correctors[k][i], rho, dy.atan2(dx)))
    }

    /// Pointwise value `α a₀(x) + w_k(x)` of species `i` (the hole owning the
    /// ε-block of `x` supplies the corrector).
    pub fn value_at(&self, i: usize, x: [f64; 3], grid: &PerforatedGrid) -> f64 {
        let base = self.alpha * self.profiles[i].value(x, 2, self.length);
        let n = grid.shape.extents[0];
        let mut ijk = [0; 3];
        for a in 0..2 {
            ijk[a] = ((x[a] / self.h).floor().max(0.0) as usize).min(n - 1);
        }
        match grid.hole_of_cell(grid.shape.index(ijk)) {
            Some(k) => base + self.corrector_at(k, i, x).unwrap_or(0.0),
            None => base,
        }
    }

    pub fn diagnostics(&self, grid: &PerforatedGrid) -> IcDiagnostics {
        let vol = grid.cell_volume();
        let mut min_value = f64::INFINITY;
        let mut i_min = f64::INFINITY;
        let mut corr_sq = 0.0;
        let mut l2 = [0.0; 3];
        let mut l4 = [0.0; 3];
        let mut grad = [0.0; 3];
        let mut owner = vec![usize::MAX; grid.shape.len()];
        let mut disjoint = true;
        for (c, &fluid) in grid.fluid_mask.iter().enumerate() {
            if !fluid {
                continue;
            }
            let x = grid.cell_center(c);
            for i in 0..3 {
                let v = self.fields[i][c];
                let base = self.alpha * self.profiles[i].value(x, 2, self.length);
                min_value = min_value.min(v);
                i_min = i_min.min(base);
                corr_sq += (v - base) * (v - base);
                l2[i] += v * v;
                l4[i] += v.powi(4);
                for a in 0..2 {
                    if let Some(nb) = grid.shape.forward(c, a, false) {
                        if grid.fluid_mask[nb] {
                            let d = (self.fields[i][nb] - v) / grid.h();
                            grad[i] += d * d;
                        }
                    }
                }
            }
            if !self.correctors.is_empty() {
                for (k, hc) in self.hole_centers.iter().enumerate() {
                    let d = ((x[0] - hc[0]).powi(2) + (x[1] - hc[1]).powi(2)).sqrt();
                    if d <= 2.0 * self.r {
                        if owner[c] != usize::MAX && owner[c] != k {
                            disjoint = false;
                        }
                        owner[c] = k;
                    }
                }
            }
        }
        let w_max = self
            .correctors
            .iter()
            .flat_map(|ws| ws.iter().map(|w| self.basis.max_abs(w)))
            .fold(0.0, f64::max);
        IcDiagnostics {
            epsilon: self.epsilon,
            h: self.h,
            r: self.r,
            alpha: self.alpha,
            min_value,
            i_min,
            w_over_r: w_max / self.r,
            corrector_l2: (corr_sq / 3.0 * vol).sqrt(),
            l2: l2.map(|s| (s * vol).sqrt()),
            l4: l4.map(|s| (s * vol).powf(0.25)),
            grad_l2: grad.map(|s| (s * vol).sqrt()),
            supports_disjoint: disjoint,
        }
    }
}

/// `α a₀ χ_{Ω_ε} + Σ_k w̃_k` on the fluid cells of `grid`.
///
/// With `with_correctors = false` only the scaled profile is laid down,
/// which violates the compatibility condition on the hole boundaries.
pub fn assemble_well_prepared(
    profiles: &[SpatialFactor; 3],
    grid: &PerforatedGrid,
    cell: &UnitCellSpec,
    basis: &AnnulusBasis,
    with_correctors: bool,
) -> Result<WellPreparedIC> {
    if grid.dim() != 2 {
        return Err(Error::config("ic.mode", "well-prepared initial data are implemented for d = 2"));
    }
    let length = grid.spec.length;
    for (i, p) in profiles.iter().enumerate() {
        p.validate(&format!("ic.a0_{}", i + 1), 2)?;
        if !(p.lower_bound() > 0.0) {
            return Err(Error::config(format!("ic.a0_{}", i + 1), "profile must be strictly positive"));
        }
    }
    if cell.resolution != grid.cells_per_period || cell.dim != 2 {
        return Err(Error::config("ic", "unit cell must match the grid's cells per period"));
    }
    // α θ = 1 with the discrete porosity, so the profile's two-scale mass is exact
    let alpha = 1.0 / cell.fluid_fraction();
    let r = grid.hole_radius_physical();
    // the annulus B(x_k, 2r) stays inside the ε-block since r ≤ ε/4
    assert!(2.0 * r <= 0.5 * grid.epsilon() + 1e-12, "annuli of neighboring holes would overlap");

    let correctors: Vec<[AnnulusCorrector; 3]> = if with_correctors && r > 0.0 {
        grid.hole_centers
            .par_iter()
            .map(|&c| std::array::from_fn(|i| solve_annulus(basis, &profiles[i], c, alpha, r, length)))
            .collect()
    } else {
        Vec::new()
    };

    let mut fields: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; grid.shape.len()]);
    for (c, &fluid) in grid.fluid_mask.iter().enumerate() {
        if fluid {
            let x = grid.cell_center(c);
            for i in 0..3 {
                fields[i][c] = alpha * profiles[i].value(x, 2, length);
            }
        }
    }
    let mut ic = WellPreparedIC {
        alpha,
        r,
        length,
        epsilon: grid.epsilon(),
        h: grid.h(),
        profiles: profiles.clone(),
        basis: basis.clone(),
        hole_centers: grid.hole_centers.clone(),
        correctors,
        fields,
    };
    if !ic.correctors.is_empty() {
        let h = grid.h();
        let n = grid.shape.extents[0] as isize;
        for k in 0..ic.hole_centers.len() {
            let hc = ic.hole_centers[k];
            let reach = (2.0 * r / h).ceil() as isize + 1;
            let ci = (hc[0] / h).floor() as isize;
            let cj = (hc[1] / h).floor() as isize;
            for j in (cj - reach).max(0)..=(cj + reach).min(n - 1) {
                for i in (ci - reach).max(0)..=(ci + reach).min(n - 1) {
                    let idx = grid.shape.index([i as usize, j as usize, 0]);
                    if !grid.fluid_mask[idx] {
                        continue;
                    }
                    let x = grid.cell_center(idx);
                    for s in 0..3 {
                        if let Some(w) = ic.corrector_at(k, s, x) {
                            ic.fields[s][idx] += w;
                        }
                    }
                }
            }
        }
    }
    Ok(ic)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub h: f64,
    /// Largest one-sided normal difference quotient on the hole boundaries.
    pub gamma_residual: f64,
    /// Same on the outer boundary.
    pub outer_residual: f64,
    pub constant: f64,
    pub passed: bool,
}

/// Discrete normal derivative of the initial data on `Γ_ε` and `∂Ω`.
///
/// Each hole face is projected onto the true circle, `x_b = x_k + r n`, and
/// the one-sided quotient `(a(x_b + h n) − a(x_b))/h` along the true normal
/// is taken; outer faces use the inward normal at their centers. Passes if
/// the largest magnitude is at most `constant · h`.
pub fn verify_compatibility(ic: &WellPreparedIC, grid: &PerforatedGrid, constant: f64) -> CompatibilityReport {
    let h = grid.h();
    let quotient = |x: [f64; 3], n: [f64; 3]| -> f64 {
        let xp = [x[0] + h * n[0], x[1] + h * n[1], 0.0];
        (0..3)
            .map(|i| ((ic.value_at(i, xp, grid) - ic.value_at(i, x, grid)) / h).abs())
            .fold(0.0, f64::max)
    };
    let gamma_residual = grid
        .boundary_faces
        .par_iter()
        .map(|f| {
            let c = grid.hole_centers[f.hole];
            let (dx, dy) = (f.center[0] - c[0], f.center[1] - c[1]);
            let d = (dx * dx + dy * dy).sqrt();
            let n = [dx / d, dy / d, 0.0];
            let xb = [c[0] + ic.r * n[0], c[1] + ic.r * n[1], 0.0];
            quotient(xb, n)
        })
        .reduce(|| 0.0, f64::max);
    let length = grid.spec.length;
    let cells = grid.shape.extents[0];
    let mut outer_residual: f64 = 0.0;
    for a in 0..2 {
        for side in [0.0, length] {
            for k in 0..cells {
                let mut x = [0.0; 3];
                x[a] = side;
                x[1 - a] = (k as f64 + 0.5) * h;
                let mut n = [0.0; 3];
                n[a] = if side == 0.0 { 1.0 } else { -1.0 };
                outer_residual = outer_residual.max(quotient(x, n));
            }
        }
    }
    CompatibilityReport {
        h,
        gamma_residual,
        outer_residual,
        constant,
        passed: gamma_residual.max(outer_residual) <= constant * h,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoScaleRow {
    pub epsilon: f64,
    pub phi_id: String,
    pub species: usize,
    pub value: f64,
    pub target: f64,
    pub error: f64,
}

/// `∫ ã_{ε,0} φ(x, x/ε)` against its two-scale limit `∫ a₀ φ₀ · mean_{Y*} φ_Y`
/// (the factor `α θ = 1` absorbs the porosity), for every ε and test.
pub fn two_scale_limit_check(
    ics: &[(&WellPreparedIC, &PerforatedGrid)],
    tests: &[crate::harness::TestFunction],
) -> Vec<TwoScaleRow> {
    use crate::harness::{volume_functional_at, Raster};
    let mut rows = Vec::new();
    let mut sorted: Vec<_> = ics.to_vec();
    sorted.sort_by(|a, b| b.0.epsilon.total_cmp(&a.0.epsilon));
    for (ic, grid) in sorted {
        let raster = Raster::micro(grid);
        for phi in tests {
            let mean = phi.y.mean_over_fluid(2, grid.spec.hole_radius);
            for i in 0..3 {
                let value = volume_functional_at(&ic.fields[i], &raster, phi, 0.0, ic.epsilon);
                let target = mean * limit_integral(&ic.profiles[i], phi, ic.length);
                rows.push(TwoScaleRow {
                    epsilon: ic.epsilon,
                    phi_id: phi.id.clone(),
                    species: i + 1,
                    value,
                    target,
                    error: (value - target).abs(),
                });
            }
        }
    }
    rows
}

/// `∫_Ω a₀ φ₀(0, ·)` by composite Gauss–Legendre quadrature.
fn limit_integral(profile: &SpatialFactor, phi: &crate::harness::TestFunction, length: f64) -> f64 {
    let (gx, gw) = crate::numerics::gauss_legendre(8);
    let panels = 64;
    let span = length / panels as f64;
    let pts: Vec<(f64, f64)> = (0..panels)
        .flat_map(|p| {
            gx.iter()
                .zip(&gw)
                .map(move |(s, w)| (span * (p as f64 + 0.5 * (s + 1.0)), 0.5 * span * w))
        })
        .collect();
    let mut sum = 0.0;
    for &(x0, w0) in &pts {
        for &(x1, w1) in &pts {
            let x = [x0, x1, 0.0];
            sum += w0 * w1 * profile.value(x, 2, length) * phi.phi0(0.0, x, 2, length);
        }
    }
    sum
}
