//! Reference cell and ε-periodic perforated box.
//!
//! The unit cell is `Y = [-1/2, 1/2)^d` with a closed ball of radius `Θ`
//! removed at the origin. The perforated domain places a scaled copy of that
//! ball (radius `Θε`) at the center of every ε-block whose hole lies strictly
//! inside the security zone `Ω^δ = {x : dist(x, ∂Ω) > δ}`. Blocks that fail the
//! test stay hole-free.
//!
//! Both rasterizations mark a cell as solid iff its center lies in the closed
//! ball, using the same half-integer cell offsets, so a block of the perforated
//! grid with `ε/h = m` carries exactly the unit-cell mask at resolution `m`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::Shape;

/// Largest admissible reference hole radius.
pub const MAX_HOLE_RADIUS: f64 = 0.25;

const INTEGRALITY_TOL: f64 = 1e-9;

/// Volume of a `dim`-ball of radius `r`.
pub fn ball_volume(dim: usize, r: f64) -> f64 {
    match dim {
        2 => PI * r * r,
        _ => 4.0 / 3.0 * PI * r * r * r,
    }
}

/// Surface measure of the sphere bounding a `dim`-ball of radius `r`.
pub fn sphere_measure(dim: usize, r: f64) -> f64 {
    match dim {
        2 => 2.0 * PI * r,
        _ => 4.0 * PI * r * r,
    }
}

/// True iff the cell whose center sits `offset` cells (half-integers allowed)
/// from a hole center lies in the closed ball of radius `radius_cells`.
#[inline]
fn in_closed_ball(offset: [f64; 3], radius_cells: f64) -> bool {
    offset.iter().map(|o| o * o).sum::<f64>() <= radius_cells * radius_cells
}

/// Offset (in cells) of cell `i` from the center of a block of `m` cells.
#[inline]
fn block_offset(i: usize, m: usize) -> f64 {
    i as f64 + 0.5 - m as f64 / 2.0
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(Error::config("dim", format!("must be 2 or 3, got {dim}")))
    }
}

fn check_hole_radius(theta: f64) -> Result<()> {
    if !(0.0..=MAX_HOLE_RADIUS).contains(&theta) || !theta.is_finite() {
        return Err(Error::config(
            "hole_radius",
            format!("must lie in [0, 1/4] so the hole and its annulus fit in the cell, got {theta}"),
        ));
    }
    Ok(())
}

/// The reference cell `Y`, the hole `T = B(0, Θ)` and its rasterization.
#[derive(Debug, Clone)]
pub struct UnitCellSpec {
    pub dim: usize,
    pub hole_radius: f64,
    pub resolution: usize,
    /// `true` marks a fluid (Y*) cell.
    pub fluid_mask: Vec<bool>,
    pub theta_exact: f64,
    pub gamma_exact: f64,
}

impl UnitCellSpec {
    pub fn new(dim: usize, hole_radius: f64, resolution: usize) -> Result<Self> {
        check_dim(dim)?;
        check_hole_radius(hole_radius)?;
        if resolution < 8 {
            return Err(Error::config(
                "cell_resolution",
                format!("must be at least 8, got {resolution}"),
            ));
        }
        let shape = Shape::new(dim, resolution);
        let radius_cells = hole_radius * resolution as f64;
        let fluid_mask = (0..shape.len())
            .map(|idx| {
                if hole_radius == 0.0 {
                    return true;
                }
                let c = shape.coords(idx);
                let mut off = [0.0; 3];
                for a in 0..dim {
                    off[a] = block_offset(c[a], resolution);
                }
                !in_closed_ball(off, radius_cells)
            })
            .collect();
        Ok(UnitCellSpec {
            dim,
            hole_radius,
            resolution,
            fluid_mask,
            theta_exact: 1.0 - ball_volume(dim, hole_radius),
            gamma_exact: sphere_measure(dim, hole_radius),
        })
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.dim, self.resolution)
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.resolution as f64
    }

    /// Cell center in `Y` coordinates.
    pub fn cell_center(&self, idx: usize) -> [f64; 3] {
        let c = self.shape().coords(idx);
        let mut y = [0.0; 3];
        for a in 0..self.dim {
            y[a] = block_offset(c[a], self.resolution) * self.spacing();
        }
        y
    }

    /// Discrete porosity: the fluid volume fraction of the raster.
    pub fn fluid_fraction(&self) -> f64 {
        let n = self.fluid_mask.iter().filter(|&&f| f).count();
        n as f64 / self.fluid_mask.len() as f64
    }
}

/// Shorthand for [`UnitCellSpec::new`].
pub fn build_unit_cell(dim: usize, hole_radius: f64, resolution: usize) -> Result<UnitCellSpec> {
    UnitCellSpec::new(dim, hole_radius, resolution)
}

/// Input parameters of a perforated box `[0, L]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub dim: usize,
    pub length: f64,
    pub h: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub hole_radius: f64,
}

/// A grid face separating a fluid cell from a hole cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub center: [f64; 3],
    pub hole: usize,
    pub fluid_cell: usize,
    pub solid_cell: usize,
    pub axis: usize,
    /// Unit normal pointing out of the fluid into the hole.
    pub normal: [f64; 3],
    /// Raw face measure rescaled so each hole's faces sum to the exact sphere measure.
    pub corrected_measure: f64,
}

#[derive(Debug, Clone)]
pub struct PerforatedGrid {
    pub spec: GridSpec,
    pub shape: Shape,
    /// Grid cells per ε-block edge.
    pub cells_per_period: usize,
    pub hole_centers: Vec<[f64; 3]>,
    /// Hole index of every ε-block (`None` for hole-free blocks).
    block_hole: Vec<Option<usize>>,
    pub fluid_mask: Vec<bool>,
    pub boundary_faces: Vec<BoundaryFace>,
}

fn integer_ratio(num: f64, den: f64, field: &str, what: &str) -> Result<usize> {
    let q = num / den;
    let r = q.round();
    if r < 1.0 || (q - r).abs() > INTEGRALITY_TOL * q.max(1.0) {
        return Err(Error::config(
            field,
            format!("{what} must be a positive integer, got {q}"),
        ));
    }
    Ok(r as usize)
}

impl PerforatedGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        let GridSpec {
            dim,
            length,
            h,
            epsilon,
            delta,
            hole_radius,
        } = spec;
        check_dim(dim)?;
        check_hole_radius(hole_radius)?;
        if !(length > 0.0) {
            return Err(Error::config("length", "must be positive"));
        }
        if !(h > 0.0) {
            return Err(Error::config("h", "must be positive"));
        }
        if !(epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be positive"));
        }
        if !(delta >= 0.0) {
            return Err(Error::config("delta", "must be nonnegative"));
        }
        let cells_per_period = integer_ratio(epsilon, h, "h", "epsilon / h")?;
        let blocks = integer_ratio(length, epsilon, "epsilon", "length / epsilon")?;
        let radius = hole_radius * epsilon;
        if hole_radius > 0.0 && radius < h {
            return Err(Error::GeometryResolution { radius, h });
        }

        let n = blocks * cells_per_period;
        let shape = Shape::new(dim, n);
        let h = length / n as f64;
        let block_shape = Shape::new(dim, blocks);

        // Holes at block centers whose closed ball lies in the open set Ω^δ.
        let mut hole_centers = Vec::new();
        let mut block_hole = vec![None; block_shape.len()];
        if hole_radius > 0.0 {
            for (b, slot) in block_hole.iter_mut().enumerate() {
                let k = block_shape.coords(b);
                let mut center = [0.0; 3];
                let mut inside = true;
                for a in 0..dim {
                    center[a] = (k[a] as f64 + 0.5) * epsilon;
                    inside &= center[a] - radius > delta && center[a] + radius < length - delta;
                }
                if inside {
                    *slot = Some(hole_centers.len());
                    hole_centers.push(center);
                }
            }
        }

        let radius_cells = hole_radius * cells_per_period as f64;
        let fluid_mask: Vec<bool> = (0..shape.len())
            .map(|idx| {
                let c = shape.coords(idx);
                let mut kb = [0; 3];
                let mut off = [0.0; 3];
                for a in 0..dim {
                    kb[a] = c[a] / cells_per_period;
                    off[a] = block_offset(c[a] % cells_per_period, cells_per_period);
                }
                match block_hole[block_shape.index(kb)] {
                    Some(_) => !in_closed_ball(off, radius_cells),
                    None => true,
                }
            })
            .collect();

        let mut grid = PerforatedGrid {
            spec: GridSpec { h, ..spec },
            shape,
            cells_per_period,
            hole_centers,
            block_hole,
            fluid_mask,
            boundary_faces: Vec::new(),
        };
        grid.boundary_faces = grid.collect_boundary_faces();
        Ok(grid)
    }

    fn collect_boundary_faces(&self) -> Vec<BoundaryFace> {
        let dim = self.spec.dim;
        let mut faces = Vec::new();
        for idx in 0..self.shape.len() {
            for axis in 0..dim {
                let Some(next) = self.shape.forward(idx, axis, false) else {
                    continue;
                };
                let (fluid, solid, sign) = match (self.fluid_mask[idx], self.fluid_mask[next]) {
                    (true, false) => (idx, next, 1.0),
                    (false, true) => (next, idx, -1.0),
                    _ => continue,
                };
                let hole = self
                    .hole_of_cell(solid)
                    .expect("solid cells always belong to a hole block");
                let a = self.cell_center(idx);
                let b = self.cell_center(next);
                let mut center = [0.0; 3];
                for k in 0..3 {
                    center[k] = 0.5 * (a[k] + b[k]);
                }
                let mut normal = [0.0; 3];
                normal[axis] = sign;
                faces.push(BoundaryFace {
                    center,
                    hole,
                    fluid_cell: fluid,
                    solid_cell: solid,
                    axis,
                    normal,
                    corrected_measure: 0.0,
                });
            }
        }
        let mut per_hole = vec![0usize; self.hole_centers.len()];
        for f in &faces {
            per_hole[f.hole] += 1;
        }
        let exact = sphere_measure(dim, self.hole_radius_physical());
        for f in &mut faces {
            f.corrected_measure = exact / per_hole[f.hole] as f64;
        }
        faces
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn h(&self) -> f64 {
        self.spec.h
    }

    pub fn epsilon(&self) -> f64 {
        self.spec.epsilon
    }

    /// Physical hole radius `r(ε) = Θε`.
    pub fn hole_radius_physical(&self) -> f64 {
        self.spec.hole_radius * self.spec.epsilon
    }

    pub fn n_holes(&self) -> usize {
        self.hole_centers.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spec.h.powi(self.spec.dim as i32)
    }

    pub fn cell_center(&self, idx: usize) -> [f64; 3] {
        let c = self.shape.coords(idx);
        let mut x = [0.0; 3];
        for a in 0..self.spec.dim {
            x[a] = (c[a] as f64 + 0.5) * self.spec.h;
        }
        x
    }

    fn block_of_cell(&self, idx: usize) -> usize {
        let c = self.shape.coords(idx);
        let blocks = self.shape.extents[0] / self.cells_per_period;
        let block_shape = Shape::new(self.spec.dim, blocks);
        let mut kb = [0; 3];
        for a in 0..self.spec.dim {
            kb[a] = c[a] / self.cells_per_period;
        }
        block_shape.index(kb)
    }

    /// Hole owning the ε-block that contains cell `idx`, if any.
    pub fn hole_of_cell(&self, idx: usize) -> Option<usize> {
        self.block_hole[self.block_of_cell(idx)]
    }

    pub fn fluid_cell_count(&self) -> usize {
        self.fluid_mask.iter().filter(|&&f| f).count()
    }

    /// Discrete measure of the fluid region `Ω_ε`.
    pub fn fluid_volume(&self) -> f64 {
        self.fluid_cell_count() as f64 * self.cell_volume()
    }

    /// Measure of the security-zone interior `Ω^δ`.
    pub fn omega_delta_measure(&self) -> f64 {
        (self.spec.length - 2.0 * self.spec.delta)
            .max(0.0)
            .powi(self.spec.dim as i32)
    }

    pub fn omega_measure(&self) -> f64 {
        self.spec.length.powi(self.spec.dim as i32)
    }

    /// `ε |Γ_ε|` from the corrected face measures.
    pub fn eps_gamma_eps(&self) -> f64 {
        let total: f64 = self.boundary_faces.iter().map(|f| f.corrected_measure).sum();
        self.spec.epsilon * total
    }

    pub fn in_security_interior(&self, x: [f64; 3]) -> bool {
        let (l, d) = (self.spec.length, self.spec.delta);
        (0..self.spec.dim).all(|a| x[a] > d && x[a] < l - d)
    }

    pub fn summary(&self) -> GeometrySummary {
        let theta = self.spec.hole_radius;
        let gamma = sphere_measure(self.spec.dim, theta);
        GeometrySummary {
            d: self.spec.dim,
            l: self.spec.length,
            h: self.spec.h,
            epsilon: self.spec.epsilon,
            delta: self.spec.delta,
            theta_exact: 1.0 - ball_volume(self.spec.dim, theta),
            gamma_exact: gamma,
            n_holes: self.n_holes(),
            eps_gamma_eps: self.eps_gamma_eps(),
            limit_security_interior: gamma * self.omega_delta_measure(),
            limit_whole_domain: gamma * self.omega_measure(),
        }
    }
}

/// Shorthand for [`PerforatedGrid::new`].
pub fn build_perforated_grid(spec: GridSpec) -> Result<PerforatedGrid> {
    PerforatedGrid::new(spec)
}

/// Maps a physical point in the ε-block of hole `hole` to cell coordinates
/// `y = (x - x_k)/ε ∈ Y`.
pub fn map_to_cell_coords(
    x: [f64; 3],
    epsilon: f64,
    hole_center: [f64; 3],
    dim: usize,
    hole: usize,
) -> Result<[f64; 3]> {
    let mut y = [0.0; 3];
    for a in 0..dim {
        y[a] = (x[a] - hole_center[a]) / epsilon;
        if y[a].abs() > 0.5 + 1e-12 {
            return Err(Error::Domain { point: x, hole });
        }
    }
    Ok(y)
}

/// Cell coordinate of an arbitrary point, with the hole lattice centered in
/// each ε-block: `y = frac(x/ε) - 1/2`.
#[inline]
pub fn periodic_cell_coords(x: [f64; 3], epsilon: f64, dim: usize) -> [f64; 3] {
    let mut y = [0.0; 3];
    for a in 0..dim {
        let s = x[a] / epsilon;
        y[a] = s - s.floor() - 0.5;
    }
    y
}

#[derive(Debug, Clone, Serialize)]
pub struct GeometrySummary {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub h: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub theta_exact: f64,
    pub gamma_exact: f64,
    pub n_holes: usize,
    pub eps_gamma_eps: f64,
    /// `|Γ| |Ω^δ|`: the fixed-δ limit of `ε|Γ_ε|`.
    pub limit_security_interior: f64,
    /// `|Γ| |Ω|`: the limit with holes filling the whole box.
    pub limit_whole_domain: f64,
}
