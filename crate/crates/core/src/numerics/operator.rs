use faer::sparse::{SparseColMat, Triplet};

use super::Shape;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
    /// Zero flux through the box boundary and through every fluid–solid face.
    Neumann,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Scalar(f64),
    /// Constant symmetric `dim × dim` tensor, row-major.
    Tensor(Vec<f64>),
}

impl Coefficient {
    fn entry(&self, dim: usize, a: usize, b: usize) -> f64 {
        match self {
            Coefficient::Scalar(c) => {
                if a == b {
                    *c
                } else {
                    0.0
                }
            }
            Coefficient::Tensor(t) => t[a * dim + b],
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Coefficient::Scalar(c) if *c >= 0.0 && c.is_finite() => Ok(()),
            Coefficient::Scalar(c) => Err(Error::config(
                "coefficient",
                format!("diffusion coefficient must be a finite nonnegative number, got {c}"),
            )),
            Coefficient::Tensor(t) => {
                if t.len() != dim * dim {
                    return Err(Error::config("coefficient", "tensor has the wrong size"));
                }
                for a in 0..dim {
                    for b in 0..dim {
                        if (t[a * dim + b] - t[b * dim + a]).abs() > 1e-12 * (1.0 + t[a * dim + b].abs()) {
                            return Err(Error::config("coefficient", "tensor is not symmetric"));
                        }
                    }
                }
                if !is_positive_definite(t, dim) {
                    return Err(Error::config("coefficient", "tensor is not positive definite"));
                }
                Ok(())
            }
        }
    }
}

/// Cholesky test for a small symmetric matrix.
pub(crate) fn is_positive_definite(t: &[f64], dim: usize) -> bool {
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = t[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if s <= 0.0 {
                    return false;
                }
                l[i * dim + i] = s.sqrt();
            } else {
                l[i * dim + j] = s / l[j * dim + j];
            }
        }
    }
    true
}

/// Fluid–fluid face with the weight `c/h²` of its two-point flux.
#[derive(Debug, Clone, Copy)]
struct Face {
    lo: usize,
    hi: usize,
    weight: f64,
}

/// 2×2 patch of fluid cells in the `(a, b)` plane carrying a cross-derivative term.
///
/// Cells are ordered `[(0,0), (1,0), (0,1), (1,1)]` in the plane's local axes.
#[derive(Debug, Clone, Copy)]
struct Patch {
    cells: [usize; 4],
    weight: f64,
}

/// Cell-centered finite-volume discretization of `-div(c ∇u)` restricted to
/// the fluid cells of a mask. Vectors are compact: one entry per fluid cell,
/// in increasing grid order.
#[derive(Debug, Clone)]
pub struct MaskedOperator {
    shape: Shape,
    h: f64,
    boundary: Boundary,
    coefficient: Coefficient,
    fluid_cells: Vec<usize>,
    compact: Vec<usize>,
    faces: Vec<Face>,
    patches: Vec<Patch>,
    components: Vec<usize>,
    n_components: usize,
}

pub const SOLID: usize = usize::MAX;

impl MaskedOperator {
    pub fn assemble(
        shape: Shape,
        mask: &[bool],
        h: f64,
        coefficient: Coefficient,
        boundary: Boundary,
    ) -> Result<Self> {
        assert_eq!(mask.len(), shape.len(), "mask does not match grid shape");
        coefficient.validate(shape.dim)?;
        let dim = shape.dim;
        let periodic = boundary == Boundary::Periodic;

        let mut compact = vec![SOLID; shape.len()];
        let mut fluid_cells = Vec::new();
        for (idx, &fluid) in mask.iter().enumerate() {
            if fluid {
                compact[idx] = fluid_cells.len();
                fluid_cells.push(idx);
            }
        }

        let mut faces = Vec::new();
        for &idx in &fluid_cells {
            for axis in 0..dim {
                let w = coefficient.entry(dim, axis, axis) / (h * h);
                if w == 0.0 {
                    continue;
                }
                if let Some(next) = shape.forward(idx, axis, periodic) {
                    if mask[next] && next != idx {
                        faces.push(Face {
                            lo: compact[idx],
                            hi: compact[next],
                            weight: w,
                        });
                    }
                }
            }
        }

        // Cross terms: for each 2×2 fluid patch in the (a, b) plane, the
        // energy 2 D_ab g_a g_b h^d with face-averaged gradients g_a, g_b.
        let mut patches = Vec::new();
        for a in 0..dim {
            for b in (a + 1)..dim {
                let dab = coefficient.entry(dim, a, b);
                if dab == 0.0 {
                    continue;
                }
                for &idx in &fluid_cells {
                    let (Some(p10), Some(p01)) = (
                        shape.forward(idx, a, periodic),
                        shape.forward(idx, b, periodic),
                    ) else {
                        continue;
                    };
                    let Some(p11) = shape.forward(p10, b, periodic) else {
                        continue;
                    };
                    let cells = [idx, p10, p01, p11];
                    if cells.iter().all(|&c| mask[c]) {
                        patches.push(Patch {
                            cells: cells.map(|c| compact[c]),
                            weight: dab / (h * h),
                        });
                    }
                }
            }
        }

        let (components, n_components) = label_components(fluid_cells.len(), &faces);
        Ok(MaskedOperator {
            shape,
            h,
            boundary,
            coefficient,
            fluid_cells,
            compact,
            faces,
            patches,
            components,
            n_components,
        })
    }

    pub fn len(&self) -> usize {
        self.fluid_cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fluid_cells.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn coefficient(&self) -> &Coefficient {
        &self.coefficient
    }

    /// Grid index of every fluid cell, in compact order.
    pub fn fluid_cells(&self) -> &[usize] {
        &self.fluid_cells
    }

    /// Compact index of grid cell `idx`, or [`SOLID`].
    pub fn compact_index(&self, idx: usize) -> usize {
        self.compact[idx]
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.shape.dim as i32)
    }

    /// Connected-component label of each fluid cell.
    pub fn components(&self) -> (&[usize], usize) {
        (&self.components, self.n_components)
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.len());
        y.iter_mut().for_each(|v| *v = 0.0);
        for f in &self.faces {
            let flux = f.weight * (x[f.lo] - x[f.hi]);
            y[f.lo] += flux;
            y[f.hi] -= flux;
        }
        for p in &self.patches {
            let [c00, c10, c01, c11] = p.cells;
            let ga = 0.5 * ((x[c10] - x[c00]) + (x[c11] - x[c01]));
            let gb = 0.5 * ((x[c01] - x[c00]) + (x[c11] - x[c10]));
            // half the gradient of the patch energy 2 w ga gb
            let wa = 0.5 * p.weight * gb;
            let wb = 0.5 * p.weight * ga;
            y[c00] += -wa - wb;
            y[c10] += wa - wb;
            y[c01] += -wa + wb;
            y[c11] += wa + wb;
        }
    }

    pub fn apply_new(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.len()];
        self.apply(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.len()];
        for f in &self.faces {
            d[f.lo] += f.weight;
            d[f.hi] += f.weight;
        }
        for p in &self.patches {
            // ∂²/∂x_c² of 2 w ga gb: (±1/2)(±1/2)·2·2 w with matching signs
            let [c00, c10, c01, c11] = p.cells;
            d[c00] += 0.5 * p.weight;
            d[c11] += 0.5 * p.weight;
            d[c10] -= 0.5 * p.weight;
            d[c01] -= 0.5 * p.weight;
        }
        d
    }

    /// Sparse lower-and-upper assembly of `shift·I + scale·A`.
    pub fn shifted_matrix(&self, shift: f64, scale: f64) -> Result<SparseColMat<usize, f64>> {
        let mut t = Vec::with_capacity(self.len() + 2 * self.faces.len() + 16 * self.patches.len());
        for i in 0..self.len() {
            t.push(Triplet::new(i, i, shift));
        }
        for f in &self.faces {
            let w = scale * f.weight;
            t.push(Triplet::new(f.lo, f.lo, w));
            t.push(Triplet::new(f.hi, f.hi, w));
            t.push(Triplet::new(f.lo, f.hi, -w));
            t.push(Triplet::new(f.hi, f.lo, -w));
        }
        // patch energy 2w ga gb = w/2 (u_c·s_a)(u_c·s_b) + sym, with sign vectors
        const SA: [f64; 4] = [-1.0, 1.0, -1.0, 1.0];
        const SB: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];
        for p in &self.patches {
            let w = scale * p.weight * 0.5;
            for i in 0..4 {
                for j in 0..4 {
                    let v = w * (SA[i] * SB[j] + SB[i] * SA[j]) * 0.5;
                    if v != 0.0 {
                        t.push(Triplet::new(p.cells[i], p.cells[j], v));
                    }
                }
            }
        }
        SparseColMat::try_new_from_triplets(self.len(), self.len(), &t)
            .map_err(|e| Error::Factorization(format!("{e:?}")))
    }

    /// Removes the mean of `x` on every connected fluid component.
    pub fn project_mean(&self, x: &mut [f64]) {
        let mut sum = vec![0.0; self.n_components];
        let mut count = vec![0usize; self.n_components];
        for (v, &c) in x.iter().zip(&self.components) {
            sum[c] += v;
            count[c] += 1;
        }
        for (v, &c) in x.iter_mut().zip(&self.components) {
            *v -= sum[c] / count[c] as f64;
        }
    }

    /// Scatters a compact vector onto the full grid, with zeros in solid cells.
    pub fn extend_by_zero(&self, x: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.shape.len()];
        for (v, &idx) in x.iter().zip(&self.fluid_cells) {
            full[idx] = *v;
        }
        full
    }

    /// Gathers the fluid entries of a full-grid field.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.fluid_cells.iter().map(|&i| full[i]).collect()
    }

    /// Visits every fluid–fluid face along `axis`: `(lo, hi)` compact indices,
    /// `hi` being the forward neighbor.
    pub fn axis_faces(&self, axis: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let periodic = self.boundary == Boundary::Periodic;
        self.fluid_cells.iter().filter_map(move |&idx| {
            let next = self.shape.forward(idx, axis, periodic)?;
            let c = self.compact[next];
            (c != SOLID && next != idx).then(|| (self.compact[idx], c))
        })
    }

    /// Neighbor of compact cell `i` along `axis` in direction `forward`, if fluid.
    pub fn neighbor(&self, i: usize, axis: usize, forward: bool) -> Option<usize> {
        let periodic = self.boundary == Boundary::Periodic;
        let idx = self.fluid_cells[i];
        let next = if forward {
            self.shape.forward(idx, axis, periodic)?
        } else {
            self.shape.backward(idx, axis, periodic)?
        };
        let c = self.compact[next];
        (c != SOLID).then_some(c)
    }
}

fn label_components(n: usize, faces: &[Face]) -> (Vec<usize>, usize) {
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut parent: Vec<usize> = (0..n).collect();
    for f in faces {
        let (a, b) = (find(&mut parent, f.lo), find(&mut parent, f.hi));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut out = vec![0; n];
    let mut count = 0;
    for i in 0..n {
        let r = find(&mut parent, i);
        if label[r] == usize::MAX {
            label[r] = count;
            count += 1;
        }
        out[i] = label[r];
    }
    (out, count)
}

/// Shorthand for [`MaskedOperator::assemble`].
pub fn assemble_diffusion(
    shape: Shape,
    mask: &[bool],
    h: f64,
    coefficient: Coefficient,
    boundary: Boundary,
) -> Result<MaskedOperator> {
    MaskedOperator::assemble(shape, mask, h, coefficient, boundary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_unit_cell;
    use proptest::prelude::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn cell_operator(coeff: Coefficient, bc: Boundary) -> MaskedOperator {
        let cell = build_unit_cell(2, 0.2, 16).unwrap();
        MaskedOperator::assemble(cell.shape(), &cell.fluid_mask, 1.0 / 16.0, coeff, bc).unwrap()
    }

    #[test]
    fn zero_coefficient_gives_zero_operator() {
        let op = cell_operator(Coefficient::Scalar(0.0), Boundary::Neumann);
        let x: Vec<f64> = (0..op.len()).map(|i| i as f64).collect();
        assert!(op.apply_new(&x).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constants_are_in_the_kernel() {
        for bc in [Boundary::Neumann, Boundary::Periodic] {
            let op = cell_operator(Coefficient::Tensor(vec![1.0, 0.3, 0.3, 0.8]), bc);
            let y = op.apply_new(&vec![2.5; op.len()]);
            assert!(y.iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn rejects_indefinite_tensor() {
        let cell = build_unit_cell(2, 0.0, 8).unwrap();
        let err = MaskedOperator::assemble(
            cell.shape(),
            &cell.fluid_mask,
            0.1,
            Coefficient::Tensor(vec![1.0, 2.0, 2.0, 1.0]),
            Boundary::Neumann,
        )
        .unwrap_err();
        assert!(err.to_string().contains("positive definite"));
    }

    #[test]
    fn scalar_and_isotropic_tensor_coincide() {
        let a = cell_operator(Coefficient::Scalar(0.7), Boundary::Periodic);
        let b = cell_operator(Coefficient::Tensor(vec![0.7, 0.0, 0.0, 0.7]), Boundary::Periodic);
        let x: Vec<f64> = (0..a.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(a.apply_new(&x), b.apply_new(&x));
    }

    #[test]
    fn matrix_assembly_matches_apply() {
        let op = cell_operator(Coefficient::Tensor(vec![1.0, 0.2, 0.2, 0.9]), Boundary::Periodic);
        let m = op.shifted_matrix(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..op.len()).map(|i| (i as f64 * 1.3).cos()).collect();
        let y = op.apply_new(&x);
        let mut ym = vec![0.0; op.len()];
        let cp = m.symbolic().col_ptr();
        let ri = m.symbolic().row_idx();
        let vals = m.val();
        for j in 0..op.len() {
            for k in cp[j]..cp[j + 1] {
                ym[ri[k]] += vals[k] * x[j];
            }
        }
        for (a, b) in y.iter().zip(&ym) {
            assert!((a - b).abs() < 1e-9);
        }
        let d = op.diagonal();
        let mut e = vec![0.0; op.len()];
        for (i, di) in d.iter().enumerate() {
            e[i] = 1.0;
            let col = op.apply_new(&e);
            assert!((col[i] - di).abs() < 1e-9);
            e[i] = 0.0;
            if i > 20 {
                break;
            }
        }
    }

    /// Discrete cosine mode on an unperforated Neumann box: the 5-point
    /// operator maps cos(2πx/L) to λ_h cos with λ_h → (2π/L)² c at rate h².
    #[test]
    fn neumann_cosine_mode_second_order() {
        let coeff = 1.3;
        let mut errs = vec![];
        for n in [16usize, 32, 64] {
            let shape = Shape::new(2, n);
            let h = 1.0 / n as f64;
            let mask = vec![true; shape.len()];
            let op = MaskedOperator::assemble(shape, &mask, h, Coefficient::Scalar(coeff), Boundary::Neumann)
                .unwrap();
            let u: Vec<f64> = (0..shape.len())
                .map(|i| {
                    let x = (shape.coords(i)[0] as f64 + 0.5) * h;
                    (2.0 * std::f64::consts::PI * x).cos()
                })
                .collect();
            let au = op.apply_new(&u);
            let lambda = (2.0 * std::f64::consts::PI).powi(2) * coeff;
            let err = au
                .iter()
                .zip(&u)
                .map(|(a, b)| (a - lambda * b).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!(rate > 1.9, "rate {rate}, errors {errs:?}");
        }
    }

    #[test]
    fn components_of_split_domain() {
        let shape = Shape::new(2, 8);
        let mask: Vec<bool> = (0..shape.len()).map(|i| shape.coords(i)[0] != 4).collect();
        let op = MaskedOperator::assemble(shape, &mask, 0.1, Coefficient::Scalar(1.0), Boundary::Neumann)
            .unwrap();
        assert_eq!(op.components().1, 2);
        let periodic =
            MaskedOperator::assemble(shape, &mask, 0.1, Coefficient::Scalar(1.0), Boundary::Periodic).unwrap();
        assert_eq!(periodic.components().1, 1);
    }

    proptest! {
        #[test]
        fn symmetric_and_semidefinite(seed in 0u64..1000, d12 in -0.45f64..0.45) {
            let op = cell_operator(Coefficient::Tensor(vec![1.0, d12, d12, 1.1]), Boundary::Periodic);
            let n = op.len();
            let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let mut rnd = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5 };
            let x: Vec<f64> = (0..n).map(|_| rnd()).collect();
            let z: Vec<f64> = (0..n).map(|_| rnd()).collect();
            let ax = op.apply_new(&x);
            let az = op.apply_new(&z);
            prop_assert!((dot(&ax, &z) - dot(&x, &az)).abs() < 1e-9 * (1.0 + dot(&ax, &z).abs()));
            prop_assert!(dot(&ax, &x) >= -1e-10);
        }
    }
}
