/// Cell-centered structured grid dimensions. Axis 0 varies fastest; for
/// two-dimensional grids the third extent is 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct Shape {
    pub dim: usize,
    pub extents: [usize; 3],
}

impl Shape {
    pub fn new(dim: usize, n: usize) -> Self {
        assert!(dim == 2 || dim == 3, "dimension must be 2 or 3");
        let extents = if dim == 2 { [n, n, 1] } else { [n, n, n] };
        Shape { dim, extents }
    }

    pub fn len(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.extents[0] * (ijk[1] + self.extents[1] * ijk[2])
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.extents[0];
        let rest = idx / self.extents[0];
        [i, rest % self.extents[1], rest / self.extents[1]]
    }

    /// Neighbor one step along `axis` in the positive direction, wrapping when
    /// `periodic` is set and returning `None` at the box boundary otherwise.
    #[inline]
    pub fn forward(&self, idx: usize, axis: usize, periodic: bool) -> Option<usize> {
        let mut c = self.coords(idx);
        if c[axis] + 1 < self.extents[axis] {
            c[axis] += 1;
        } else if periodic {
            c[axis] = 0;
        } else {
            return None;
        }
        Some(self.index(c))
    }

    #[inline]
    pub fn backward(&self, idx: usize, axis: usize, periodic: bool) -> Option<usize> {
        let mut c = self.coords(idx);
        if c[axis] > 0 {
            c[axis] -= 1;
        } else if periodic {
            c[axis] = self.extents[axis] - 1;
        } else {
            return None;
        }
        Some(self.index(c))
    }
}
