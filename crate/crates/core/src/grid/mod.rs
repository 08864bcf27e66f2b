//! Truncated box domain [−R,R]³ on a uniform MAC grid.
//!
//! Cell (i,j,k) has center −R + (i+½)h along each axis. Component d of a
//! vector field lives on the faces normal to e_d, so its array has n+1 entries
//! along axis d and n along the others. Potentials for discrete curls live on
//! cell edges: an edge parallel to e_d sits at a cell center along d and at
//! nodes along the other two axes. Every array is stored x-fastest.

mod mask;
pub mod ops;

pub use mask::{voxelize_body, BodyShape, CellKind, CellMask, FaceKind};

use crate::{Error, Result};

/// Uniform grid over the box [−R,R]³ with n cells per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub radius: f64,
    pub n: usize,
    pub h: f64,
}

pub const MIN_CELLS: usize = 16;

pub fn build_grid(radius: f64, n: usize) -> Result<Grid> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidGrid(format!("R must be positive (got {radius})")));
    }
    if n % 2 != 0 {
        return Err(Error::InvalidGrid(format!("n must be even (got {n})")));
    }
    if n < MIN_CELLS {
        return Err(Error::InvalidGrid(format!("n must be at least {MIN_CELLS} (got {n})")));
    }
    Ok(Grid { radius, n, h: 2.0 * radius / n as f64 })
}

/// Array shape and strides of one staggered component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub dims: [usize; 3],
    pub strides: [usize; 3],
}

impl Layout {
    pub fn new(dims: [usize; 3]) -> Self {
        Layout { dims, strides: [1, dims[0], dims[0] * dims[1]] }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let r = idx / self.dims[0];
        [i, r % self.dims[1], r / self.dims[1]]
    }
}

impl Grid {
    #[inline]
    pub fn cells(&self) -> Layout {
        Layout::new([self.n; 3])
    }

    /// Faces normal to e_d.
    #[inline]
    pub fn faces(&self, d: usize) -> Layout {
        let mut dims = [self.n; 3];
        dims[d] += 1;
        Layout::new(dims)
    }

    /// Edges parallel to e_d.
    #[inline]
    pub fn edges(&self, d: usize) -> Layout {
        let mut dims = [self.n + 1; 3];
        dims[d] = self.n;
        Layout::new(dims)
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        -self.radius + i as f64 * self.h
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        -self.radius + (i as f64 + 0.5) * self.h
    }

    pub fn cell_center(&self, c: [usize; 3]) -> [f64; 3] {
        [self.center(c[0]), self.center(c[1]), self.center(c[2])]
    }

    pub fn face_position(&self, d: usize, c: [usize; 3]) -> [f64; 3] {
        let mut x = self.cell_center(c);
        x[d] = self.node(c[d]);
        x
    }

    pub fn edge_position(&self, d: usize, c: [usize; 3]) -> [f64; 3] {
        let mut x = [self.node(c[0]), self.node(c[1]), self.node(c[2])];
        x[d] = self.center(c[d]);
        x
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.h * self.h * self.h
    }
}

/// Cell-centered scalar (pressure, divergence, densities).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub n: usize,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        ScalarField { n: grid.n, data: vec![0.0; grid.cells().len()] }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut([f64; 3]) -> f64) -> Self {
        let l = grid.cells();
        let data = (0..l.len()).map(|idx| f(grid.cell_center(l.coords(idx)))).collect();
        ScalarField { n: grid.n, data }
    }

    pub fn check(&self, grid: &Grid) -> Result<()> {
        if self.n != grid.n || self.data.len() != grid.cells().len() {
            return Err(Error::ShapeMismatch(format!(
                "scalar field of size {} does not match grid n={}",
                self.data.len(),
                grid.n
            )));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Face-staggered vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub n: usize,
    pub comp: [Vec<f64>; 3],
}

impl VectorField {
    pub fn zeros(grid: &Grid) -> Self {
        VectorField {
            n: grid.n,
            comp: std::array::from_fn(|d| vec![0.0; grid.faces(d).len()]),
        }
    }

    /// Samples component d of f at the faces normal to e_d.
    pub fn from_fn(grid: &Grid, mut f: impl FnMut([f64; 3]) -> [f64; 3]) -> Self {
        let comp = std::array::from_fn(|d| {
            let l = grid.faces(d);
            (0..l.len()).map(|idx| f(grid.face_position(d, l.coords(idx)))[d]).collect()
        });
        VectorField { n: grid.n, comp }
    }

    /// Constant field c.
    pub fn constant(grid: &Grid, c: [f64; 3]) -> Self {
        VectorField {
            n: grid.n,
            comp: std::array::from_fn(|d| vec![c[d]; grid.faces(d).len()]),
        }
    }

    pub fn check(&self, grid: &Grid) -> Result<()> {
        for d in 0..3 {
            if self.n != grid.n || self.comp[d].len() != grid.faces(d).len() {
                return Err(Error::ShapeMismatch(format!(
                    "vector component {d} of size {} does not match grid n={}",
                    self.comp[d].len(),
                    grid.n
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.comp.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// self += a * other
    pub fn axpy(&mut self, a: f64, other: &VectorField) {
        for d in 0..3 {
            for (x, y) in self.comp[d].iter_mut().zip(&other.comp[d]) {
                *x += a * y;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for c in &mut self.comp {
            c.iter_mut().for_each(|x| *x *= a);
        }
    }

    /// self += c (constant vector)
    pub fn add_constant(&mut self, c: [f64; 3]) {
        for d in 0..3 {
            self.comp[d].iter_mut().for_each(|x| *x += c[d]);
        }
    }

    pub fn linear_combination(a: f64, x: &VectorField, b: f64, y: &VectorField) -> VectorField {
        let mut out = x.clone();
        out.scale(a);
        out.axpy(b, y);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.comp.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.comp.iter().flatten().all(|x| x.is_finite())
    }
}

/// Edge-centered potential, A_d on the edges parallel to e_d.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    pub n: usize,
    pub comp: [Vec<f64>; 3],
}

impl EdgeField {
    pub fn zeros(grid: &Grid) -> Self {
        EdgeField {
            n: grid.n,
            comp: std::array::from_fn(|d| vec![0.0; grid.edges(d).len()]),
        }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut([f64; 3]) -> [f64; 3]) -> Self {
        let comp = std::array::from_fn(|d| {
            let l = grid.edges(d);
            (0..l.len()).map(|idx| f(grid.edge_position(d, l.coords(idx)))[d]).collect()
        });
        EdgeField { n: grid.n, comp }
    }
}
