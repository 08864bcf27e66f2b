use serde::{Deserialize, Serialize};

use super::{Grid, Layout};
use crate::{Error, Result};

/// Rigid body shape centered at the origin of the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum BodyShape {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
}

impl BodyShape {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            BodyShape::Sphere { radius } => radius.is_finite() && *radius > 0.0,
            BodyShape::Box { half_extents } => half_extents.iter().all(|a| a.is_finite() && *a > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidBody(format!("extents must be positive: {self:?}")))
        }
    }

    /// diam(Ω₀), which plays the role of R_*.
    pub fn diameter(&self) -> f64 {
        2.0 * self.circumradius()
    }

    pub fn circumradius(&self) -> f64 {
        match self {
            BodyShape::Sphere { radius } => *radius,
            BodyShape::Box { half_extents: a } => (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt(),
        }
    }

    /// Half-width of the axis-aligned bounding box.
    pub fn bounding_half_width(&self) -> f64 {
        match self {
            BodyShape::Sphere { radius } => *radius,
            BodyShape::Box { half_extents: a } => a[0].max(a[1]).max(a[2]),
        }
    }

    pub fn contains(&self, x: [f64; 3]) -> bool {
        match self {
            BodyShape::Sphere { radius } => x[0] * x[0] + x[1] * x[1] + x[2] * x[2] <= radius * radius,
            BodyShape::Box { half_extents: a } => (0..3).all(|d| x[d].abs() <= a[d]),
        }
    }

    /// Euclidean distance to the shape (zero inside).
    pub fn distance(&self, x: [f64; 3]) -> f64 {
        match self {
            BodyShape::Sphere { radius } => {
                ((x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() - radius).max(0.0)
            }
            BodyShape::Box { half_extents: a } => {
                let mut s = 0.0;
                for d in 0..3 {
                    let e = (x[d].abs() - a[d]).max(0.0);
                    s += e * e;
                }
                s.sqrt()
            }
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            BodyShape::Sphere { radius } => 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3),
            BodyShape::Box { half_extents: a } => 8.0 * a[0] * a[1] * a[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum CellKind {
    Fluid,
    Solid,
    Outer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FaceKind {
    /// Both adjacent cells are fluid: the velocity is an unknown.
    Free,
    /// Adjacent to a solid cell: no-slip datum.
    Body,
    /// On or next to the outermost cell layer: homogeneous Dirichlet.
    Outer,
}

/// Cell and face classification of the voxelized truncated domain.
#[derive(Debug, Clone)]
pub struct CellMask {
    pub grid: Grid,
    pub body: BodyShape,
    pub cells: Vec<CellKind>,
    pub faces: [Vec<FaceKind>; 3],
    /// Indices of the free faces of each component, ascending.
    pub free: [Vec<u32>; 3],
    /// Indices of the fluid cells, ascending.
    pub fluid: Vec<u32>,
    pub solid_count: usize,
}

impl CellMask {
    #[inline]
    pub fn cell(&self, idx: usize) -> CellKind {
        self.cells[idx]
    }

    #[inline]
    pub fn is_fluid(&self, idx: usize) -> bool {
        self.cells[idx] == CellKind::Fluid
    }

    #[inline]
    pub fn is_free(&self, d: usize, idx: usize) -> bool {
        self.faces[d][idx] == FaceKind::Free
    }

    /// The two cells adjacent to face `idx` of component d, if inside the array.
    pub fn face_cells(&self, d: usize, idx: usize) -> (Option<usize>, Option<usize>) {
        face_cells(&self.grid, d, idx)
    }

    pub fn fluid_count(&self) -> usize {
        self.fluid.len()
    }

    pub fn free_count(&self) -> usize {
        self.free.iter().map(Vec::len).sum()
    }

    /// Quadrature weight of a face for integrals over the fluid region: the
    /// fraction of its two neighbouring cells that are fluid.
    #[inline]
    pub fn face_weight(&self, d: usize, idx: usize) -> f64 {
        let (a, b) = self.face_cells(d, idx);
        let w = |c: Option<usize>| match c {
            Some(c) if self.cells[c] == CellKind::Fluid => 0.5,
            _ => 0.0,
        };
        w(a) + w(b)
    }

    /// Zeroes `v` on every non-free face.
    pub fn zero_pinned(&self, v: &mut super::VectorField) {
        for d in 0..3 {
            for (x, k) in v.comp[d].iter_mut().zip(&self.faces[d]) {
                if *k != FaceKind::Free {
                    *x = 0.0;
                }
            }
        }
    }

    /// Number of 6-connected components of the fluid region.
    pub fn fluid_components(&self) -> usize {
        let l = self.grid.cells();
        let n = self.grid.n;
        let mut seen = vec![false; l.len()];
        let mut count = 0;
        let mut stack = Vec::new();
        for &start in &self.fluid {
            let start = start as usize;
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(c) = stack.pop() {
                let [i, j, k] = l.coords(c);
                let mut visit = |nb: usize| {
                    if !seen[nb] && self.cells[nb] == CellKind::Fluid {
                        seen[nb] = true;
                        stack.push(nb);
                    }
                };
                if i > 0 {
                    visit(c - 1);
                }
                if i + 1 < n {
                    visit(c + 1);
                }
                if j > 0 {
                    visit(c - n);
                }
                if j + 1 < n {
                    visit(c + n);
                }
                if k > 0 {
                    visit(c - n * n);
                }
                if k + 1 < n {
                    visit(c + n * n);
                }
            }
        }
        count
    }
}

pub(crate) fn face_cells(grid: &Grid, d: usize, idx: usize) -> (Option<usize>, Option<usize>) {
    let fl = grid.faces(d);
    let cl = grid.cells();
    let c = fl.coords(idx);
    let plus = (c[d] < grid.n).then(|| cl.index(c[0], c[1], c[2]));
    let minus = (c[d] > 0).then(|| {
        let mut m = c;
        m[d] -= 1;
        cl.index(m[0], m[1], m[2])
    });
    (minus, plus)
}

/// Marks solid cells (center inside the shape), the outermost cell layer, and
/// classifies every face.
pub fn voxelize_body(shape: &BodyShape, grid: &Grid) -> Result<CellMask> {
    shape.validate()?;
    let n = grid.n;
    let h = grid.h;
    let reach = shape.bounding_half_width();
    if reach + 2.0 * h > grid.radius - h {
        return Err(Error::BodyTooLarge(format!(
            "bounding half-width {reach} needs a margin of 2h = {} inside the fluid part of the box (R = {}, h = {h})",
            2.0 * h,
            grid.radius
        )));
    }
    if shape.diameter() >= grid.radius {
        return Err(Error::BodyTooLarge(format!(
            "R = {} must exceed the body diameter {}",
            grid.radius,
            shape.diameter()
        )));
    }
    let cl = grid.cells();
    let mut cells = vec![CellKind::Fluid; cl.len()];
    let mut solid_count = 0;
    for (idx, kind) in cells.iter_mut().enumerate() {
        let c = cl.coords(idx);
        if c.iter().any(|&x| x == 0 || x == n - 1) {
            *kind = CellKind::Outer;
        } else if shape.contains(grid.cell_center(c)) {
            *kind = CellKind::Solid;
            solid_count += 1;
        }
    }
    if solid_count == 0 {
        return Err(Error::InvalidBody(format!(
            "no cell center lies inside {shape:?}; refine the grid (h = {h})"
        )));
    }
    let faces: [Vec<FaceKind>; 3] = std::array::from_fn(|d| {
        let fl: Layout = grid.faces(d);
        (0..fl.len())
            .map(|idx| match face_cells(grid, d, idx) {
                (Some(a), Some(b)) => {
                    let (ka, kb) = (cells[a], cells[b]);
                    if ka == CellKind::Solid || kb == CellKind::Solid {
                        FaceKind::Body
                    } else if ka == CellKind::Fluid && kb == CellKind::Fluid {
                        FaceKind::Free
                    } else {
                        FaceKind::Outer
                    }
                }
                _ => FaceKind::Outer,
            })
            .collect()
    });
    let free = std::array::from_fn(|d| {
        faces[d]
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == FaceKind::Free)
            .map(|(i, _)| i as u32)
            .collect()
    });
    let fluid = cells
        .iter()
        .enumerate()
        .filter(|(_, k)| **k == CellKind::Fluid)
        .map(|(i, _)| i as u32)
        .collect();
    let mask = CellMask { grid: *grid, body: *shape, cells, faces, free, fluid, solid_count };
    let components = mask.fluid_components();
    if components != 1 {
        return Err(Error::DisconnectedFluid { components });
    }
    Ok(mask)
}
