//! Linear saddle-point solver for the masked Stokes/Oseen system
//!
//!   −Δ_h u + λ (t·∇)u + λ (u·∇)W + ∇p = rhs,   div u = 0,
//!
//! with u = 0 on every pinned face and the transport t = stream + frozen
//! field. The coupled system is solved by restarted GMRES, right
//! preconditioned with the block upper-triangular factor whose velocity block
//! is the empty-box Laplacian (inverted exactly by DST-I) and whose Schur block
//! is the identity.

mod dst;
mod gmres;

pub use dst::BoxPoisson;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::grid::ops::{self, ConvectionScheme};
use crate::grid::{CellMask, Grid, ScalarField, VectorField};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearSolveOptions {
    pub tol_rel: f64,
    /// Cap on GMRES restart cycles.
    pub max_outer: usize,
    /// Krylov dimension per cycle.
    pub max_inner: usize,
    pub convection_scheme: ConvectionScheme,
}

impl Default for LinearSolveOptions {
    fn default() -> Self {
        LinearSolveOptions {
            tol_rel: 1e-9,
            max_outer: 40,
            max_inner: 40,
            convection_scheme: ConvectionScheme::Centered,
        }
    }
}

impl LinearSolveOptions {
    pub fn collect_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.tol_rel > 0.0 && self.tol_rel < 1.0) {
            errs.push(format!("tol_rel must lie in (0, 1) (got {})", self.tol_rel));
        }
        if self.max_outer < 1 || self.max_inner < 1 {
            errs.push("max_outer and max_inner must be at least 1".into());
        }
        errs
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub outer_iters: usize,
    pub inner_iters_total: usize,
    /// ‖momentum residual‖₂ / ‖rhs‖₂ over the free faces.
    pub final_residual_momentum: f64,
    /// max |div u| over fluid cells.
    pub final_residual_divergence: f64,
    pub wall_time: f64,
    pub converged: bool,
    pub convection_scheme: ConvectionScheme,
}

/// Linear problem data. The transport is `stream + frozen_transport`, the
/// reaction term is λ (u·∇)W for W = `reaction`.
#[derive(Debug, Clone, Copy)]
pub struct OseenProblem<'a> {
    pub lambda: f64,
    pub stream: Vec3,
    pub frozen_transport: Option<&'a VectorField>,
    pub reaction: Option<&'a VectorField>,
    pub rhs: &'a VectorField,
}

#[derive(Clone)]
pub struct OseenSolution {
    pub u: VectorField,
    pub p: ScalarField,
    pub report: SolveReport,
}

impl std::fmt::Debug for OseenSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OseenSolution").field("n", &self.u.n).field("report", &self.report).finish()
    }
}

#[derive(Debug, Clone)]
pub struct OseenFailure {
    pub best: OseenSolution,
}

impl std::fmt::Display for OseenFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let r = &self.best.report;
        write!(
            f,
            "Oseen solve did not converge after {} iterations ({} cycles): momentum residual {:.3e}, divergence {:.3e}",
            r.inner_iters_total, r.outer_iters, r.final_residual_momentum, r.final_residual_divergence
        )
    }
}

/// Residual fields Δu − λ(t·∇)u − λ(u·∇)W − ∇p + rhs on free faces (zero on
/// pinned faces) and div u on fluid cells, assembled from the generic grid
/// operators. The reaction term is always centered.
pub fn assemble_residual(
    u: &VectorField,
    p: &ScalarField,
    mask: &CellMask,
    problem: &OseenProblem<'_>,
    scheme: ConvectionScheme,
) -> (VectorField, ScalarField) {
    let grid = &mask.grid;
    let mut r = ops::laplacian(u, grid);
    if problem.lambda != 0.0 {
        let mut t = match problem.frozen_transport {
            Some(f) => f.clone(),
            None => VectorField::zeros(grid),
        };
        t.add_constant([problem.stream[0], problem.stream[1], problem.stream[2]]);
        r.axpy(-problem.lambda, &ops::advect(&t, u, grid, scheme));
        if let Some(w) = problem.reaction {
            r.axpy(-problem.lambda, &ops::advect(u, w, grid, ConvectionScheme::Centered));
        }
    }
    r.axpy(-1.0, &ops::gradient(p, grid));
    r.axpy(1.0, problem.rhs);
    mask.zero_pinned(&mut r);
    (r, ops::divergence(u, grid, Some(mask)))
}

fn free_norm(v: &VectorField, mask: &CellMask) -> f64 {
    let mut s = 0.0;
    for d in 0..3 {
        for &i in &mask.free[d] {
            let x = v.comp[d][i as usize];
            s += x * x;
        }
    }
    s.sqrt()
}

/// Residual summary as reported in [`SolveReport`].
pub fn residual_norms(
    u: &VectorField,
    p: &ScalarField,
    mask: &CellMask,
    problem: &OseenProblem<'_>,
    scheme: ConvectionScheme,
) -> (f64, f64) {
    let (r, div) = assemble_residual(u, p, mask, problem, scheme);
    let rn = free_norm(&r, mask);
    let bn = free_norm(problem.rhs, mask);
    let mom = if bn > 0.0 { rn / bn } else { rn };
    (mom, div.max_abs())
}

/// Index tables and preconditioner plans for one mask; reusable across solves.
pub struct OseenSolver {
    n: usize,
    h: f64,
    /// Flat offsets of u₀, u₁, u₂, p.
    offsets: [usize; 5],
    face_strides: [[usize; 3]; 3],
    /// Cell on the + side of each free face.
    free_cell: [Vec<u32>; 3],
    /// Position of each free face inside its component's DST block.
    box_index: [Vec<u32>; 3],
    /// Lower face of every fluid cell, per component.
    fluid_face: [Vec<u32>; 3],
    boxes: [BoxPoisson; 3],
}

impl std::fmt::Debug for OseenSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OseenSolver").field("n", &self.n).finish()
    }
}

struct Coefficients {
    /// Total transport at every face of component d: t[d][k].
    transport: Option<[[Vec<f64>; 3]; 3]>,
    /// Centered ∂_k W_d at free faces: g[d][k][q].
    reaction: Option<[[Vec<f64>; 3]; 3]>,
    /// For the reaction interpolation: base index in the layout of component
    /// e of the four faces surrounding free face q of component d.
    react_base: Option<[Vec<[u32; 3]>; 3]>,
}

impl OseenSolver {
    pub fn new(mask: &CellMask) -> Self {
        let grid = mask.grid;
        let n = grid.n;
        let cl = grid.cells();
        let mut offsets = [0; 5];
        for d in 0..3 {
            offsets[d + 1] = offsets[d] + grid.faces(d).len();
        }
        offsets[4] = offsets[3] + cl.len();
        let face_strides = std::array::from_fn(|d| grid.faces(d).strides);
        let free_cell = std::array::from_fn(|d| {
            let fl = grid.faces(d);
            mask.free[d]
                .iter()
                .map(|&i| {
                    let c = fl.coords(i as usize);
                    cl.index(c[0], c[1], c[2]) as u32
                })
                .collect()
        });
        let lo = |d: usize, e: usize| if d == e { 2 } else { 1 };
        let box_dims: [[usize; 3]; 3] =
            std::array::from_fn(|d| std::array::from_fn(|e| n - 2 - lo(d, e) + 1));
        let box_index = std::array::from_fn(|d| {
            let fl = grid.faces(d);
            let bd = box_dims[d];
            mask.free[d]
                .iter()
                .map(|&i| {
                    let c = fl.coords(i as usize);
                    let b: [usize; 3] = std::array::from_fn(|e| c[e] - lo(d, e));
                    debug_assert!((0..3).all(|e| b[e] < bd[e]));
                    (b[0] + bd[0] * (b[1] + bd[1] * b[2])) as u32
                })
                .collect()
        });
        let fluid_face = std::array::from_fn(|d| {
            let fl = grid.faces(d);
            mask.fluid
                .iter()
                .map(|&c| {
                    let c = cl.coords(c as usize);
                    fl.index(c[0], c[1], c[2]) as u32
                })
                .collect()
        });
        let boxes = std::array::from_fn(|d| BoxPoisson::new(box_dims[d], grid.h));
        OseenSolver { n, h: grid.h, offsets, face_strides, free_cell, box_index, fluid_face, boxes }
    }

    pub fn len(&self) -> usize {
        self.offsets[4]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn coefficients(&self, mask: &CellMask, problem: &OseenProblem<'_>) -> Coefficients {
        let grid = &mask.grid;
        let transport = problem.frozen_transport.map(|t| {
            std::array::from_fn(|d| {
                let fl = grid.faces(d);
                std::array::from_fn(|k| {
                    let mut a = vec![0.0; fl.len()];
                    for &i in &mask.free[d] {
                        let c = fl.coords(i as usize);
                        a[i as usize] = problem.stream[k] + ops::interpolate_to_face(t, grid, d, c, k);
                    }
                    a
                })
            })
        });
        let inv_2h = 0.5 / grid.h;
        let reaction = problem.reaction.map(|w| {
            std::array::from_fn(|d| {
                let s = self.face_strides[d];
                std::array::from_fn(|k| {
                    mask.free[d]
                        .iter()
                        .map(|&i| {
                            let i = i as usize;
                            (w.comp[d][i + s[k]] - w.comp[d][i - s[k]]) * inv_2h
                        })
                        .collect()
                })
            })
        });
        let react_base = problem.reaction.map(|_| {
            std::array::from_fn(|d| {
                let fl = grid.faces(d);
                mask.free[d]
                    .iter()
                    .map(|&i| {
                        let mut c = fl.coords(i as usize);
                        c[d] -= 1;
                        std::array::from_fn(|e| grid.faces(e).index(c[0], c[1], c[2]) as u32)
                    })
                    .collect()
            })
        });
        Coefficients { transport, reaction, react_base }
    }

    /// y = K x for the flat vector (u₀, u₁, u₂, p).
    #[allow(clippy::too_many_arguments)]
    fn apply(
        &self,
        mask: &CellMask,
        lambda: f64,
        stream: [f64; 3],
        scheme: ConvectionScheme,
        coef: &Coefficients,
        x: &[f64],
        y: &mut [f64],
    ) {
        y.iter_mut().for_each(|v| *v = 0.0);
        let h = self.h;
        let inv_h = 1.0 / h;
        let inv_h2 = inv_h * inv_h;
        let inv_2h = 0.5 * inv_h;
        let off = self.offsets;
        let p = &x[off[3]..off[4]];
        let cell_strides = [1, self.n, self.n * self.n];
        let upwind = scheme == ConvectionScheme::Upwind;
        let deriv = |xd: &[f64], i: usize, st: usize, tk: f64| -> f64 {
            if upwind {
                if tk > 0.0 {
                    (xd[i] - xd[i - st]) * inv_h
                } else {
                    (xd[i + st] - xd[i]) * inv_h
                }
            } else {
                (xd[i + st] - xd[i - st]) * inv_2h
            }
        };
        for d in 0..3 {
            let xd = &x[off[d]..off[d + 1]];
            let s = self.face_strides[d];
            let cs = cell_strides[d];
            let (yu, _) = y[off[d]..].split_at_mut(off[d + 1] - off[d]);
            for (q, &fi) in mask.free[d].iter().enumerate() {
                let i = fi as usize;
                let c = xd[i];
                let mut v = (6.0 * c
                    - xd[i + 1]
                    - xd[i - 1]
                    - xd[i + s[1]]
                    - xd[i - s[1]]
                    - xd[i + s[2]]
                    - xd[i - s[2]])
                    * inv_h2;
                if lambda != 0.0 {
                    let mut conv = 0.0;
                    match &coef.transport {
                        Some(t) => {
                            for k in 0..3 {
                                let tk = t[d][k][i];
                                conv += tk * deriv(xd, i, s[k], tk);
                            }
                        }
                        None => {
                            for k in 0..3 {
                                if stream[k] != 0.0 {
                                    conv += stream[k] * deriv(xd, i, s[k], stream[k]);
                                }
                            }
                        }
                    }
                    if let (Some(g), Some(rb)) = (&coef.reaction, &coef.react_base) {
                        for k in 0..3 {
                            let uk = if k == d {
                                c
                            } else {
                                let xk = &x[off[k]..off[k + 1]];
                                let b = rb[d][q][k] as usize;
                                let sd = self.face_strides[k][d];
                                let sk = self.face_strides[k][k];
                                0.25 * (xk[b] + xk[b + sd] + xk[b + sk] + xk[b + sd + sk])
                            };
                            conv += uk * g[d][k][q];
                        }
                    }
                    v += lambda * conv;
                }
                let cp = self.free_cell[d][q] as usize;
                v += (p[cp] - p[cp - cs]) * inv_h;
                yu[i] = v;
            }
        }
        let yp = &mut y[off[3]..off[4]];
        for (q, &c) in mask.fluid.iter().enumerate() {
            let mut s = 0.0;
            for d in 0..3 {
                let f = off[d] + self.fluid_face[d][q] as usize;
                s += x[f + self.face_strides[d][d]] - x[f];
            }
            yp[c as usize] = s * inv_h;
        }
    }

    /// z = M⁻¹ r with the block upper-triangular preconditioner.
    fn precond(&self, mask: &CellMask, r: &[f64], z: &mut [f64], bufs: &mut [Vec<f64>; 3]) {
        z.iter_mut().for_each(|v| *v = 0.0);
        let off = self.offsets;
        let inv_h = 1.0 / self.h;
        let cell_strides = [1, self.n, self.n * self.n];
        for &c in &mask.fluid {
            z[off[3] + c as usize] = r[off[3] + c as usize];
        }
        let (zu, zp) = z.split_at_mut(off[3]);
        for d in 0..3 {
            let buf = &mut bufs[d];
            buf.iter_mut().for_each(|v| *v = 0.0);
            let cs = cell_strides[d];
            for (q, &fi) in mask.free[d].iter().enumerate() {
                let cp = self.free_cell[d][q] as usize;
                let gp = (zp[cp] - zp[cp - cs]) * inv_h;
                buf[self.box_index[d][q] as usize] = r[off[d] + fi as usize] - gp;
            }
            self.boxes[d].solve(buf);
            for (q, &fi) in mask.free[d].iter().enumerate() {
                zu[off[d] + fi as usize] = buf[self.box_index[d][q] as usize];
            }
        }
    }

    fn pack(&self, u: &VectorField, p: &ScalarField, out: &mut [f64]) {
        let off = self.offsets;
        for d in 0..3 {
            out[off[d]..off[d + 1]].copy_from_slice(&u.comp[d]);
        }
        out[off[3]..off[4]].copy_from_slice(&p.data);
    }

    fn unpack(&self, grid: &Grid, x: &[f64]) -> (VectorField, ScalarField) {
        let off = self.offsets;
        let mut u = VectorField::zeros(grid);
        for d in 0..3 {
            u.comp[d].copy_from_slice(&x[off[d]..off[d + 1]]);
        }
        let mut p = ScalarField::zeros(grid);
        p.data.copy_from_slice(&x[off[3]..off[4]]);
        (u, p)
    }

    /// Solves the problem; `guess` seeds the iteration (warm start).
    pub fn solve(
        &self,
        mask: &CellMask,
        problem: &OseenProblem<'_>,
        opts: &LinearSolveOptions,
        guess: Option<(&VectorField, &ScalarField)>,
    ) -> Result<OseenSolution> {
        let start = Instant::now();
        let grid = mask.grid;
        if grid.n != self.n {
            return Err(Error::ShapeMismatch(format!("solver built for n={}, mask has n={}", self.n, grid.n)));
        }
        problem.rhs.check(&grid)?;
        for f in [problem.frozen_transport, problem.reaction].into_iter().flatten() {
            f.check(&grid)?;
        }
        let errs = opts.collect_errors();
        if !errs.is_empty() {
            return Err(Error::InvalidParams(errs.join("; ")));
        }
        if !problem.rhs.is_finite() || !problem.lambda.is_finite() {
            return Err(Error::SingularSystem("non-finite problem data".into()));
        }
        let scheme = opts.convection_scheme;
        let mut rhs = problem.rhs.clone();
        mask.zero_pinned(&mut rhs);
        let rhs_norm = free_norm(&rhs, mask);
        let mut b = vec![0.0; self.len()];
        self.pack(&rhs, &ScalarField::zeros(&grid), &mut b);

        let mut x = vec![0.0; self.len()];
        if let Some((u0, p0)) = guess {
            u0.check(&grid)?;
            p0.check(&grid)?;
            let mut u0 = u0.clone();
            mask.zero_pinned(&mut u0);
            let mut p0 = p0.clone();
            for (c, k) in p0.data.iter_mut().zip(&mask.cells) {
                if *k != crate::grid::CellKind::Fluid {
                    *c = 0.0;
                }
            }
            self.pack(&u0, &p0, &mut x);
        }
        let stats = if rhs_norm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            gmres::GmresStats { iterations: 0, cycles: 0, converged: true, breakdown: false }
        } else {
            let coef = self.coefficients(mask, problem);
            let stream = [problem.stream[0], problem.stream[1], problem.stream[2]];
            let mut bufs: [Vec<f64>; 3] = std::array::from_fn(|d| vec![0.0; self.boxes[d].len()]);
            let tol = opts.tol_rel;
            let off3 = self.offsets[3];
            let mut target = 0.5 * tol * rhs_norm;
            gmres::gmres(
                |v, y| self.apply(mask, problem.lambda, stream, scheme, &coef, v, y),
                |r, z| self.precond(mask, r, z, &mut bufs),
                &b,
                &mut x,
                opts.max_inner,
                opts.max_outer,
                |r, beta| {
                    let mom = r[..off3].iter().map(|v| v * v).sum::<f64>().sqrt();
                    let div = r[off3..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    if mom <= tol * rhs_norm && div <= tol {
                        return None;
                    }
                    let shrink = (tol * rhs_norm / mom.max(f64::MIN_POSITIVE)).min(tol / div.max(f64::MIN_POSITIVE)).min(1.0);
                    target = target.min(0.5 * beta * shrink);
                    Some(target)
                },
            )
        };
        let (u, mut p) = self.unpack(&grid, &x);
        gauge_fix(&mut p, mask);
        let (mom, div) = residual_norms(&u, &p, mask, problem, scheme);
        let converged = stats.converged || (mom <= opts.tol_rel && div <= opts.tol_rel);
        let report = SolveReport {
            outer_iters: stats.cycles,
            inner_iters_total: stats.iterations,
            final_residual_momentum: mom,
            final_residual_divergence: div,
            wall_time: start.elapsed().as_secs_f64(),
            converged,
            convection_scheme: scheme,
        };
        let sol = OseenSolution { u, p, report };
        if converged {
            Ok(sol)
        } else {
            Err(Error::OseenNonConvergence(Box::new(OseenFailure { best: sol })))
        }
    }
}

/// Shifts p to zero mean over the fluid cells and zeroes it elsewhere.
pub fn gauge_fix(p: &mut ScalarField, mask: &CellMask) {
    let nf = mask.fluid.len();
    if nf == 0 {
        return;
    }
    let mean = mask.fluid.iter().map(|&c| p.data[c as usize]).sum::<f64>() / nf as f64;
    for (v, k) in p.data.iter_mut().zip(&mask.cells) {
        *v = if *k == crate::grid::CellKind::Fluid { *v - mean } else { 0.0 };
    }
}

/// One-shot solve (builds the index tables and plans).
pub fn solve_oseen(mask: &CellMask, problem: &OseenProblem<'_>, opts: &LinearSolveOptions) -> Result<OseenSolution> {
    OseenSolver::new(mask).solve(mask, problem, opts, None)
}
