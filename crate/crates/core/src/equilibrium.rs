//! Coupled fixed-point map for (u, θ): damped Picard iteration on the lifted
//! Navier–Stokes problem, the torque functional F_λ that drives θ, and the
//! boundary force and torque from which δ is recovered.

use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::ops::{self, ConvectionScheme};
use crate::grid::{CellKind, CellMask, EdgeField, Grid, ScalarField, VectorField};
use crate::lifting::{self, LiftingBasis, LiftingConfig};
use crate::oseen::{LinearSolveOptions, OseenProblem, OseenSolver};
use crate::params::{far_field_direction, rotated_stiffness, Params, RotationAngle};
use crate::{Error, Result, Vec3};

/// How the convective term is linearised in one Picard step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linearization {
    /// Oseen operator with the constant stream −b; the whole convection of the
    /// previous iterate goes to the right-hand side.
    #[default]
    Lagged,
    /// Transport frozen at u_k − b + V, reaction u·∇V kept implicit.
    SemiImplicit,
}

/// Starting point of the iteration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PicardInit {
    Zero,
    /// Solution of the λ = 0 problem at θ₀.
    #[default]
    Stokes,
    /// Stokes start plus a smooth random solenoidal field of the given
    /// amplitude (relative to max|u_Stokes|).
    PerturbedStokes { amplitude: f64, seed: u64 },
    #[serde(skip)]
    Custom(Box<EquilibriumState>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PicardOptions {
    /// ω ∈ (0, 1], applied to u and θ alike.
    pub damping: f64,
    pub tol_u: f64,
    pub tol_theta: f64,
    pub max_iters: usize,
    pub init: PicardInit,
    /// Initial torsion angle θ₀.
    pub theta0: f64,
    pub linearization: Linearization,
    /// The run aborts once ‖∇u_k‖₂ + |θ_k| exceeds this value.
    pub bound_cap: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            damping: 1.0,
            tol_u: 1e-8,
            tol_theta: 1e-10,
            max_iters: 200,
            init: PicardInit::Stokes,
            theta0: 0.0,
            linearization: Linearization::Lagged,
            bound_cap: 1e6,
        }
    }
}

impl PicardOptions {
    /// Defaults with ω = 1 for λ ≤ 0.05 and ω = 0.5 above.
    pub fn for_lambda(lambda: f64) -> Self {
        PicardOptions { damping: default_damping(lambda), ..Default::default() }
    }

    pub fn collect_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            errs.push(format!("damping must lie in (0, 1] (got {})", self.damping));
        }
        if !(self.tol_u > 0.0) || !(self.tol_theta > 0.0) {
            errs.push("tol_u and tol_theta must be positive".into());
        }
        if self.max_iters == 0 {
            errs.push("max_iters must be at least 1".into());
        }
        if !self.theta0.is_finite() {
            errs.push("theta0 must be finite".into());
        }
        if !(self.bound_cap > 0.0) {
            errs.push("bound_cap must be positive".into());
        }
        if let PicardInit::PerturbedStokes { amplitude, .. } = self.init {
            if !(amplitude.is_finite() && amplitude >= 0.0) {
                errs.push(format!("perturbation amplitude must be non-negative (got {amplitude})"));
            }
        }
        errs
    }
}

pub fn default_damping(lambda: f64) -> f64 {
    if lambda <= 0.05 {
        1.0
    } else {
        0.5
    }
}

/// Perturbation velocity u (zero on every pinned face), pressure, angle and
/// displacement.
#[derive(Clone)]
pub struct EquilibriumState {
    pub u: VectorField,
    pub p: ScalarField,
    pub theta: RotationAngle,
    pub delta: Vec3,
}

impl std::fmt::Debug for EquilibriumState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EquilibriumState")
            .field("n", &self.u.n)
            .field("max_u", &self.u.max_abs())
            .field("theta", &self.theta.0)
            .field("delta", &[self.delta[0], self.delta[1], self.delta[2]])
            .finish()
    }
}

impl EquilibriumState {
    pub fn zero(grid: &Grid, theta: f64) -> Self {
        EquilibriumState {
            u: VectorField::zeros(grid),
            p: ScalarField::zeros(grid),
            theta: RotationAngle(theta),
            delta: Vec3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iter: usize,
    /// ‖∇u_k‖₂ after the step.
    pub grad_norm: f64,
    pub theta: f64,
    /// ‖∇(u_{k+1} − u_k)‖₂.
    pub du: f64,
    /// du / ‖∇u_{k+1}‖₂.
    pub du_rel: f64,
    pub dtheta: f64,
    /// F_λ(u_{k+1}; b_α(θ_k)).
    pub torque: f64,
    pub linear_iters: usize,
    pub residual_momentum: f64,
    pub residual_divergence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceHistory {
    pub steps: Vec<StepReport>,
    pub converged: bool,
    /// Changes produced by one undamped step from the final state.
    pub fixed_point_residual_u: f64,
    pub fixed_point_residual_theta: f64,
    /// max_k (‖∇u_k‖₂ + |θ_k|).
    pub max_bound: f64,
    pub wall_time: f64,
}

impl ConvergenceHistory {
    /// r_k = ‖∇(u_{k+1} − u_k)‖ / ‖∇(u_k − u_{k−1})‖, skipping the first step.
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.steps
            .windows(2)
            .skip(1)
            .filter(|w| w[0].du > 0.0)
            .map(|w| w[1].du / w[0].du)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PicardFailure {
    pub state: EquilibriumState,
    pub history: ConvergenceHistory,
    pub reason: String,
}

impl std::fmt::Display for PicardFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Picard iteration failed after {} steps: {}", self.history.steps.len(), self.reason)
    }
}

/// Everything that depends only on (params, mask, lifting radii): the lifting
/// basis, the torque test field and the solver tables.
pub struct EquilibriumSetup<'a> {
    pub params: Params,
    pub mask: &'a CellMask,
    pub lifting: LiftingConfig,
    pub basis: LiftingBasis,
    pub torque_field: VectorField,
    pub solver: OseenSolver,
    pub linear: LinearSolveOptions,
}

impl<'a> EquilibriumSetup<'a> {
    pub fn new(params: &Params, mask: &'a CellMask, cfg: &LiftingConfig, linear: &LinearSolveOptions) -> Result<Self> {
        let errs = linear.collect_errors();
        if !errs.is_empty() {
            return Err(Error::InvalidParams(errs.join("; ")));
        }
        let grid = mask.grid;
        let basis = LiftingBasis::new(&grid, mask, cfg)?;
        Ok(EquilibriumSetup {
            params: params.clone(),
            mask,
            lifting: *cfg,
            basis,
            torque_field: lifting::torque_test_field(&grid, cfg),
            solver: OseenSolver::new(mask),
            linear: *linear,
        })
    }

    pub fn grid(&self) -> Grid {
        self.mask.grid
    }

    pub fn direction(&self, theta: RotationAngle) -> Vec3 {
        far_field_direction(theta, &self.params)
    }

    /// v = u − b + V(b), the physical disturbance velocity.
    pub fn physical_velocity(&self, state: &EquilibriumState) -> VectorField {
        let b = self.direction(state.theta);
        let mut v = self.basis.lifting(b);
        v.axpy(1.0, &state.u);
        v.add_constant([-b[0], -b[1], -b[2]]);
        v
    }

    fn torque(&self, u: &VectorField, b: Vec3, v: &VectorField) -> f64 {
        torque_functional_with(u, b, v, &self.torque_field, self.mask, self.params.lambda, self.linear.convection_scheme)
    }

    /// Undamped map (u, θ) ↦ (ũ, p̃, λ̂F(ũ; b_α(θ))).
    fn map(&self, state: &EquilibriumState, lin: Linearization, lambda: f64) -> Result<MapOutput> {
        let grid = self.grid();
        let b = self.direction(state.theta);
        let v = self.basis.lifting(b);
        let scheme = self.linear.convection_scheme;
        let stream = -b;
        let sol = match lin {
            Linearization::Lagged => {
                let mut w = state.u.clone();
                w.axpy(1.0, &v);
                let mut rhs = ops::laplacian(&v, &grid);
                if lambda != 0.0 {
                    rhs.axpy(-lambda, &ops::advect_constant([stream[0], stream[1], stream[2]], &v, &grid, scheme));
                    rhs.axpy(-lambda, &ops::advect(&w, &w, &grid, scheme));
                }
                let problem =
                    OseenProblem { lambda, stream, frozen_transport: None, reaction: None, rhs: &rhs };
                self.solver.solve(self.mask, &problem, &self.linear, Some((&state.u, &state.p)))?
            }
            Linearization::SemiImplicit => {
                let rhs = lifting::forcing_f_lambda(lambda, &v, b, &grid, scheme);
                let mut t = state.u.clone();
                t.axpy(1.0, &v);
                let problem = OseenProblem {
                    lambda,
                    stream,
                    frozen_transport: Some(&t),
                    reaction: Some(&v),
                    rhs: &rhs,
                };
                self.solver.solve(self.mask, &problem, &self.linear, Some((&state.u, &state.p)))?
            }
        };
        let torque = if lambda == self.params.lambda { self.torque(&sol.u, b, &v) } else { 0.0 };
        Ok(MapOutput {
            theta: self.params.lambda_hat * torque,
            torque,
            u: sol.u,
            p: sol.p,
            report: sol.report,
        })
    }
}

struct MapOutput {
    u: VectorField,
    p: ScalarField,
    theta: f64,
    torque: f64,
    report: crate::oseen::SolveReport,
}

/// ∫ 2𝔻(u):𝔻(w) over the fluid region. Diagonal strain entries live at cell
/// centers, off-diagonal ones at cell edges weighted by the fluid fraction of
/// the four cells around the edge.
pub fn strain_pairing(u: &VectorField, w: &VectorField, mask: &CellMask) -> f64 {
    let grid = &mask.grid;
    let n = grid.n;
    let inv_h = 1.0 / grid.h;
    let cl = grid.cells();
    let mut s = 0.0;
    for &c in &mask.fluid {
        let c = cl.coords(c as usize);
        for d in 0..3 {
            let fl = grid.faces(d);
            let f = fl.index(c[0], c[1], c[2]);
            let st = fl.strides[d];
            s += 2.0 * (u.comp[d][f + st] - u.comp[d][f]) * (w.comp[d][f + st] - w.comp[d][f]) * inv_h * inv_h;
        }
    }
    for e in 0..3 {
        let (d, k) = ((e + 1) % 3, (e + 2) % 3);
        let el = grid.edges(e);
        let (fd, fk) = (grid.faces(d), grid.faces(k));
        for idx in 0..el.len() {
            let c = el.coords(idx);
            if c[d] < 1 || c[d] > n - 1 || c[k] < 1 || c[k] > n - 1 {
                continue;
            }
            let mut fluid = 0;
            for (a, b) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let mut q = c;
                q[d] -= a;
                q[k] -= b;
                if mask.cells[cl.index(q[0], q[1], q[2])] == CellKind::Fluid {
                    fluid += 1;
                }
            }
            if fluid == 0 {
                continue;
            }
            let id = fd.index(c[0], c[1], c[2]);
            let ik = fk.index(c[0], c[1], c[2]);
            let shear = |v: &VectorField| {
                (v.comp[d][id] - v.comp[d][id - fd.strides[k]] + v.comp[k][ik] - v.comp[k][ik - fk.strides[d]]) * inv_h
            };
            s += 0.25 * fluid as f64 * shear(u) * shear(w);
        }
    }
    s * grid.cell_volume()
}

/// F_λ(u; b) = −Σ_free h³ [λ((u − b + V)·∇u + u·∇V) − f_λ]·h − ∫2𝔻(u):𝔻(h)
/// with V = V(b) and h the torque test field.
pub fn torque_functional_with(
    u: &VectorField,
    b: Vec3,
    v: &VectorField,
    h: &VectorField,
    mask: &CellMask,
    lambda: f64,
    scheme: ConvectionScheme,
) -> f64 {
    let grid = mask.grid;
    let mut bulk = lifting::forcing_f_lambda(lambda, v, b, &grid, scheme);
    bulk.scale(-1.0);
    if lambda != 0.0 {
        let mut t = u.clone();
        t.axpy(1.0, v);
        t.add_constant([-b[0], -b[1], -b[2]]);
        bulk.axpy(lambda, &ops::advect(&t, u, &grid, scheme));
        bulk.axpy(lambda, &ops::advect(u, v, &grid, ConvectionScheme::Centered));
    }
    let mut s = 0.0;
    for d in 0..3 {
        for &f in &mask.free[d] {
            s += bulk.comp[d][f as usize] * h.comp[d][f as usize];
        }
    }
    -(s * grid.cell_volume()) - strain_pairing(u, h, mask)
}

/// Volume form of the torque for a state, using the cutoff radii in `cfg`.
pub fn torque_functional(
    u: &VectorField,
    theta: RotationAngle,
    params: &Params,
    mask: &CellMask,
    cfg: &LiftingConfig,
    scheme: ConvectionScheme,
) -> Result<f64> {
    let grid = mask.grid;
    u.check(&grid)?;
    cfg.validate(&mask.body, &grid)?;
    let b = far_field_direction(theta, params);
    let v = lifting::simple_lifting(&grid, mask, b, cfg)?;
    let h = lifting::torque_test_field(&grid, cfg);
    Ok(torque_functional_with(u, b, &v, &h, mask, params.lambda, scheme))
}

/// Traction integrals over the staircase body surface with the normal
/// pointing into the body.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundaryLoads {
    /// ∫ 𝕋(v, p)·n.
    pub force: [f64; 3],
    /// e₁·∫ x × 𝕋(v, p)·n.
    pub torque: f64,
}

/// Surface quadrature of 𝕋(v, p)·n over every solid|fluid face, with
/// one-sided second-order wall gradients and linearly extrapolated wall
/// pressure. `v`
/// is the full velocity relative to the body (zero on the wall).
pub fn boundary_loads(v: &VectorField, p: &ScalarField, mask: &CellMask) -> BoundaryLoads {
    let grid = &mask.grid;
    let cl = grid.cells();
    let h = grid.h;
    let mut force = [0.0; 3];
    let mut torque = 0.0;
    let area = h * h;
    for d in 0..3 {
        let fl = grid.faces(d);
        let sd = fl.strides[d];
        let cs = cl.strides[d];
        for idx in 0..fl.len() {
            let (lo, hi) = mask.face_cells(d, idx);
            let (Some(lo), Some(hi)) = (lo, hi) else { continue };
            let (kl, kh) = (mask.cells[lo], mask.cells[hi]);
            let (s, c1): (isize, usize) = match (kl, kh) {
                (CellKind::Solid, CellKind::Fluid) => (1, hi),
                (CellKind::Fluid, CellKind::Solid) => (-1, lo),
                _ => continue,
            };
            let sf = s as f64;
            let step = |i: usize, st: usize, k: isize| (i as isize + k * st as isize) as usize;
            let c2 = step(c1, cs, s);
            let second = mask.cells[c2] == CellKind::Fluid;
            let f0 = v.comp[d][idx];
            let f1 = v.comp[d][step(idx, sd, s)];
            let f2 = v.comp[d][step(idx, sd, 2 * s)];
            let (dnd, pw) = if second {
                (sf * (4.0 * f1 - f2 - 3.0 * f0) / (2.0 * h), 0.5 * (3.0 * p.data[c1] - p.data[c2]))
            } else {
                (sf * (f1 - f0) / h, p.data[c1])
            };
            let mut t = [0.0; 3];
            t[d] = -sf * (2.0 * dnd - pw);
            // Tangential components live half a cell off the wall on either
            // side: the centered difference across the wall is second order.
            let a = ops::cell_average(v, grid, cl.coords(c1));
            let g = ops::cell_average(v, grid, cl.coords(step(c1, cs, -s)));
            for tt in (0..3).filter(|&e| e != d) {
                let st = fl.strides[tt];
                let dvt = (v.comp[d][idx + st] - v.comp[d][idx - st]) / (2.0 * h);
                t[tt] = -sf * (sf * (a[tt] - g[tt]) / h + dvt);
            }
            let x = grid.face_position(d, fl.coords(idx));
            for j in 0..3 {
                force[j] += t[j] * area;
            }
            torque += (x[1] * t[2] - x[2] * t[1]) * area;
        }
    }
    BoundaryLoads { force, torque }
}

/// e₁·∫ x × 𝕋(v, p)·n over the body surface.
pub fn boundary_torque_direct(v: &VectorField, p: &ScalarField, mask: &CellMask) -> f64 {
    boundary_loads(v, p, mask).torque
}

/// ∫ 𝕋(v, p)·n on the body by momentum balance: −∮ (𝕋 − λ v⊗v)·n_out over the
/// surface of the cube [−L, L]³, L snapped to a grid plane. Returns the
/// estimate and the L used.
pub fn control_box_force(v: &VectorField, p: &ScalarField, mask: &CellMask, lambda: f64, half_width: f64) -> ([f64; 3], f64) {
    let grid = &mask.grid;
    let n = grid.n;
    let h = grid.h;
    let cl = grid.cells();
    let lo_min = (mask.body.bounding_half_width() / h).ceil() as usize + 2;
    let hi_max = n / 2 - 3;
    let k = ((half_width / h).round() as usize).clamp(lo_min.min(hi_max), hi_max);
    let l = k as f64 * h;
    // node indices of the planes x = ±L
    let (a, b) = (n / 2 - k, n / 2 + k);
    let flux_at = |c: [usize; 3], m: usize| -> [f64; 3] {
        let vel = ops::cell_average(v, grid, c);
        let g = ops::cell_gradient(v, grid, c);
        let pc = p.data[cl.index(c[0], c[1], c[2])];
        std::array::from_fn(|j| {
            let mut t = g[j][m] + g[m][j] - lambda * vel[j] * vel[m];
            if j == m {
                t -= pc;
            }
            t
        })
    };
    let mut total = [0.0; 3];
    for m in 0..3 {
        let (q, r) = ((m + 1) % 3, (m + 2) % 3);
        for (plane, sign) in [(a, -1.0), (b, 1.0)] {
            for i in a..b {
                for j in a..b {
                    let mut c_in = [0; 3];
                    c_in[q] = i;
                    c_in[r] = j;
                    c_in[m] = plane;
                    let mut c_out = c_in;
                    c_out[m] = plane - 1;
                    let f1 = flux_at(c_in, m);
                    let f2 = flux_at(c_out, m);
                    for jj in 0..3 {
                        total[jj] += sign * 0.5 * (f1[jj] + f2[jj]) * h * h;
                    }
                }
            }
        }
    }
    (total.map(|t| -t), l)
}

/// Boundary force, both routes, and the displacement δ = −μ𝔹⁻¹(θ)∫𝕋·n.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeltaReport {
    /// ∫ 𝕋·n by surface quadrature (normal into the body).
    pub traction_integral: [f64; 3],
    /// Force exerted by the fluid on the body, −∫ 𝕋·n.
    pub hydrodynamic_force: [f64; 3],
    pub delta: [f64; 3],
    /// ∫ 𝕋·n from the control-box momentum balance.
    pub flux_integral: [f64; 3],
    pub control_half_width: f64,
    /// |surface − flux| / |surface|.
    pub discrepancy: f64,
    /// Direct boundary torque e₁·∫ x × 𝕋·n.
    pub boundary_torque: f64,
}

pub fn recover_delta(setup: &EquilibriumSetup<'_>, state: &EquilibriumState) -> Result<DeltaReport> {
    let v = setup.physical_velocity(state);
    let loads = boundary_loads(&v, &state.p, setup.mask);
    let bmat = rotated_stiffness(state.theta, &setup.params);
    let inv = bmat
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("rotated stiffness is not invertible".into()))?;
    let i = Vec3::from(loads.force);
    let delta = -setup.params.mu * (inv * i);
    let half = 0.5 * (setup.mask.body.bounding_half_width() + 2.0 * setup.lifting.rho0);
    let (flux, l) = control_box_force(&v, &state.p, setup.mask, setup.params.lambda, half);
    let fl = Vec3::from(flux);
    let disc = if i.norm() > 0.0 { (i - fl).norm() / i.norm() } else { fl.norm() };
    Ok(DeltaReport {
        traction_integral: loads.force,
        hydrodynamic_force: (-i).into(),
        delta: delta.into(),
        flux_integral: flux,
        control_half_width: l,
        discrepancy: disc,
        boundary_torque: loads.torque,
    })
}

/// Smooth random solenoidal field vanishing within `margin` of the body and of
/// the outer layer: the curl of a ramped random edge potential.
pub fn random_solenoidal_field(mask: &CellMask, seed: u64, margin: f64) -> VectorField {
    let grid = mask.grid;
    let r = grid.radius;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<([f64; 3], [f64; 3], f64)> = (0..12)
        .map(|_| {
            let k = std::array::from_fn(|_| rng.random_range(1..=3) as f64);
            let ph = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
            (k, ph, rng.random_range(-1.0..1.0))
        })
        .collect();
    let body = mask.body;
    let h = grid.h;
    let pot = EdgeField::from_fn(&grid, |x| {
        let wall = r - 3.0 * h - x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let ramp = lifting::step(1.0 + ((body.distance(x) - 2.0 * h) / margin).clamp(0.0, 1.0))
            * lifting::step(1.0 + (wall / margin).clamp(0.0, 1.0));
        std::array::from_fn(|d| {
            let mut s = 0.0;
            for (k, ph, a) in &terms[d * 4..(d + 1) * 4] {
                let mut p = *a;
                for e in 0..3 {
                    p *= (std::f64::consts::PI * k[e] * x[e] / r + ph[e]).sin();
                }
                s += p;
            }
            ramp * s * r / std::f64::consts::PI
        })
    });
    let mut v = ops::curl(&pot, &grid);
    mask.zero_pinned(&mut v);
    v
}

fn grad_norm(u: &VectorField, grid: &Grid) -> f64 {
    ops::h1_seminorm(u, grid)
}

/// One damped step of the coupled map from `state`.
pub fn picard_step(
    setup: &EquilibriumSetup<'_>,
    state: &EquilibriumState,
    opts: &PicardOptions,
) -> Result<(EquilibriumState, StepReport)> {
    let grid = setup.grid();
    let out = setup.map(state, opts.linearization, setup.params.lambda)?;
    let w = opts.damping;
    let mut u = out.u;
    let mut p = out.p;
    if w < 1.0 {
        u.scale(w);
        u.axpy(1.0 - w, &state.u);
        for (a, b) in p.data.iter_mut().zip(&state.p.data) {
            *a = w * *a + (1.0 - w) * b;
        }
    }
    let theta = (1.0 - w) * state.theta.0 + w * out.theta;
    let mut diff = u.clone();
    diff.axpy(-1.0, &state.u);
    let du = grad_norm(&diff, &grid);
    let gn = grad_norm(&u, &grid);
    let report = StepReport {
        iter: 0,
        grad_norm: gn,
        theta,
        du,
        du_rel: if gn > 0.0 { du / gn } else { du },
        dtheta: (theta - state.theta.0).abs(),
        torque: out.torque,
        linear_iters: out.report.inner_iters_total,
        residual_momentum: out.report.final_residual_momentum,
        residual_divergence: out.report.final_residual_divergence,
    };
    Ok((EquilibriumState { u, p, theta: RotationAngle(theta), delta: state.delta }, report))
}

fn initial_state(setup: &EquilibriumSetup<'_>, opts: &PicardOptions) -> Result<EquilibriumState> {
    let grid = setup.grid();
    let zero = EquilibriumState::zero(&grid, opts.theta0);
    let stokes = || -> Result<EquilibriumState> {
        let out = setup.map(&zero, Linearization::Lagged, 0.0)?;
        Ok(EquilibriumState { u: out.u, p: out.p, ..zero.clone() })
    };
    match &opts.init {
        PicardInit::Zero => Ok(zero.clone()),
        PicardInit::Stokes => stokes(),
        PicardInit::PerturbedStokes { amplitude, seed } => {
            let mut s = stokes()?;
            let mut pert = random_solenoidal_field(setup.mask, *seed, 4.0 * grid.h);
            let scale = amplitude * s.u.max_abs().max(1e-3) / pert.max_abs().max(f64::MIN_POSITIVE);
            pert.scale(scale);
            s.u.axpy(1.0, &pert);
            Ok(s)
        }
        PicardInit::Custom(st) => {
            st.u.check(&grid)?;
            st.p.check(&grid)?;
            let mut s = (**st).clone();
            setup.mask.zero_pinned(&mut s.u);
            Ok(s)
        }
    }
}

/// Iterates [`picard_step`] until the relative H¹ change and the θ change are
/// below tolerance, then checks the fixed-point residual with one undamped
/// step and recovers δ.
pub fn solve_with_setup(
    setup: &EquilibriumSetup<'_>,
    opts: &PicardOptions,
) -> Result<(EquilibriumState, ConvergenceHistory)> {
    let errs = opts.collect_errors();
    if !errs.is_empty() {
        return Err(Error::InvalidParams(errs.join("; ")));
    }
    let start = Instant::now();
    let grid = setup.grid();
    let mut history = ConvergenceHistory::default();
    let fail = |state: EquilibriumState, mut history: ConvergenceHistory, reason: String| {
        history.wall_time = start.elapsed().as_secs_f64();
        Error::PicardNonConvergence(Box::new(PicardFailure { state, history, reason }))
    };
    let mut state = match initial_state(setup, opts) {
        Ok(s) => s,
        Err(e @ Error::OseenNonConvergence(_)) => {
            return Err(fail(EquilibriumState::zero(&grid, opts.theta0), history, e.to_string()))
        }
        Err(e) => return Err(e),
    };
    history.max_bound = grad_norm(&state.u, &grid) + state.theta.0.abs();
    for k in 0..opts.max_iters {
        let (next, mut rep) = match picard_step(setup, &state, opts) {
            Ok(x) => x,
            Err(e @ Error::OseenNonConvergence(_)) => return Err(fail(state, history, e.to_string())),
            Err(e) => return Err(e),
        };
        rep.iter = k + 1;
        let bound = rep.grad_norm + rep.theta.abs();
        history.max_bound = history.max_bound.max(bound);
        let done = rep.du_rel <= opts.tol_u && rep.dtheta <= opts.tol_theta;
        let finite = bound.is_finite();
        history.steps.push(rep);
        if !finite || bound > opts.bound_cap {
            return Err(fail(next, history, format!("iterates left the bound cap ({bound:.3e} > {:.3e})", opts.bound_cap)));
        }
        state = next;
        if done {
            history.converged = true;
            break;
        }
    }
    if !history.converged {
        let reason = format!("no convergence within {} iterations", opts.max_iters);
        return Err(fail(state, history, reason));
    }
    let undamped = PicardOptions { damping: 1.0, ..opts.clone() };
    match picard_step(setup, &state, &undamped) {
        Ok((_, rep)) => {
            history.fixed_point_residual_u = rep.du_rel;
            history.fixed_point_residual_theta = rep.dtheta;
        }
        Err(e @ Error::OseenNonConvergence(_)) => return Err(fail(state, history, e.to_string())),
        Err(e) => return Err(e),
    }
    state.delta = Vec3::from(recover_delta(setup, &state)?.delta);
    history.wall_time = start.elapsed().as_secs_f64();
    Ok((state, history))
}

/// Builds the setup and runs [`solve_with_setup`].
pub fn solve_equilibrium(
    params: &Params,
    mask: &CellMask,
    cfg: &LiftingConfig,
    picard: &PicardOptions,
    linear: &LinearSolveOptions,
) -> Result<(EquilibriumState, ConvergenceHistory)> {
    let setup = EquilibriumSetup::new(params, mask, cfg, linear)?;
    solve_with_setup(&setup, picard)
}

#[cfg(test)]
mod tests;
