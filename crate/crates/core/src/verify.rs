//! Self-checks of the discretisation: lifting properties, the manufactured
//! Oseen solution, energy consistency of the convection stencil, and the
//! property suite that bundles them for the `props` command.

use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{self, EquilibriumSetup, PicardOptions};
use crate::grid::ops::{self, ConvectionScheme};
use crate::grid::{build_grid, voxelize_body, BodyShape, CellMask, EdgeField, FaceKind, VectorField};
use crate::lifting::{self, LiftingConfig};
use crate::oseen::{solve_oseen, LinearSolveOptions, OseenProblem, SolveReport};
use crate::params::Params;
use crate::{Mat3, Result, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftingSuiteReport {
    pub n: usize,
    pub div_v: f64,
    pub div_u: f64,
    pub div_h: f64,
    /// max |V − b| and |U − b| over body faces.
    pub boundary_v: f64,
    pub boundary_u: f64,
    /// Largest value outside the declared supports.
    pub leak_v: f64,
    pub leak_u: f64,
    pub leak_h: f64,
    /// max |curl 𝖴(·; a) − a| for a random a.
    pub curl_linear: f64,
    pub wall_time: f64,
    pub pass: bool,
}

/// Divergence, boundary exactness and support checks of V, U and h, plus the
/// curl identity on the linear potential.
pub fn lifting_suite(mask: &CellMask, cfg: &LiftingConfig, b: Vec3, seed: u64) -> Result<LiftingSuiteReport> {
    let start = Instant::now();
    let grid = mask.grid;
    let v = lifting::simple_lifting(&grid, mask, b, cfg)?;
    let u = lifting::leray_lifting(&grid, mask, b, cfg.eps)?;
    let hf = lifting::torque_test_field(&grid, cfg);
    let layer = (-1.0 / cfg.eps).exp();
    let (mut bv, mut bu, mut lv, mut lu, mut lh) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for d in 0..3 {
        let fl = grid.faces(d);
        for idx in 0..fl.len() {
            let x = grid.face_position(d, fl.coords(idx));
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            if mask.faces[d][idx] == FaceKind::Body {
                bv = bv.max((v.comp[d][idx] - b[d]).abs());
                bu = bu.max((u.comp[d][idx] - b[d]).abs());
            }
            // the potential is sampled on edges up to h/√2 away from the face
            if r >= 2.0 * cfg.rho0 + grid.h {
                lv = lv.max(v.comp[d][idx].abs());
            }
            if r >= 2.0 * cfg.rho_h + grid.h {
                lh = lh.max(hf.comp[d][idx].abs());
            }
            if lifting::layer_distance(&mask.body, &grid, x) >= layer + grid.h {
                lu = lu.max(u.comp[d][idx].abs());
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let c = ops::curl(&EdgeField::from_fn(&grid, |x| lifting::vector_potential(x, a)), &grid);
    let curl_linear = (0..3).flat_map(|d| c.comp[d].iter().map(move |x| (x - a[d]).abs())).fold(0.0, f64::max);
    let rep = LiftingSuiteReport {
        n: grid.n,
        div_v: ops::divergence(&v, &grid, None).max_abs(),
        div_u: ops::divergence(&u, &grid, None).max_abs(),
        div_h: ops::divergence(&hf, &grid, None).max_abs(),
        boundary_v: bv,
        boundary_u: bu,
        leak_v: lv,
        leak_u: lu,
        leak_h: lh,
        curl_linear,
        wall_time: start.elapsed().as_secs_f64(),
        pass: false,
    };
    let pass = rep.div_v.max(rep.div_u).max(rep.div_h) <= 1e-10
        && rep.boundary_v.max(rep.boundary_u) <= 1e-12
        && rep.leak_v == 0.0
        && rep.leak_u == 0.0
        && rep.leak_h == 0.0
        && rep.curl_linear <= 1e-12;
    Ok(LiftingSuiteReport { pass, ..rep })
}

/// Radial bump ψ(x) = A(1 − |x − c|²/s²)^k, k = 8, with the radial
/// derivatives F', F'', F''' of F(ρ) = A(1 − ρ/s²)^k in ρ = |x − c|².
struct Bump {
    c: [f64; 3],
    s: f64,
    amp: f64,
}

const BUMP_K: i32 = 8;

impl Bump {
    fn derivs(&self, x: [f64; 3]) -> ([f64; 3], f64, [f64; 3], f64) {
        let y = [x[0] - self.c[0], x[1] - self.c[1], x[2] - self.c[2]];
        let rho = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
        let s2 = self.s * self.s;
        let q = 1.0 - rho / s2;
        if q <= 0.0 {
            return (y, rho, [0.0; 3], 0.0);
        }
        let k = BUMP_K as f64;
        let f1 = -self.amp * k / s2 * q.powi(BUMP_K - 1);
        let f2 = self.amp * k * (k - 1.0) / (s2 * s2) * q.powi(BUMP_K - 2);
        let f3 = -self.amp * k * (k - 1.0) * (k - 2.0) / (s2 * s2 * s2) * q.powi(BUMP_K - 3);
        (y, rho, [f1, f2, f3], 1.0)
    }

    /// ∇ψ.
    fn grad(&self, x: [f64; 3]) -> [f64; 3] {
        let (y, _, f, _) = self.derivs(x);
        y.map(|t| 2.0 * f[0] * t)
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// u* = ∇ψ × a = curl(ψa), p* = a second bump; smooth, solenoidal and
/// supported away from the body and the box boundary.
struct Manufactured {
    vel: Bump,
    a: [f64; 3],
    pres: Bump,
}

impl Manufactured {
    fn standard() -> Self {
        Manufactured {
            vel: Bump { c: [0.6, 0.45, -0.3], s: 0.5, amp: 1.0 },
            a: [0.3, -0.5, 0.8],
            pres: Bump { c: [-0.5, 0.4, 0.5], s: 0.5, amp: 2.0 },
        }
    }

    fn velocity(&self, x: [f64; 3]) -> [f64; 3] {
        cross(self.vel.grad(x), self.a)
    }

    /// −Δu* + λ(t·∇)u* + ∇p*.
    fn rhs(&self, x: [f64; 3], lambda: f64, t: [f64; 3]) -> [f64; 3] {
        let (y, rho, f, inside) = self.vel.derivs(x);
        let mut out = self.pres.grad(x);
        if inside > 0.0 {
            // Δu* = ∇(Δψ) × a with ∇Δψ = 2(10F'' + 4ρF''') y
            let g = 2.0 * (10.0 * f[1] + 4.0 * rho * f[2]);
            let lap = cross(y.map(|v| g * v), self.a);
            // (t·∇)∇ψ = 2F' t + 4F'' (y·t) y
            let yt = y[0] * t[0] + y[1] * t[1] + y[2] * t[2];
            let ht: [f64; 3] = std::array::from_fn(|i| 2.0 * f[0] * t[i] + 4.0 * f[1] * yt * y[i]);
            let conv = cross(ht, self.a);
            for i in 0..3 {
                out[i] += -lap[i] + lambda * conv[i];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedReport {
    pub n: usize,
    pub h: f64,
    /// max |u_h − u*| over free faces.
    pub max_error: f64,
    /// Discrete L² error over free faces.
    pub l2_error: f64,
    pub solve: SolveReport,
}

/// Box radius and sphere radius of the manufactured-solution geometry.
pub const MMS_BOX: f64 = 1.5;
pub const MMS_SPHERE: f64 = 0.15;

/// Solves the Oseen problem whose exact solution is the manufactured pair
/// and measures the velocity error on an n-cell grid.
pub fn manufactured_error(n: usize, lambda: f64, stream: Vec3, opts: &LinearSolveOptions) -> Result<ManufacturedReport> {
    let grid = build_grid(MMS_BOX, n)?;
    let mask = voxelize_body(&BodyShape::Sphere { radius: MMS_SPHERE }, &grid)?;
    let m = Manufactured::standard();
    let t = [stream[0], stream[1], stream[2]];
    let rhs = VectorField::from_fn(&grid, |x| m.rhs(x, lambda, t));
    let exact = VectorField::from_fn(&grid, |x| m.velocity(x));
    let problem = OseenProblem { lambda, stream, frozen_transport: None, reaction: None, rhs: &rhs };
    let sol = solve_oseen(&mask, &problem, opts)?;
    let (mut emax, mut e2) = (0.0f64, 0.0f64);
    for d in 0..3 {
        for &i in &mask.free[d] {
            let e = sol.u.comp[d][i as usize] - exact.comp[d][i as usize];
            emax = emax.max(e.abs());
            e2 += e * e;
        }
    }
    Ok(ManufacturedReport {
        n,
        h: grid.h,
        max_error: emax,
        l2_error: (e2 * grid.cell_volume()).sqrt(),
        solve: sol.report,
    })
}

/// log₂ of the error ratio between grids n and 2n (max norm).
pub fn observed_order(coarse: &ManufacturedReport, fine: &ManufacturedReport) -> f64 {
    (coarse.max_error / fine.max_error).ln() / (coarse.h / fine.h).ln()
}

/// |⟨(t·∇)u, u⟩| / ‖u‖² for a random u vanishing on pinned faces; zero up to
/// rounding for the centered stencil.
pub fn convection_skew_defect(mask: &CellMask, t: Vec3, seed: u64) -> f64 {
    let grid = &mask.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = lifting::random_test_field(mask, &mut rng, 2.0 * grid.h, 4);
    let cu = ops::advect_constant([t[0], t[1], t[2]], &u, grid, ConvectionScheme::Centered);
    let (mut num, mut den) = (0.0, 0.0);
    for d in 0..3 {
        for &i in &mask.free[d] {
            let i = i as usize;
            num += cu.comp[d][i] * u.comp[d][i];
            den += u.comp[d][i] * u.comp[d][i];
        }
    }
    if den == 0.0 {
        0.0
    } else {
        num.abs() / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl PropertyCheck {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        PropertyCheck { name: name.into(), value, threshold, pass: value <= threshold }
    }

    fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        PropertyCheck { name: name.into(), value, threshold, pass: value >= threshold }
    }
}

/// Sizes of the built-in property suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteOptions {
    pub n_lifting: usize,
    pub hardy_samples: usize,
    pub n_mms: usize,
    pub n_equilibrium: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { n_lifting: 64, hardy_samples: 40, n_mms: 24, n_equilibrium: 24, seed: 1 }
    }
}

/// Desk-sized versions of the structural checks: liftings, Hardy ratio,
/// skew-symmetry, manufactured order, symmetry of the sphere and the two
/// torque routes on an asymmetric box.
pub fn property_suite(opts: &SuiteOptions) -> Result<Vec<PropertyCheck>> {
    let mut out = Vec::new();
    let b = Vec3::new(0.0, 0.6, 0.8);

    let grid = build_grid(3.0, opts.n_lifting)?;
    let sphere = BodyShape::Sphere { radius: 0.5 };
    let mask = voxelize_body(&sphere, &grid)?;
    let cfg = LiftingConfig { rho0: 1.1, eps: 0.5, rho_h: 1.1 };
    let eps_min = lifting::resolvable_eps_range(grid.h).map_or(f64::INFINITY, |r| r.0);
    let cfg_u = LiftingConfig { eps: cfg.eps.max(eps_min * 1.01), ..cfg };
    let lift = lifting_suite(&mask, &cfg_u, b, opts.seed)?;
    out.push(PropertyCheck::at_most("lifting_divergence", lift.div_v.max(lift.div_u).max(lift.div_h), 1e-10));
    out.push(PropertyCheck::at_most("lifting_boundary_mismatch", lift.boundary_v.max(lift.boundary_u), 1e-12));
    out.push(PropertyCheck::at_most("lifting_support_leak", lift.leak_v.max(lift.leak_u).max(lift.leak_h), 0.0));
    out.push(PropertyCheck::at_most("curl_identity_linear", lift.curl_linear, 1e-12));

    let cal = lifting::calibrate_eps(&grid, &mask, b, opts.hardy_samples, opts.seed)?;
    out.push(PropertyCheck::at_most("hardy_ratio", cal.max_ratio, lifting::HARDY_BOUND));

    out.push(PropertyCheck::at_most("convection_skew_defect", convection_skew_defect(&mask, b, opts.seed), 1e-10));

    let lin = LinearSolveOptions { tol_rel: 1e-11, ..Default::default() };
    let coarse = manufactured_error(opts.n_mms, 1.0, -b, &lin)?;
    let fine = manufactured_error(2 * opts.n_mms, 1.0, -b, &lin)?;
    out.push(PropertyCheck::at_least("manufactured_order", observed_order(&coarse, &fine), 1.8));

    let grid = build_grid(4.0, opts.n_equilibrium)?;
    let mask = voxelize_body(&sphere, &grid)?;
    let eq_cfg = LiftingConfig { rho0: 1.3, eps: 0.5, rho_h: 1.3 };
    let params = Params::simple(0.1, 0.7)?;
    let picard = PicardOptions { tol_theta: 1e-12, ..PicardOptions::for_lambda(0.1) };
    let (st, _) = equilibrium::solve_equilibrium(&params, &mask, &eq_cfg, &picard, &LinearSolveOptions::default())?;
    out.push(PropertyCheck::at_most("sphere_theta", st.theta.0.abs(), 10.0 * picard.tol_theta));

    let body = BodyShape::Box { half_extents: [0.2, 0.55, 0.2] };
    let mask = voxelize_body(&body, &grid)?;
    let c = 30f64.to_radians();
    let params =
        Params::new(0.1, std::f64::consts::FRAC_PI_2, 1000.0, 1.0, Mat3::identity(), Vec3::new(0.0, c.cos(), c.sin()))?;
    let setup = EquilibriumSetup::new(&params, &mask, &eq_cfg, &LinearSolveOptions::default())?;
    let (st, _) = equilibrium::solve_with_setup(&setup, &PicardOptions::for_lambda(0.1))?;
    let f = equilibrium::torque_functional(&st.u, st.theta, &params, &mask, &eq_cfg, setup.linear.convection_scheme)?;
    let direct = equilibrium::recover_delta(&setup, &st)?.boundary_torque;
    out.push(PropertyCheck::at_most("torque_routes_relative_gap", (f + direct).abs() / f.abs().max(1e-12), 0.1));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_derivatives_match_finite_differences() {
        let m = Manufactured::standard();
        let x = [0.75, 0.3, -0.1];
        let eps = 1e-4;
        // central differences of u* give (t·∇)u* and Δu*
        let t = [0.2, -0.7, 0.4];
        let mut conv = [0.0; 3];
        let mut lap = [0.0; 3];
        let u0 = m.velocity(x);
        for k in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += eps;
            xm[k] -= eps;
            let (up, um) = (m.velocity(xp), m.velocity(xm));
            for i in 0..3 {
                conv[i] += t[k] * (up[i] - um[i]) / (2.0 * eps);
                lap[i] += (up[i] - 2.0 * u0[i] + um[i]) / (eps * eps);
            }
        }
        let gp = m.pres.grad(x);
        let r = m.rhs(x, 1.3, t);
        for i in 0..3 {
            let want = -lap[i] + 1.3 * conv[i] + gp[i];
            assert!((r[i] - want).abs() < 1e-5 * (1.0 + want.abs()), "{i}: {} vs {want}", r[i]);
        }
    }

    #[test]
    fn manufactured_fields_stay_clear_of_walls() {
        let grid = build_grid(MMS_BOX, 48).unwrap();
        let mask = voxelize_body(&BodyShape::Sphere { radius: MMS_SPHERE }, &grid).unwrap();
        let m = Manufactured::standard();
        let u = VectorField::from_fn(&grid, |x| m.velocity(x));
        for d in 0..3 {
            for (i, k) in mask.faces[d].iter().enumerate() {
                if *k != FaceKind::Free {
                    assert_eq!(u.comp[d][i], 0.0);
                }
            }
        }
        assert!(u.max_abs() > 1.0);
    }

    #[test]
    fn manufactured_error_decreases_at_second_order() {
        let lin = LinearSolveOptions { tol_rel: 1e-11, ..Default::default() };
        let b = Vec3::new(0.0, -0.6, -0.8);
        let a = manufactured_error(24, 1.0, b, &lin).unwrap();
        let c = manufactured_error(48, 1.0, b, &lin).unwrap();
        assert!(observed_order(&a, &c) > 1.8, "{} {}", a.max_error, c.max_error);
    }

    #[test]
    fn centered_convection_is_skew() {
        let grid = build_grid(3.0, 24).unwrap();
        let mask = voxelize_body(&BodyShape::Box { half_extents: [0.3, 0.5, 0.4] }, &grid).unwrap();
        for seed in 0..3 {
            assert!(convection_skew_defect(&mask, Vec3::new(0.3, -0.5, 0.8), seed) < 1e-12);
        }
    }

    #[test]
    fn lifting_suite_passes_on_a_resolved_grid() {
        let grid = build_grid(3.0, 64).unwrap();
        let mask = voxelize_body(&BodyShape::Sphere { radius: 0.5 }, &grid).unwrap();
        let eps = lifting::resolvable_eps_range(grid.h).unwrap().0 * 1.01;
        let cfg = LiftingConfig { rho0: 1.1, eps, rho_h: 1.1 };
        let rep = lifting_suite(&mask, &cfg, Vec3::new(0.0, 0.6, 0.8), 5).unwrap();
        assert!(rep.pass, "{rep:?}");
    }
}
