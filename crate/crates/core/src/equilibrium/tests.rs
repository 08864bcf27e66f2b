use super::*;
use crate::grid::{build_grid, voxelize_body, BodyShape};
use crate::Mat3;
use std::f64::consts::FRAC_PI_2;

fn sphere_setup_mask(n: usize) -> CellMask {
    let grid = build_grid(4.0, n).unwrap();
    voxelize_body(&BodyShape::Sphere { radius: 0.5 }, &grid).unwrap()
}

fn box_mask(n: usize) -> CellMask {
    let grid = build_grid(4.0, n).unwrap();
    voxelize_body(&BodyShape::Box { half_extents: [0.2, 0.55, 0.2] }, &grid).unwrap()
}

fn cfg() -> LiftingConfig {
    LiftingConfig { rho0: 1.3, eps: 0.5, rho_h: 1.3 }
}

fn oblique(lambda: f64, k: f64) -> Params {
    let a = 30f64.to_radians();
    Params::new(lambda, FRAC_PI_2, k, 1.0, Mat3::identity(), Vec3::new(0.0, a.cos(), a.sin())).unwrap()
}

fn rigid_rotation(grid: &Grid) -> VectorField {
    VectorField::from_fn(grid, |x| [0.0, -x[2], x[1]])
}

#[test]
fn rigid_rotation_has_no_strain() {
    let mask = box_mask(24);
    let r = rigid_rotation(&mask.grid);
    let w = random_solenoidal_field(&mask, 3, 0.5);
    assert!(strain_pairing(&r, &w, &mask).abs() < 1e-12);
    let loads = boundary_loads(&r, &ScalarField::zeros(&mask.grid), &mask);
    assert!(loads.torque.abs() < 1e-12);
    assert!(loads.force.iter().all(|f| f.abs() < 1e-12));
}

#[test]
fn zero_fields_and_constant_pressure_carry_no_load() {
    let mask = box_mask(24);
    let grid = mask.grid;
    let z = VectorField::zeros(&grid);
    let loads = boundary_loads(&z, &ScalarField::zeros(&grid), &mask);
    assert_eq!(loads, BoundaryLoads::default());
    let mut p = ScalarField::zeros(&grid);
    for &c in &mask.fluid {
        p.data[c as usize] = 2.5;
    }
    let loads = boundary_loads(&z, &p, &mask);
    assert!(loads.torque.abs() < 1e-12);
    assert!(loads.force.iter().all(|f| f.abs() < 1e-12));
}

#[test]
fn strain_pairing_is_symmetric_and_bilinear() {
    let mask = box_mask(24);
    let a = random_solenoidal_field(&mask, 1, 0.5);
    let b = random_solenoidal_field(&mask, 2, 0.5);
    let ab = strain_pairing(&a, &b, &mask);
    assert!((ab - strain_pairing(&b, &a, &mask)).abs() < 1e-12 * ab.abs().max(1.0));
    let mut a2 = a.clone();
    a2.scale(-3.0);
    assert!((strain_pairing(&a2, &b, &mask) + 3.0 * ab).abs() < 1e-11 * ab.abs().max(1.0));
    assert!(strain_pairing(&a, &a, &mask) > 0.0);
}

#[test]
fn random_solenoidal_field_is_admissible() {
    let mask = box_mask(24);
    let v = random_solenoidal_field(&mask, 9, 0.5);
    assert!(v.max_abs() > 0.0);
    assert!(ops::divergence(&v, &mask.grid, Some(&mask)).max_abs() < 1e-12);
}

#[test]
fn stokes_problem_converges_at_once_with_zero_angle() {
    let mask = sphere_setup_mask(24);
    let params = Params::simple(0.0, 0.7).unwrap();
    let (st, hist) =
        solve_equilibrium(&params, &mask, &cfg(), &PicardOptions::default(), &LinearSolveOptions::default()).unwrap();
    assert!(hist.converged);
    assert!(hist.steps.len() <= 2);
    assert_eq!(st.theta.0, 0.0);
    assert!(ops::divergence(&st.u, &mask.grid, Some(&mask)).max_abs() <= 1e-9);
}

#[test]
fn sphere_feels_no_torque() {
    // reflection z → −z maps the voxelized sphere and the stream onto
    // themselves and flips the e₁-torque
    let mask = sphere_setup_mask(24);
    let params = Params::simple(0.3, 1.0).unwrap();
    let picard = PicardOptions { tol_theta: 1e-12, ..PicardOptions::default() };
    let (st, _) = solve_equilibrium(&params, &mask, &cfg(), &picard, &LinearSolveOptions::default()).unwrap();
    assert!(st.theta.0.abs() < 1e-9, "theta = {}", st.theta.0);
}

#[test]
fn both_linearizations_share_the_fixed_point() {
    let mask = box_mask(24);
    let params = oblique(0.2, 1.0);
    let lin = LinearSolveOptions { tol_rel: 1e-11, ..Default::default() };
    let setup = EquilibriumSetup::new(&params, &mask, &cfg(), &lin).unwrap();
    let base = PicardOptions { tol_u: 1e-10, tol_theta: 1e-12, ..PicardOptions::default() };
    let (a, ha) = solve_with_setup(&setup, &base).unwrap();
    let semi = PicardOptions { linearization: Linearization::SemiImplicit, ..base.clone() };
    let (b, _) = solve_with_setup(&setup, &semi).unwrap();
    assert!(a.theta.0.abs() > 1e-8);
    assert!((a.theta.0 - b.theta.0).abs() < 1e-8 * a.theta.0.abs().max(1e-6));
    let mut d = a.u.clone();
    d.axpy(-1.0, &b.u);
    let g = ops::h1_seminorm(&a.u, &mask.grid);
    assert!(ops::h1_seminorm(&d, &mask.grid) < 1e-7 * g);
    assert!(ha.fixed_point_residual_u <= 10.0 * base.tol_u);
    assert!(ha.fixed_point_residual_theta <= 10.0 * base.tol_theta);
}

#[test]
fn delta_is_parallel_to_force_for_identity_stiffness() {
    let mask = box_mask(24);
    let params = oblique(0.1, 1.0);
    let setup = EquilibriumSetup::new(&params, &mask, &cfg(), &LinearSolveOptions::default()).unwrap();
    let (st, _) = solve_with_setup(&setup, &PicardOptions::default()).unwrap();
    let rep = recover_delta(&setup, &st).unwrap();
    for j in 0..3 {
        assert!((rep.delta[j] + params.mu * rep.traction_integral[j]).abs() < 1e-12 * (1.0 + rep.delta[j].abs()));
        assert_eq!(rep.hydrodynamic_force[j], -rep.traction_integral[j]);
    }
    assert!(rep.discrepancy < 0.2, "discrepancy {}", rep.discrepancy);
}

#[test]
fn picard_reports_iteration_cap() {
    let mask = box_mask(24);
    let params = oblique(0.2, 1.0);
    let picard = PicardOptions { max_iters: 1, init: PicardInit::Zero, ..PicardOptions::default() };
    match solve_equilibrium(&params, &mask, &cfg(), &picard, &LinearSolveOptions::default()) {
        Err(Error::PicardNonConvergence(f)) => assert_eq!(f.history.steps.len(), 1),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn rejects_invalid_options() {
    let bad = PicardOptions { damping: 0.0, max_iters: 0, ..PicardOptions::default() };
    assert_eq!(bad.collect_errors().len(), 2);
    assert_eq!(default_damping(0.05), 1.0);
    assert_eq!(default_damping(0.2), 0.5);
}
