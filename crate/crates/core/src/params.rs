//! Physical constants of the coupled system and the rotation algebra that ties
//! the torsion angle θ to the far-field direction and the stiffness matrix.

use crate::{Error, Mat3, Result, Vec3};

const SYM_TOL: f64 = 1e-14;
const UNIT_TOL: f64 = 1e-14;

/// Nondimensional constants (λ, α, k, μ, 𝔸, b̃) of the equilibrium problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub lambda: f64,
    pub alpha: f64,
    pub k_torsion: f64,
    pub mu: f64,
    pub stiffness: Mat3,
    pub b_tilde: Vec3,
    /// λ̂ = λ / k, kept in sync by the constructor.
    pub lambda_hat: f64,
}

/// Torsion angle in radians. Never wrapped: full turns are meaningful.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct RotationAngle(pub f64);

impl From<f64> for RotationAngle {
    fn from(theta: f64) -> Self {
        RotationAngle(theta)
    }
}

impl Params {
    pub fn new(
        lambda: f64,
        alpha: f64,
        k_torsion: f64,
        mu: f64,
        stiffness: Mat3,
        b_tilde: Vec3,
    ) -> Result<Self> {
        let errors = Self::collect_errors(lambda, alpha, k_torsion, mu, &stiffness, &b_tilde);
        if !errors.is_empty() {
            return Err(Error::InvalidParams(errors.join("; ")));
        }
        Ok(Params {
            lambda,
            alpha,
            k_torsion,
            mu,
            stiffness,
            b_tilde,
            lambda_hat: lambda / k_torsion,
        })
    }

    /// Same as [`Params::new`] with 𝔸 = I, μ = 1, k = 1 and b̃ = e₂.
    pub fn simple(lambda: f64, alpha: f64) -> Result<Self> {
        Self::new(lambda, alpha, 1.0, 1.0, Mat3::identity(), Vec3::new(0.0, 1.0, 0.0))
    }

    /// Every violated invariant, as human-readable messages.
    pub fn collect_errors(
        lambda: f64,
        alpha: f64,
        k_torsion: f64,
        mu: f64,
        stiffness: &Mat3,
        b_tilde: &Vec3,
    ) -> Vec<String> {
        let mut errs = Vec::new();
        if !(lambda.is_finite() && lambda >= 0.0) {
            errs.push(format!("lambda must be finite and >= 0 (got {lambda})"));
        }
        if !alpha.is_finite() {
            errs.push(format!("alpha must be finite (got {alpha})"));
        }
        if !(k_torsion.is_finite() && k_torsion > 0.0) {
            errs.push(format!("k_torsion must be finite and > 0 (got {k_torsion})"));
        }
        if !(mu.is_finite() && mu > 0.0) {
            errs.push(format!("mu must be finite and > 0 (got {mu})"));
        }
        if let Err(e) = check_spd(stiffness) {
            errs.push(e);
        }
        if b_tilde.iter().any(|c| !c.is_finite()) {
            errs.push("b_tilde must be finite".into());
        } else {
            if b_tilde[0] != 0.0 {
                errs.push(format!("b_tilde[0] must be exactly 0 (got {})", b_tilde[0]));
            }
            if (b_tilde.norm() - 1.0).abs() > UNIT_TOL {
                errs.push(format!("b_tilde must have unit length (|b_tilde| = {})", b_tilde.norm()));
            }
        }
        errs
    }

    /// Copy with a different λ; λ̂ is recomputed.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(lambda, self.alpha, self.k_torsion, self.mu, self.stiffness, self.b_tilde)
    }
}

fn check_spd(a: &Mat3) -> std::result::Result<(), String> {
    if a.iter().any(|c| !c.is_finite()) {
        return Err("stiffness must be finite".into());
    }
    let asym = (a - a.transpose()).amax();
    if asym > SYM_TOL * a.amax().max(1.0) {
        return Err(format!("stiffness must be symmetric (max asymmetry {asym:e})"));
    }
    let eig = nalgebra::SymmetricEigen::new(0.5 * (a + a.transpose())).eigenvalues;
    let min = eig.min();
    if min <= 0.0 {
        return Err(format!("stiffness must be positive definite (smallest eigenvalue {min:e})"));
    }
    Ok(())
}

/// Q(θ): identity on e₁ and a plane rotation by θ in (e₂, e₃).
pub fn rotation_matrix(theta: RotationAngle) -> Mat3 {
    let (s, c) = theta.0.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// b̃_α = cos α e₁ + sin α b̃, the far-field direction in the unloaded frame.
pub fn unrotated_direction(params: &Params) -> Vec3 {
    let (s, c) = params.alpha.sin_cos();
    Vec3::new(c, 0.0, 0.0) + s * params.b_tilde
}

/// b_α(θ) = Qᵀ(θ) b̃_α.
pub fn far_field_direction(theta: RotationAngle, params: &Params) -> Vec3 {
    let v = rotation_matrix(theta).transpose() * unrotated_direction(params);
    // e₁ is fixed by Q, so the first component is cos α exactly.
    Vec3::new(params.alpha.cos(), v[1], v[2])
}

/// 𝔹(θ) = Qᵀ(θ) 𝔸 Q(θ).
pub fn rotated_stiffness(theta: RotationAngle, params: &Params) -> Mat3 {
    let q = rotation_matrix(theta);
    let b = q.transpose() * params.stiffness * q;
    0.5 * (b + b.transpose())
}

/// (ρ₁, ρ₂): extreme eigenvalues of 𝔸, bounding δ·𝔹(θ)δ for unit δ.
pub fn stiffness_bounds(params: &Params) -> Result<(f64, f64)> {
    check_spd(&params.stiffness).map_err(Error::InvalidParams)?;
    let eig = nalgebra::SymmetricEigen::new(params.stiffness).eigenvalues;
    Ok((eig.min(), eig.max()))
}

/// λ = V d / ν.
pub fn reynolds_from_physical(v: f64, d: f64, nu: f64) -> Result<f64> {
    for (name, x) in [("velocity", v), ("length", d), ("viscosity", nu)] {
        if !(x.is_finite() && x > 0.0) {
            return Err(Error::InvalidParams(format!("{name} scale must be positive (got {x})")));
        }
    }
    Ok(v * d / nu)
}

/// (a₁, a₂) = (min{1, √λ}, min{1, λ^{1/4}}).
pub fn smallness_coefficients(lambda: f64) -> (f64, f64) {
    let l = lambda.max(0.0);
    (l.sqrt().min(1.0), l.sqrt().sqrt().min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn diag123() -> Params {
        Params::new(0.1, FRAC_PI_2, 1.0, 1.0, Mat3::from_diagonal(&Vec3::new(1.0, 2.0, 3.0)), Vec3::y())
            .unwrap()
    }

    #[test]
    fn identity_and_quarter_turn() {
        assert_eq!(rotation_matrix(RotationAngle(0.0)), Mat3::identity());
        let e3 = rotation_matrix(RotationAngle(FRAC_PI_2)) * Vec3::y();
        assert_abs_diff_eq!((e3 - Vec3::z()).amax(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn group_law_example() {
        // explicit product of the two plane rotations
        let (a, b) = (0.3f64, -1.1f64);
        let qa = rotation_matrix(RotationAngle(a));
        let qb = rotation_matrix(RotationAngle(b));
        let mut prod = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    prod[(i, j)] += qa[(i, k)] * qb[(k, j)];
                }
            }
        }
        let c = (a + b).cos();
        let s = (a + b).sin();
        let expect = Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c);
        assert!((prod - expect).amax() <= 1e-15);
    }

    #[test]
    fn far_field_examples() {
        let p0 = Params::simple(0.1, 0.0).unwrap();
        for th in [-7.0, 0.0, 0.4, 12.0] {
            assert_eq!(far_field_direction(RotationAngle(th), &p0), Vec3::x());
        }
        let p = Params::simple(0.1, FRAC_PI_2).unwrap();
        let b0 = far_field_direction(RotationAngle(0.0), &p);
        assert!((b0 - Vec3::y()).amax() <= 1e-15);
        // Qᵀ(π/2) = [[1,0,0],[0,0,1],[0,-1,0]] maps e₂ to -e₃
        let b1 = far_field_direction(RotationAngle(FRAC_PI_2), &p);
        assert!((b1 + Vec3::z()).amax() <= 1e-15, "{b1:?}");
    }

    #[test]
    fn rotated_stiffness_examples() {
        let p = Params::simple(0.0, 0.0).unwrap();
        assert!((rotated_stiffness(RotationAngle(1.3), &p) - Mat3::identity()).amax() <= 1e-15);
        let d = diag123();
        assert_eq!(rotated_stiffness(RotationAngle(0.0), &d), d.stiffness);
        let b = rotated_stiffness(RotationAngle(FRAC_PI_2), &d);
        let expect = Mat3::from_diagonal(&Vec3::new(1.0, 3.0, 2.0));
        assert!((b - expect).amax() <= 1e-14, "{b}");
    }

    #[test]
    fn bounds_examples() {
        assert_eq!(stiffness_bounds(&Params::simple(0.0, 0.0).unwrap()).unwrap(), (1.0, 1.0));
        let (r1, r2) = stiffness_bounds(&diag123()).unwrap();
        assert_abs_diff_eq!(r1, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r2, 3.0, epsilon = 1e-14);
    }

    #[test]
    fn reynolds_examples() {
        assert_eq!(reynolds_from_physical(2.0, 0.5, 1.0).unwrap(), 1.0);
        assert_eq!(reynolds_from_physical(1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(reynolds_from_physical(3.0, 2.0, 0.5).unwrap(), 12.0);
        assert!(reynolds_from_physical(0.0, 1.0, 1.0).is_err());
        assert!(reynolds_from_physical(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn smallness_examples() {
        assert_eq!(smallness_coefficients(1.0), (1.0, 1.0));
        let (a1, a2) = smallness_coefficients(1e-4);
        assert_abs_diff_eq!(a1, 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(a2, 0.1, epsilon = 1e-15);
        assert_eq!(smallness_coefficients(16.0), (1.0, 1.0));
    }

    #[test]
    fn validation_rejects_bad_input() {
        let bad = Params::new(
            -1.0,
            0.0,
            0.0,
            1.0,
            Mat3::from_diagonal(&Vec3::new(1.0, -1.0, 1.0)),
            Vec3::new(0.1, 1.0, 0.0),
        );
        match bad {
            Err(Error::InvalidParams(msg)) => {
                for key in ["lambda", "k_torsion", "positive definite", "b_tilde[0]"] {
                    assert!(msg.contains(key), "{msg}");
                }
            }
            other => panic!("{other:?}"),
        }
        let mut asym = Mat3::identity();
        asym[(0, 1)] = 1e-6;
        assert!(Params::new(0.0, 0.0, 1.0, 1.0, asym, Vec3::y()).is_err());
        let p = Params::new(0.3, 0.0, 4.0, 1.0, Mat3::identity(), Vec3::z()).unwrap();
        assert_eq!(p.lambda_hat, 0.3 / 4.0);
    }

    fn random_spd(seed: [f64; 9]) -> Mat3 {
        let m = Mat3::from_row_slice(&seed);
        m * m.transpose() + Mat3::identity() * 0.1
    }

    proptest! {
        #[test]
        fn q_orthogonal_and_group_law(t1 in -50.0f64..50.0, t2 in -50.0f64..50.0) {
            let q1 = rotation_matrix(RotationAngle(t1));
            prop_assert!((q1.transpose() * q1 - Mat3::identity()).amax() <= 1e-14);
            prop_assert!((q1.determinant() - 1.0).abs() <= 1e-14);
            let q12 = q1 * rotation_matrix(RotationAngle(t2));
            prop_assert!((q12 - rotation_matrix(RotationAngle(t1 + t2))).amax() <= 1e-13);
        }

        #[test]
        fn far_field_unit_with_fixed_axial_part(alpha in -PI..PI, phi in -PI..PI, th in -20.0f64..20.0) {
            let p = Params::new(0.1, alpha, 1.0, 1.0, Mat3::identity(), Vec3::new(0.0, phi.cos(), phi.sin())).unwrap();
            let b = far_field_direction(RotationAngle(th), &p);
            prop_assert!((b.norm() - 1.0).abs() <= 1e-14);
            prop_assert_eq!(b[0], alpha.cos());
        }

        #[test]
        fn rotated_stiffness_keeps_spectrum(seed in proptest::array::uniform9(-1.0f64..1.0), th in -10.0f64..10.0) {
            let a = random_spd(seed);
            let p = Params::new(0.1, 0.0, 1.0, 1.0, a, Vec3::y()).unwrap();
            let mut ea: Vec<f64> = nalgebra::SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
            let mut eb: Vec<f64> = nalgebra::SymmetricEigen::new(rotated_stiffness(RotationAngle(th), &p)).eigenvalues.iter().copied().collect();
            ea.sort_by(f64::total_cmp);
            eb.sort_by(f64::total_cmp);
            for (x, y) in ea.iter().zip(&eb) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn rayleigh_quotients_within_bounds(seed in proptest::array::uniform9(-1.0f64..1.0),
                                            th in -10.0f64..10.0,
                                            d in proptest::array::uniform3(-1.0f64..1.0)) {
            let a = random_spd(seed);
            let p = Params::new(0.1, 0.0, 1.0, 1.0, a, Vec3::y()).unwrap();
            let (r1, r2) = stiffness_bounds(&p).unwrap();
            let dv = Vec3::from(d);
            prop_assume!(dv.norm() > 1e-3);
            let u = dv / dv.norm();
            let q = u.dot(&(rotated_stiffness(RotationAngle(th), &p) * u));
            prop_assert!(q >= r1 - 1e-10 && q <= r2 + 1e-10);
        }

        #[test]
        fn smallness_monotone(l1 in 0.0f64..20.0, dl in 0.0f64..5.0) {
            let (a1, a2) = smallness_coefficients(l1);
            let (b1, b2) = smallness_coefficients(l1 + dl);
            prop_assert!(a1 <= b1 && a2 <= b2 && b1 <= 1.0 && b2 <= 1.0);
        }
    }
}
