//! Discrete norms and the measurement side of the verification: affine bound
//! fits over a λ-grid, multi-start dispersion, contraction factors and the
//! shell-decay proxy for the far field.

use serde::{Deserialize, Serialize};

use crate::equilibrium::{self, ConvergenceHistory, EquilibriumSetup, EquilibriumState, PicardOptions};
use crate::grid::ops;
use crate::grid::{CellMask, VectorField};
use crate::params::smallness_coefficients;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Field,
    Gradient,
    SecondDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "region", rename_all = "snake_case")]
pub enum Region {
    Fluid,
    /// Fluid cells with |x| < radius (e.g. the support of the torque field).
    Ball { radius: f64 },
}

/// Lq norm specification; `exponent = f64::INFINITY` is the max norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSpec {
    pub kind: NormKind,
    pub exponent: f64,
    pub region: Region,
}

impl NormSpec {
    pub fn new(kind: NormKind, exponent: f64) -> Self {
        NormSpec { kind, exponent, region: Region::Fluid }
    }

    pub fn validate(&self) -> Result<()> {
        if self.exponent.is_nan() || self.exponent < 1.0 {
            return Err(Error::InvalidNorm(format!("exponent must be >= 1 or infinite (got {})", self.exponent)));
        }
        if let Region::Ball { radius } = self.region {
            if !(radius > 0.0) {
                return Err(Error::InvalidNorm(format!("region radius must be positive (got {radius})")));
            }
        }
        Ok(())
    }
}

/// Pointwise magnitude sampled at fluid cell centers: |v|, |∇v| (Frobenius)
/// or the Frobenius norm of the second differences ∂²_k v_d.
fn pointwise(field: &VectorField, kind: NormKind, mask: &CellMask, c: [usize; 3]) -> f64 {
    let grid = &mask.grid;
    match kind {
        NormKind::Field => {
            let a = ops::cell_average(field, grid, c);
            (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
        }
        NormKind::Gradient => {
            let g = ops::cell_gradient(field, grid, c);
            g.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
        }
        NormKind::SecondDifference => {
            let inv = 1.0 / (grid.h * grid.h);
            let mid = ops::cell_average(field, grid, c);
            let mut s = 0.0;
            for k in 0..3 {
                let mut lo = c;
                let mut hi = c;
                lo[k] -= 1;
                hi[k] += 1;
                let a = ops::cell_average(field, grid, lo);
                let b = ops::cell_average(field, grid, hi);
                for d in 0..3 {
                    let x = (a[d] - 2.0 * mid[d] + b[d]) * inv;
                    s += x * x;
                }
            }
            s.sqrt()
        }
    }
}

/// Midpoint-rule Lq norm over the fluid cells of the region.
pub fn field_norm(field: &VectorField, spec: &NormSpec, mask: &CellMask) -> Result<f64> {
    spec.validate()?;
    let grid = &mask.grid;
    field.check(grid)?;
    let cl = grid.cells();
    let q = spec.exponent;
    let mut acc = 0.0f64;
    for &ci in &mask.fluid {
        let c = cl.coords(ci as usize);
        if let Region::Ball { radius } = spec.region {
            let x = grid.cell_center(c);
            if (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() >= radius {
                continue;
            }
        }
        let f = pointwise(field, spec.kind, mask, c);
        if q.is_infinite() {
            acc = acc.max(f);
        } else {
            acc += f.powf(q);
        }
    }
    if q.is_infinite() {
        Ok(acc)
    } else {
        Ok((acc * grid.cell_volume()).powf(1.0 / q))
    }
}

/// The three quantities bounded by C(1 + λ): ‖∇v‖₂, a₁‖v + b‖₄ and
/// a₂‖∇v‖_r with r = 4s/(4 − s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundQuantities {
    pub grad_v_2: f64,
    pub a1_v_plus_b_4: f64,
    pub a2_grad_v_r: f64,
}

impl BoundQuantities {
    pub fn as_array(&self) -> [f64; 3] {
        [self.grad_v_2, self.a1_v_plus_b_4, self.a2_grad_v_r]
    }
}

/// Evaluates [`BoundQuantities`] for the physical field v; `v_plus_b` is
/// u + V(b), the same field shifted by the far-field direction.
pub fn bound_norms(v_plus_b: &VectorField, lambda: f64, s: f64, mask: &CellMask) -> Result<BoundQuantities> {
    if !(s > 1.0 && s < 2.0) {
        return Err(Error::InvalidNorm(format!("s must lie in (1, 2) (got {s})")));
    }
    let (a1, a2) = smallness_coefficients(lambda);
    let r = 4.0 * s / (4.0 - s);
    // ∇v = ∇(v + b) since b is constant
    Ok(BoundQuantities {
        grad_v_2: field_norm(v_plus_b, &NormSpec::new(NormKind::Gradient, 2.0), mask)?,
        a1_v_plus_b_4: a1 * field_norm(v_plus_b, &NormSpec::new(NormKind::Field, 4.0), mask)?,
        a2_grad_v_r: a2 * field_norm(v_plus_b, &NormSpec::new(NormKind::Gradient, r), mask)?,
    })
}

/// One λ-grid point for the affine fit; `grid_key` identifies the mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSample {
    pub lambda: f64,
    pub grid_key: (usize, f64),
    pub quantities: BoundQuantities,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundFitReport {
    /// Smallest C with every quantity ≤ C(1 + λ) over the whole grid.
    pub c: f64,
    /// The same fit on the lower half of the λ-grid.
    pub c_lower_half: f64,
    /// |c_lower_half / c − 1|.
    pub refit_change: f64,
    /// Per λ: max over quantities of y / (C(1 + λ)).
    pub margins: Vec<(f64, f64)>,
    pub pass: bool,
}

fn envelope(samples: &[BoundSample]) -> f64 {
    samples
        .iter()
        .flat_map(|s| s.quantities.as_array().map(|y| y / (1.0 + s.lambda)))
        .fold(0.0, f64::max)
}

/// Least max-margin affine envelope y ≤ C(1 + λ) and its stability under
/// dropping the upper half of the λ-grid (tolerance ±`stability`).
pub fn verify_affine_bounds(samples: &[BoundSample], stability: f64) -> Result<BoundFitReport> {
    if samples.is_empty() {
        return Err(Error::InvalidSweep("no samples for the bound fit".into()));
    }
    let key = samples[0].grid_key;
    if samples.iter().any(|s| s.grid_key != key) {
        return Err(Error::InvalidSweep("bound fit needs all states on the same grid".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    let c = envelope(&sorted);
    let half = &sorted[..sorted.len().div_ceil(2)];
    let c_half = envelope(half);
    let refit_change = if c > 0.0 { (c_half / c - 1.0).abs() } else { 0.0 };
    let margins = sorted
        .iter()
        .map(|s| {
            let m = s.quantities.as_array().iter().map(|y| y / (c * (1.0 + s.lambda))).fold(0.0, f64::max);
            (s.lambda, if c > 0.0 { m } else { 0.0 })
        })
        .collect();
    Ok(BoundFitReport { c, c_lower_half: c_half, refit_change, margins, pass: c.is_finite() && refit_change <= stability })
}

/// Outcome of one start in a multi-start experiment.
#[derive(Debug, Clone)]
pub struct StartOutcome {
    pub label: String,
    pub state: Option<EquilibriumState>,
    pub history: ConvergenceHistory,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub label: String,
    pub converged: bool,
    pub theta: f64,
    pub delta: [f64; 3],
    pub grad_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionReport {
    pub lambda: f64,
    pub starts: Vec<StartSummary>,
    /// Pairwise |Δθ|, row-major over the starts (NaN where a start failed).
    pub theta_matrix: Vec<Vec<f64>>,
    pub max_dtheta: f64,
    pub max_ddelta: f64,
    /// max ‖∇(u_i − u_j)‖₂ / ‖∇u_i‖₂.
    pub max_dgrad_rel: f64,
    pub all_converged: bool,
    pub pass: bool,
}

/// Runs the equilibrium solve from each start and measures the spread of the
/// converged states. Passes when every start converged, |Δθ| ≤ `tol_theta`
/// and the relative H¹ spread is ≤ `tol_u`.
pub fn uniqueness_experiment(
    setup: &EquilibriumSetup<'_>,
    starts: &[(String, PicardOptions)],
    tol_theta: f64,
    tol_u: f64,
) -> Result<DispersionReport> {
    if starts.len() < 3 {
        return Err(Error::InvalidSweep("uniqueness needs at least three initializations".into()));
    }
    let mut outcomes = Vec::new();
    for (label, opts) in starts {
        let out = match equilibrium::solve_with_setup(setup, opts) {
            Ok((state, history)) => StartOutcome { label: label.clone(), state: Some(state), history, error: None },
            Err(Error::PicardNonConvergence(f)) => StartOutcome {
                label: label.clone(),
                state: None,
                history: f.history.clone(),
                error: Some(f.to_string()),
            },
            Err(e) => return Err(e),
        };
        outcomes.push(out);
    }
    Ok(dispersion(setup.params.lambda, &outcomes, setup.mask, tol_theta, tol_u))
}

pub fn dispersion(lambda: f64, outcomes: &[StartOutcome], mask: &CellMask, tol_theta: f64, tol_u: f64) -> DispersionReport {
    let grid = &mask.grid;
    let m = outcomes.len();
    let mut theta_matrix = vec![vec![f64::NAN; m]; m];
    let (mut max_dtheta, mut max_ddelta, mut max_dgrad) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..m {
        for j in 0..m {
            let (Some(a), Some(b)) = (&outcomes[i].state, &outcomes[j].state) else { continue };
            let dt = (a.theta.0 - b.theta.0).abs();
            theta_matrix[i][j] = dt;
            if j <= i {
                continue;
            }
            max_dtheta = max_dtheta.max(dt);
            max_ddelta = max_ddelta.max((a.delta - b.delta).norm());
            let mut d = a.u.clone();
            d.axpy(-1.0, &b.u);
            let g = ops::h1_seminorm(&a.u, grid).max(f64::MIN_POSITIVE);
            max_dgrad = max_dgrad.max(ops::h1_seminorm(&d, grid) / g);
        }
    }
    let starts: Vec<StartSummary> = outcomes
        .iter()
        .map(|o| StartSummary {
            label: o.label.clone(),
            converged: o.state.is_some(),
            theta: o.state.as_ref().map_or(f64::NAN, |s| s.theta.0),
            delta: o.state.as_ref().map_or([f64::NAN; 3], |s| [s.delta[0], s.delta[1], s.delta[2]]),
            grad_norm: o.state.as_ref().map_or(f64::NAN, |s| ops::h1_seminorm(&s.u, grid)),
            iterations: o.history.steps.len(),
        })
        .collect();
    let all_converged = starts.iter().all(|s| s.converged);
    DispersionReport {
        lambda,
        starts,
        theta_matrix,
        max_dtheta,
        max_ddelta,
        max_dgrad_rel: max_dgrad,
        all_converged,
        pass: all_converged && max_dtheta <= tol_theta && max_dgrad <= tol_u,
    }
}

/// Bisection for the smallest λ at which `passes` fails, between a passing
/// `lo` and a failing `hi`. Returns the bracket after `steps` halvings.
pub fn bisect_threshold(mut lo: f64, mut hi: f64, steps: usize, mut passes: impl FnMut(f64) -> bool) -> (f64, f64) {
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        if passes(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// Geometric mean of the ratios r_k over the steps whose changes stay above
/// `floor` (relative H¹ change), where rounding and linear-solve noise do not
/// dominate. `None` when fewer than two such ratios exist.
pub fn contraction_rate(history: &ConvergenceHistory, floor: f64) -> Option<f64> {
    let steps = &history.steps;
    let ratios: Vec<f64> = steps
        .windows(2)
        .skip(1)
        .filter(|w| w[0].du_rel > floor && w[1].du_rel > floor && w[0].du > 0.0)
        .map(|w| w[1].du / w[0].du)
        .collect();
    if ratios.len() < 2 {
        return None;
    }
    Some((ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64).exp())
}

/// Per-iteration ratios of a run (empty below three iterations).
pub fn contraction_profile(history: &ConvergenceHistory) -> Vec<f64> {
    if history.steps.len() < 3 {
        return Vec::new();
    }
    history.contraction_ratios()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub exponent: f64,
    pub prefactor: f64,
}

/// Least squares fit of log y = log c + p log x.
pub fn fit_power_law(points: &[(f64, f64)]) -> Option<PowerFit> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let p = sxy / sxx;
    Some(PowerFit { exponent: p, prefactor: (my - p * mx).exp() })
}

/// Empirical constant c in r ≈ c λ(1 + λ)/a₁(λ): the mean of r a₁/(λ(1+λ)).
pub fn contraction_constant(points: &[(f64, f64)]) -> Option<f64> {
    let v: Vec<f64> = points
        .iter()
        .filter(|(l, r)| *l > 0.0 && r.is_finite())
        .map(|(l, r)| r * smallness_coefficients(*l).0 / (l * (1.0 + l)))
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Mean of |field| at fluid cell centers over spherical shells of width
/// `width` starting at `r_min`, up to the largest sphere inside the box.
pub fn shell_averages(field: &VectorField, mask: &CellMask, r_min: f64, width: f64) -> Vec<(f64, f64)> {
    let grid = &mask.grid;
    let cl = grid.cells();
    let r_max = grid.radius - 2.0 * grid.h;
    if !(width > 0.0) || r_min >= r_max {
        return Vec::new();
    }
    let count = ((r_max - r_min) / width).floor() as usize;
    let mut sum = vec![0.0; count];
    let mut num = vec![0usize; count];
    for &ci in &mask.fluid {
        let c = cl.coords(ci as usize);
        let x = grid.cell_center(c);
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        if r < r_min {
            continue;
        }
        let k = ((r - r_min) / width) as usize;
        if k < count {
            let a = ops::cell_average(field, grid, c);
            sum[k] += (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            num[k] += 1;
        }
    }
    (0..count)
        .filter(|&k| num[k] > 0)
        .map(|k| (r_min + (k as f64 + 0.5) * width, sum[k] / num[k] as f64))
        .collect()
}

/// True when the shell averages never increase with the radius.
pub fn is_monotone_decreasing(shells: &[(f64, f64)]) -> bool {
    shells.windows(2).all(|w| w[1].1 <= w[0].1)
}

/// |δ| of a converged state against the Stokes oracle 6πμ|𝔹⁻¹b|.
pub fn stokes_delta_magnitude(mu: f64, stiffness_inv: &crate::Mat3, b: Vec3, radius: f64) -> f64 {
    6.0 * std::f64::consts::PI * mu * radius * (stiffness_inv * b).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, voxelize_body, BodyShape};
    use proptest::prelude::*;

    fn mask() -> CellMask {
        let grid = build_grid(3.0, 16).unwrap();
        voxelize_body(&BodyShape::Sphere { radius: 0.5 }, &grid).unwrap()
    }

    fn smooth(mask: &CellMask, a: f64) -> VectorField {
        VectorField::from_fn(&mask.grid, |x| [a * (x[1]).sin(), x[0] * x[2], (a * x[2]).cos()])
    }

    #[test]
    fn constant_field_on_fluid_volume() {
        let m = mask();
        let one = VectorField::constant(&m.grid, [1.0, 0.0, 0.0]);
        let vol = m.fluid.len() as f64 * m.grid.cell_volume();
        for q in [1.0, 2.0, 3.5] {
            let n = field_norm(&one, &NormSpec::new(NormKind::Field, q), &m).unwrap();
            assert!((n - vol.powf(1.0 / q)).abs() < 1e-12 * n);
        }
        let inf = field_norm(&one, &NormSpec::new(NormKind::Field, f64::INFINITY), &m).unwrap();
        assert_eq!(inf, 1.0);
        let g = field_norm(&one, &NormSpec::new(NormKind::Gradient, 2.0), &m).unwrap();
        assert!(g.abs() < 1e-14);
    }

    #[test]
    fn squared_l2_is_additive_over_regions() {
        let m = mask();
        let v = smooth(&m, 0.7);
        let all = field_norm(&v, &NormSpec::new(NormKind::Field, 2.0), &m).unwrap();
        let inner = field_norm(&v, &NormSpec { region: Region::Ball { radius: 1.7 }, ..NormSpec::new(NormKind::Field, 2.0) }, &m)
            .unwrap();
        // complement by brute force
        let cl = m.grid.cells();
        let mut outer = 0.0;
        for &c in &m.fluid {
            let c = cl.coords(c as usize);
            let x = m.grid.cell_center(c);
            if (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() >= 1.7 {
                let a = ops::cell_average(&v, &m.grid, c);
                outer += a.iter().map(|t| t * t).sum::<f64>();
            }
        }
        outer *= m.grid.cell_volume();
        assert!((all * all - inner * inner - outer).abs() < 1e-10 * all * all);
    }

    #[test]
    fn second_difference_of_quadratic() {
        let m = mask();
        // v = (x₁², 0, 0): ∂²_1 v_1 = 2, others vanish
        let v = VectorField::from_fn(&m.grid, |x| [x[1] * x[1], 0.0, 0.0]);
        let n = field_norm(&v, &NormSpec::new(NormKind::SecondDifference, f64::INFINITY), &m).unwrap();
        assert!((n - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_exponents() {
        let m = mask();
        let v = smooth(&m, 1.0);
        assert!(field_norm(&v, &NormSpec::new(NormKind::Field, 0.5), &m).is_err());
        assert!(field_norm(&v, &NormSpec::new(NormKind::Field, f64::NAN), &m).is_err());
        assert!(bound_norms(&v, 0.1, 2.0, &m).is_err());
    }

    #[test]
    fn affine_fit_single_point_and_mixed_grids() {
        let q = BoundQuantities { grad_v_2: 3.0, a1_v_plus_b_4: 0.0, a2_grad_v_r: 1.0 };
        let s = BoundSample { lambda: 0.0, grid_key: (32, 4.0), quantities: q };
        let rep = verify_affine_bounds(&[s], 0.2).unwrap();
        assert_eq!(rep.c, 3.0);
        assert!(rep.pass);
        let t = BoundSample { grid_key: (48, 4.0), ..s };
        assert!(verify_affine_bounds(&[s, t], 0.2).is_err());
    }

    #[test]
    fn power_law_fit_recovers_exponent() {
        let pts: Vec<(f64, f64)> = [0.01, 0.02, 0.05, 0.1].iter().map(|&l| (l, 3.0 * f64::powf(l, 0.5))).collect();
        let fit = fit_power_law(&pts).unwrap();
        assert!((fit.exponent - 0.5).abs() < 1e-12);
        assert!((fit.prefactor - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bisection_brackets_threshold() {
        let (lo, hi) = bisect_threshold(0.0, 1.0, 20, |l| l < 0.3);
        assert!(lo < 0.3 && hi >= 0.3 && hi - lo < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn triangle_inequality_and_homogeneity(a in -2.0f64..2.0, b in -2.0f64..2.0, q in 1.0f64..6.0, t in -3.0f64..3.0) {
            let m = mask();
            let u = smooth(&m, a);
            let w = smooth(&m, b);
            for kind in [NormKind::Field, NormKind::Gradient, NormKind::SecondDifference] {
                let spec = NormSpec::new(kind, q);
                let nu = field_norm(&u, &spec, &m).unwrap();
                let nw = field_norm(&w, &spec, &m).unwrap();
                let sum = VectorField::linear_combination(1.0, &u, 1.0, &w);
                prop_assert!(field_norm(&sum, &spec, &m).unwrap() <= (nu + nw) * (1.0 + 1e-12));
                let mut s = u.clone();
                s.scale(t);
                prop_assert!((field_norm(&s, &spec, &m).unwrap() - t.abs() * nu).abs() <= 1e-12 * (1.0 + nu * t.abs()));
            }
        }
    }
}
