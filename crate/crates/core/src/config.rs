//! JSON run configuration: parsing with positions, defaults, and validation
//! that reports every violation at once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::equilibrium::{default_damping, Linearization, PicardInit, PicardOptions};
use crate::grid::{build_grid, BodyShape};
use crate::invading::SweepPlan;
use crate::lifting::LiftingConfig;
use crate::oseen::LinearSolveOptions;
use crate::params::Params;
use crate::verify::SuiteOptions;
use crate::{Error, Mat3, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    SingleEquilibrium,
    LambdaSweep,
    InvadingSweep,
    Uniqueness,
    BoundVerification,
    PropertySuite,
}

impl Scenario {
    fn uses_radii(self) -> bool {
        self == Scenario::InvadingSweep
    }
}

/// Either a single box (`radius`, `n`) or a fixed-h family (`radii`,
/// `cells_per_unit`) for the invading sweep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub radius: Option<f64>,
    pub n: Option<usize>,
    pub radii: Option<Vec<f64>>,
    pub cells_per_unit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsSpec {
    pub lambda: f64,
    pub alpha: f64,
    pub k_torsion: f64,
    pub mu: f64,
    /// Row-major 𝔸.
    pub stiffness: [[f64; 3]; 3],
    pub b_tilde: [f64; 3],
}

impl Default for ParamsSpec {
    fn default() -> Self {
        ParamsSpec {
            lambda: 0.0,
            alpha: std::f64::consts::FRAC_PI_2,
            k_torsion: 1.0,
            mu: 1.0,
            stiffness: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            b_tilde: [0.0, 1.0, 0.0],
        }
    }
}

impl ParamsSpec {
    fn stiffness(&self) -> Mat3 {
        Mat3::from_fn(|i, j| self.stiffness[i][j])
    }

    fn b(&self) -> Vec3 {
        Vec3::from(self.b_tilde)
    }

    pub fn collect_errors(&self, lambda: f64) -> Vec<String> {
        Params::collect_errors(lambda, self.alpha, self.k_torsion, self.mu, &self.stiffness(), &self.b())
            .into_iter()
            .map(|e| format!("params: {e}"))
            .collect()
    }

    pub fn to_params(&self, lambda: f64) -> Result<Params> {
        Params::new(lambda, self.alpha, self.k_torsion, self.mu, self.stiffness(), self.b())
    }
}

/// [`PicardOptions`] with the damping left open: unset means ω = 1 for
/// λ ≤ 0.05 and 0.5 above, per λ.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardSpec {
    pub damping: Option<f64>,
    pub tol_u: f64,
    pub tol_theta: f64,
    pub max_iters: usize,
    pub init: PicardInit,
    pub theta0: f64,
    pub linearization: Linearization,
    pub bound_cap: f64,
}

impl Default for PicardSpec {
    fn default() -> Self {
        let d = PicardOptions::default();
        PicardSpec {
            damping: None,
            tol_u: d.tol_u,
            tol_theta: d.tol_theta,
            max_iters: d.max_iters,
            init: d.init,
            theta0: d.theta0,
            linearization: d.linearization,
            bound_cap: d.bound_cap,
        }
    }
}

impl PicardSpec {
    pub fn options(&self, lambda: f64) -> PicardOptions {
        PicardOptions {
            damping: self.damping.unwrap_or_else(|| default_damping(lambda)),
            tol_u: self.tol_u,
            tol_theta: self.tol_theta,
            max_iters: self.max_iters,
            init: self.init.clone(),
            theta0: self.theta0,
            linearization: self.linearization,
            bound_cap: self.bound_cap,
        }
    }
}

/// One start of the uniqueness experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSpec {
    pub label: String,
    #[serde(default)]
    pub init: StartInit,
    #[serde(default)]
    pub theta0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartInit {
    Zero,
    #[default]
    Stokes,
    /// Amplitude relative to max|u_Stokes|; the seed is derived from the run
    /// seed and the start index.
    PerturbedStokes { amplitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BisectSpec {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniquenessSpec {
    pub starts: Vec<StartSpec>,
    pub tol_theta: f64,
    pub tol_u: f64,
    pub bisect: Option<BisectSpec>,
}

impl Default for UniquenessSpec {
    fn default() -> Self {
        UniquenessSpec {
            starts: vec![
                StartSpec { label: "zero".into(), init: StartInit::Zero, theta0: 0.0 },
                StartSpec { label: "stokes".into(), init: StartInit::Stokes, theta0: 0.0 },
                StartSpec {
                    label: "perturbed".into(),
                    init: StartInit::PerturbedStokes { amplitude: 0.2 },
                    theta0: 0.0,
                },
                StartSpec { label: "theta_offset".into(), init: StartInit::Stokes, theta0: 0.5 },
            ],
            tol_theta: 1e-6,
            tol_u: 1e-6,
            bisect: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSpec {
    pub s: f64,
    pub stability: f64,
}

impl Default for BoundSpec {
    fn default() -> Self {
        BoundSpec { s: 4.0 / 3.0, stability: 0.2 }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("fsieq-out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub body: BodyShape,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub params: ParamsSpec,
    /// Defaults to ρ₀ = ρ_h = 1.25·diam, ε = 0.5.
    #[serde(default)]
    pub lifting: Option<LiftingConfig>,
    #[serde(default)]
    pub picard: PicardSpec,
    #[serde(default)]
    pub solver: LinearSolveOptions,
    /// λ-grid of `lambda_sweep` and `bound_verification`.
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub uniqueness: UniquenessSpec,
    #[serde(default)]
    pub bounds: BoundSpec,
    #[serde(default)]
    pub suite: SuiteOptions,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub dump_fields: bool,
}

impl RunConfig {
    pub fn lifting(&self) -> LiftingConfig {
        self.lifting.unwrap_or_else(|| LiftingConfig::scaled(&self.body, 1.25))
    }

    /// Every λ the scenario will solve at.
    pub fn lambda_values(&self) -> Vec<f64> {
        match self.scenario {
            Scenario::LambdaSweep | Scenario::BoundVerification => self.lambdas.clone(),
            Scenario::PropertySuite => Vec::new(),
            _ => vec![self.params.lambda],
        }
    }

    pub fn params_at(&self, lambda: f64) -> Result<Params> {
        self.params.to_params(lambda)
    }

    /// Single-box grid of the non-invading scenarios.
    pub fn single_grid(&self) -> Result<(f64, usize)> {
        match (self.grid.radius, self.grid.n) {
            (Some(r), Some(n)) => Ok((r, n)),
            _ => Err(Error::ConfigInvalid(vec!["grid.radius and grid.n are required".into()])),
        }
    }

    pub fn sweep_plan(&self) -> Result<SweepPlan> {
        match (&self.grid.radii, self.grid.cells_per_unit) {
            (Some(radii), Some(c)) => Ok(SweepPlan {
                radii: radii.clone(),
                cells_per_unit: c,
                body: self.body,
                params: self.params_at(self.params.lambda)?,
                lifting: self.lifting(),
                picard: self.picard.options(self.params.lambda),
                linear: self.solver,
            }),
            _ => Err(Error::ConfigInvalid(vec!["grid.radii and grid.cells_per_unit are required".into()])),
        }
    }

    fn body_field(&self) -> &'static str {
        match self.body {
            BodyShape::Sphere { .. } => "body.radius",
            BodyShape::Box { .. } => "body.half_extents",
        }
    }

    /// All violations, in a stable order.
    pub fn collect_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if let Err(e) = self.body.validate() {
            errs.push(e.to_string());
        }
        let body_ok = errs.is_empty();
        let cfg = self.lifting();
        let field = self.body_field();
        let check_box = |errs: &mut Vec<String>, r: f64, n: usize| match build_grid(r, n) {
            Err(e) => errs.push(format!("grid: {e}")),
            Ok(g) if body_ok => {
                let diam = self.body.diameter();
                if diam >= r {
                    errs.push(format!("{field} gives diameter {diam}, which must be smaller than grid.radius = {r}"));
                } else if self.body.bounding_half_width() + 3.0 * g.h > r {
                    errs.push(format!(
                        "{field} reaches within 3h of the box: bounding half-width {} vs grid.radius = {r} (h = {})",
                        self.body.bounding_half_width(),
                        g.h
                    ));
                } else if let Err(e) = cfg.validate(&self.body, &g) {
                    errs.push(format!("lifting (R = {r}): {e}"));
                }
            }
            Ok(_) => {}
        };
        if self.scenario.uses_radii() {
            match (&self.grid.radii, self.grid.cells_per_unit) {
                (Some(_), Some(_)) => {
                    if let Ok(plan) = self.sweep_plan() {
                        errs.extend(plan.collect_errors().into_iter().map(|e| format!("grid: {e}")));
                    }
                }
                _ => errs.push("grid.radii and grid.cells_per_unit are required for invading_sweep".into()),
            }
        } else if self.scenario != Scenario::PropertySuite {
            match (self.grid.radius, self.grid.n) {
                (Some(r), Some(n)) => check_box(&mut errs, r, n),
                _ => errs.push("grid.radius and grid.n are required".into()),
            }
        }
        let lambdas = self.lambda_values();
        match self.scenario {
            Scenario::LambdaSweep | Scenario::BoundVerification if lambdas.is_empty() => {
                errs.push("lambdas must list at least one value".into())
            }
            _ => {}
        }
        let mut param_errs: Vec<String> = Vec::new();
        for &l in lambdas.iter().chain(std::iter::once(&self.params.lambda)) {
            for e in self.params.collect_errors(l) {
                if !param_errs.contains(&e) {
                    param_errs.push(e);
                }
            }
        }
        errs.extend(param_errs);
        errs.extend(self.picard.options(self.params.lambda).collect_errors().into_iter().map(|e| format!("picard: {e}")));
        errs.extend(self.solver.collect_errors().into_iter().map(|e| format!("solver: {e}")));
        if self.scenario == Scenario::Uniqueness {
            let u = &self.uniqueness;
            if u.starts.len() < 3 {
                errs.push(format!("uniqueness.starts needs at least 3 entries (got {})", u.starts.len()));
            }
            if !(u.tol_theta > 0.0 && u.tol_u > 0.0) {
                errs.push("uniqueness tolerances must be positive".into());
            }
            if let Some(b) = u.bisect {
                if !(b.lo >= 0.0 && b.hi > b.lo) || b.steps == 0 {
                    errs.push(format!("uniqueness.bisect needs 0 <= lo < hi and steps >= 1 (got {b:?})"));
                }
            }
        }
        if self.scenario == Scenario::BoundVerification {
            let b = self.bounds;
            if !(b.s > 1.0 && b.s < 2.0) {
                errs.push(format!("bounds.s must lie in (1, 2) (got {})", b.s));
            }
            if !(b.stability > 0.0) {
                errs.push("bounds.stability must be positive".into());
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            errs.push("output_dir must not be empty".into());
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.collect_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(errs))
        }
    }
}

/// Parses without validating; syntax and type errors carry line and column.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| Error::ConfigParse { line: e.line(), column: e.column(), message: e.to_string() })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg = parse_config(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "scenario": "single_equilibrium",
        "body": {"shape": "sphere", "radius": 0.5},
        "grid": {"radius": 4.0, "n": 24}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.solver.tol_rel, 1e-9);
        assert_eq!(cfg.bounds.s, 4.0 / 3.0);
        assert_eq!(cfg.picard.options(0.05).damping, 1.0);
        assert_eq!(cfg.picard.options(0.2).damping, 0.5);
        assert_eq!(cfg.uniqueness.starts.len(), 4);
        assert_eq!(cfg.lifting().rho0, 1.25);
        assert!(!cfg.deterministic);
    }

    #[test]
    fn oversized_body_names_both_fields() {
        let text = MINIMAL.replace("\"radius\": 0.5", "\"radius\": 5.0");
        let err = parse_config(&text).unwrap().validate().unwrap_err().to_string();
        assert!(err.contains("body.radius") && err.contains("grid.radius"), "{err}");
    }

    #[test]
    fn unknown_scenario_lists_valid_ones() {
        let text = MINIMAL.replace("single_equilibrium", "warp_drive");
        match parse_config(&text) {
            Err(Error::ConfigParse { line, message, .. }) => {
                assert_eq!(line, 2);
                for s in ["single_equilibrium", "lambda_sweep", "invading_sweep", "uniqueness", "bound_verification", "property_suite"] {
                    assert!(message.contains(s), "{message}");
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_config("{\n  \"scenario\": \"uniqueness\",\n  oops\n}") {
            Err(Error::ConfigParse { line, column, .. }) => assert_eq!((line, column), (3, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_violation_is_reported() {
        let text = r#"{
            "scenario": "lambda_sweep",
            "body": {"shape": "box", "half_extents": [0.2, 0.5, 0.2]},
            "grid": {"radius": 4.0, "n": 23},
            "params": {"k_torsion": -1.0, "b_tilde": [0.1, 1.0, 0.0]},
            "picard": {"damping": 1.5},
            "solver": {"tol_rel": 2.0}
        }"#;
        let errs = parse_config(text).unwrap().collect_errors();
        let joined = errs.join("\n");
        for needle in ["n must be even", "lambdas", "k_torsion", "b_tilde", "damping", "tol_rel"] {
            assert!(joined.contains(needle), "missing {needle}: {joined}");
        }
    }

    #[test]
    fn invading_needs_radii() {
        let text = MINIMAL.replace("single_equilibrium", "invading_sweep");
        let errs = parse_config(&text).unwrap().collect_errors();
        assert!(errs.iter().any(|e| e.contains("grid.radii")), "{errs:?}");
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = parse_config(MINIMAL).unwrap();
        let again = parse_config(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(serde_json::to_value(&cfg).unwrap(), serde_json::to_value(&again).unwrap());
    }
}
