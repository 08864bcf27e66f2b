//! Growing-box limit: solve on Ω_R for an increasing list of radii at a fixed
//! mesh width, extend each solution by zero to the largest box and measure how
//! fast (∇u, θ, δ) settle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{self, EquilibriumSetup, EquilibriumState, PicardOptions};
use crate::grid::{build_grid, ops, voxelize_body, BodyShape, CellMask, Grid, VectorField};
use crate::lifting::LiftingConfig;
use crate::oseen::LinearSolveOptions;
use crate::params::Params;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub radii: Vec<f64>,
    /// n = 2R·cells_per_unit must come out an even integer for every radius.
    pub cells_per_unit: f64,
    pub body: BodyShape,
    pub params: Params,
    pub lifting: LiftingConfig,
    pub picard: PicardOptions,
    pub linear: LinearSolveOptions,
}

impl SweepPlan {
    /// Cells per axis for radius R, if it is an even integer.
    pub fn cells_for(&self, radius: f64) -> Option<usize> {
        let x = 2.0 * radius * self.cells_per_unit;
        let n = x.round();
        ((x - n).abs() < 1e-9 * x.max(1.0) && n >= 2.0 && n as usize % 2 == 0).then_some(n as usize)
    }

    pub fn collect_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.radii.is_empty() {
            errs.push("radii must not be empty".into());
        }
        if self.radii.windows(2).any(|w| !(w[1] > w[0])) {
            errs.push(format!("radii must be strictly increasing (got {:?})", self.radii));
        }
        if !(self.cells_per_unit.is_finite() && self.cells_per_unit > 0.0) {
            errs.push(format!("cells_per_unit must be positive (got {})", self.cells_per_unit));
            return errs;
        }
        if let Some(&r1) = self.radii.first() {
            let need = 4.0 * self.lifting.rho0.max(self.lifting.rho_h);
            if !(r1 > need) {
                errs.push(format!("smallest radius {r1} must exceed 2*max(2*rho0, 2*rho_h) = {need}"));
            }
        }
        for &r in &self.radii {
            match self.cells_for(r) {
                None => errs.push(format!("2*R*cells_per_unit is not an even integer for R = {r}")),
                Some(n) => match build_grid(r, n) {
                    Err(e) => errs.push(format!("R = {r}: {e}")),
                    Ok(g) => {
                        if let Err(e) = self.lifting.validate(&self.body, &g) {
                            errs.push(format!("R = {r}: {e}"));
                        }
                    }
                },
            }
        }
        errs.extend(self.picard.collect_errors());
        errs.extend(self.linear.collect_errors());
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.collect_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSweep(errs.join("; ")))
        }
    }
}

/// One radius of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub radius: f64,
    pub n: usize,
    pub h: f64,
    pub converged: bool,
    pub theta: f64,
    pub delta: [f64; 3],
    pub force: [f64; 3],
    pub drag: f64,
    pub grad_norm: f64,
    /// ‖∇u_n‖₂ + |θ_n|.
    pub bound: f64,
    pub iterations: usize,
    pub wall_time: f64,
    pub error: Option<String>,
}

/// Consecutive-level differences on the common (largest) grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelDifference {
    pub radius_lo: f64,
    pub radius_hi: f64,
    pub grad_diff: f64,
    pub dtheta: f64,
    pub ddelta: f64,
    /// |drag_hi − drag_lo| / drag_hi.
    pub drag_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub levels: Vec<LevelResult>,
    pub differences: Vec<LevelDifference>,
    pub max_bound: f64,
    /// Largest divergence of a zero-extended solution on the common grid.
    pub extension_divergence: f64,
    /// Some radius failed to converge.
    pub partial: bool,
}

impl SweepReport {
    /// |θ_{n+1} − θ_n| never increases along the sweep.
    pub fn theta_differences_decrease(&self) -> bool {
        self.differences.windows(2).all(|w| w[1].dtheta <= w[0].dtheta)
    }
}

/// Embeds a field of a centered sub-box into the larger grid (same h), zero
/// outside.
pub fn extend_by_zero(v: &VectorField, small: &Grid, large: &Grid) -> Result<VectorField> {
    v.check(small)?;
    if large.n < small.n || (large.n - small.n) % 2 != 0 || (large.h - small.h).abs() > 1e-12 * large.h {
        return Err(Error::ShapeMismatch(format!(
            "cannot embed n={} (h={}) into n={} (h={})",
            small.n, small.h, large.n, large.h
        )));
    }
    let off = (large.n - small.n) / 2;
    let mut out = VectorField::zeros(large);
    for d in 0..3 {
        let sl = small.faces(d);
        let ll = large.faces(d);
        for (idx, &x) in v.comp[d].iter().enumerate() {
            let [i, j, k] = sl.coords(idx);
            out.comp[d][ll.index(i + off, j + off, k + off)] = x;
        }
    }
    Ok(out)
}

struct Level {
    result: LevelResult,
    state: Option<EquilibriumState>,
    grid: Option<Grid>,
}

fn solve_level(plan: &SweepPlan, radius: f64) -> Result<Level> {
    let n = plan.cells_for(radius).ok_or_else(|| Error::InvalidSweep(format!("no integer n for R = {radius}")))?;
    let grid = build_grid(radius, n)?;
    let mask = voxelize_body(&plan.body, &grid)?;
    let setup = EquilibriumSetup::new(&plan.params, &mask, &plan.lifting, &plan.linear)?;
    let mut result = LevelResult {
        radius,
        n,
        h: grid.h,
        converged: false,
        theta: f64::NAN,
        delta: [f64::NAN; 3],
        force: [f64::NAN; 3],
        drag: f64::NAN,
        grad_norm: f64::NAN,
        bound: f64::NAN,
        iterations: 0,
        wall_time: 0.0,
        error: None,
    };
    match equilibrium::solve_with_setup(&setup, &plan.picard) {
        Ok((state, hist)) => {
            let rep = equilibrium::recover_delta(&setup, &state)?;
            let g = ops::h1_seminorm(&state.u, &grid);
            let f = rep.hydrodynamic_force;
            result.converged = true;
            result.theta = state.theta.0;
            result.delta = rep.delta;
            result.force = f;
            result.drag = (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt();
            result.grad_norm = g;
            result.bound = g + state.theta.0.abs();
            result.iterations = hist.steps.len();
            result.wall_time = hist.wall_time;
            Ok(Level { result, state: Some(state), grid: Some(grid) })
        }
        Err(Error::PicardNonConvergence(f)) => {
            result.iterations = f.history.steps.len();
            result.wall_time = f.history.wall_time;
            result.error = Some(f.to_string());
            Ok(Level { result, state: None, grid: None })
        }
        Err(e) => Err(e),
    }
}

/// Solves every radius (in parallel on the current rayon pool) and assembles
/// the Cauchy report.
pub fn run_invading(plan: &SweepPlan) -> Result<SweepReport> {
    plan.validate()?;
    let levels: Vec<Level> = plan.radii.par_iter().map(|&r| solve_level(plan, r)).collect::<Result<_>>()?;
    let big_r = *plan.radii.last().expect("validated non-empty");
    let big = build_grid(big_r, plan.cells_for(big_r).expect("validated"))?;
    let big_mask: CellMask = voxelize_body(&plan.body, &big)?;

    let mut extended: Vec<Option<VectorField>> = Vec::with_capacity(levels.len());
    let mut ext_div = 0.0f64;
    for l in &levels {
        match (&l.state, &l.grid) {
            (Some(s), Some(g)) => {
                let e = extend_by_zero(&s.u, g, &big)?;
                ext_div = ext_div.max(ops::divergence(&e, &big, Some(&big_mask)).max_abs());
                extended.push(Some(e));
            }
            _ => extended.push(None),
        }
    }
    let mut differences = Vec::new();
    for i in 1..levels.len() {
        let (a, b) = (&levels[i - 1].result, &levels[i].result);
        let grad_diff = match (&extended[i - 1], &extended[i]) {
            (Some(x), Some(y)) => {
                let mut d = y.clone();
                d.axpy(-1.0, x);
                ops::h1_seminorm(&d, &big)
            }
            _ => f64::NAN,
        };
        let ddelta = (0..3).map(|j| (b.delta[j] - a.delta[j]).powi(2)).sum::<f64>().sqrt();
        differences.push(LevelDifference {
            radius_lo: a.radius,
            radius_hi: b.radius,
            grad_diff,
            dtheta: (b.theta - a.theta).abs(),
            ddelta,
            drag_rel: (b.drag - a.drag).abs() / b.drag,
        });
    }
    let results: Vec<LevelResult> = levels.into_iter().map(|l| l.result).collect();
    let partial = results.iter().any(|r| !r.converged);
    let max_bound = results.iter().filter(|r| r.converged).map(|r| r.bound).fold(0.0, f64::max);
    Ok(SweepReport { levels: results, differences, max_bound, extension_divergence: ext_div, partial })
}
