//! Scenario orchestration behind `fsieq run`: builds the cases of a
//! [`RunConfig`], solves them on a worker pool and writes the artifacts.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{self, BoundSample, StartOutcome};
use crate::config::{RunConfig, Scenario, StartInit};
use crate::equilibrium::{self, ConvergenceHistory, EquilibriumSetup, EquilibriumState, PicardInit, PicardOptions};
use crate::grid::{build_grid, voxelize_body, CellMask};
use crate::invading;
use crate::io::{fmt_f64, ArtifactWriter, Csv, Manifest};
use crate::verify;
use crate::{Error, Result};

/// Exit status of a run that did not hit a tool error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RunStatus {
    Success,
    /// Some physics case did not converge; reported in the artifacts.
    Partial,
}

impl RunStatus {
    pub fn code(self) -> i32 {
        match self {
            RunStatus::Success => 0,
            RunStatus::Partial => 2,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output_dir` of the config.
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    /// Forces deterministic mode on top of the config flag.
    pub deterministic: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub dir: PathBuf,
    pub manifest: Manifest,
}

/// Validates, runs the scenario on a dedicated pool and writes the manifest.
/// Deterministic mode uses one worker; every CSV is free of timings either
/// way, so identical inputs give identical CSV bytes.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let deterministic = cfg.deterministic || opts.deterministic;
    let threads = if deterministic { 1 } else { opts.threads.unwrap_or(0) };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let dir = opts.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let mut writer = ArtifactWriter::new(&dir)?;
    let scenario = serde_json::to_value(cfg.scenario)?.as_str().unwrap_or_default().to_string();
    let mut manifest = Manifest::new(&scenario, serde_json::to_value(cfg)?, cfg.seed, deterministic, pool.current_num_threads());
    let status = pool.install(|| match cfg.scenario {
        Scenario::SingleEquilibrium => single(cfg, &mut writer),
        Scenario::LambdaSweep => lambda_sweep(cfg, &mut writer),
        Scenario::InvadingSweep => invading_sweep(cfg, &mut writer),
        Scenario::Uniqueness => uniqueness(cfg, &mut writer),
        Scenario::BoundVerification => bounds(cfg, &mut writer, &mut manifest.notes),
        Scenario::PropertySuite => properties(cfg, &mut writer),
    })?;
    manifest.status = status.code();
    let manifest = writer.finish(manifest)?;
    Ok(RunOutcome { status, dir, manifest })
}

fn mask_for(cfg: &RunConfig) -> Result<CellMask> {
    let (r, n) = cfg.single_grid()?;
    voxelize_body(&cfg.body, &build_grid(r, n)?)
}

/// Converged state or the failure message, with the history either way.
type Solved = (std::result::Result<EquilibriumState, String>, ConvergenceHistory);

fn solve_case(setup: &EquilibriumSetup<'_>, opts: &PicardOptions) -> Result<Solved> {
    match equilibrium::solve_with_setup(setup, opts) {
        Ok((s, h)) => Ok((Ok(s), h)),
        Err(Error::PicardNonConvergence(f)) => Ok((Err(f.to_string()), f.history.clone())),
        Err(e) => Err(e),
    }
}

fn history_csv(h: &ConvergenceHistory) -> Csv {
    let mut csv = Csv::new(&[
        "iter",
        "grad_norm",
        "theta",
        "du",
        "du_rel",
        "dtheta",
        "torque",
        "linear_iters",
        "residual_momentum",
        "residual_divergence",
    ]);
    for s in &h.steps {
        csv.push(vec![
            s.iter.to_string(),
            fmt_f64(s.grad_norm),
            fmt_f64(s.theta),
            fmt_f64(s.du),
            fmt_f64(s.du_rel),
            fmt_f64(s.dtheta),
            fmt_f64(s.torque),
            s.linear_iters.to_string(),
            fmt_f64(s.residual_momentum),
            fmt_f64(s.residual_divergence),
        ]);
    }
    csv
}

fn single(cfg: &RunConfig, w: &mut ArtifactWriter) -> Result<RunStatus> {
    let mask = mask_for(cfg)?;
    let params = cfg.params_at(cfg.params.lambda)?;
    let setup = EquilibriumSetup::new(&params, &mask, &cfg.lifting(), &cfg.solver)?;
    let (res, hist) = solve_case(&setup, &cfg.picard.options(params.lambda))?;
    w.write_csv("history.csv", &history_csv(&hist))?;
    let status = match &res {
        Ok(state) => {
            let rep = equilibrium::recover_delta(&setup, state)?;
            let grid = mask.grid;
            w.write_json(
                "summary.json",
                &serde_json::json!({
                    "converged": true,
                    "lambda": params.lambda,
                    "theta": state.theta.0,
                    "delta": rep.delta,
                    "loads": rep,
                    "grad_norm": crate::grid::ops::h1_seminorm(&state.u, &grid),
                    "iterations": hist.steps.len(),
                    "fixed_point_residual_u": hist.fixed_point_residual_u,
                    "fixed_point_residual_theta": hist.fixed_point_residual_theta,
                    "wall_time": hist.wall_time,
                }),
            )?;
            if cfg.dump_fields {
                w.dump_vector("perturbation_u.bin", &state.u, &grid)?;
                w.dump_vector("velocity_v.bin", &setup.physical_velocity(state), &grid)?;
                w.dump_scalar("pressure.bin", &state.p, &grid)?;
            }
            RunStatus::Success
        }
        Err(msg) => {
            w.write_json(
                "summary.json",
                &serde_json::json!({"converged": false, "lambda": params.lambda, "error": msg, "iterations": hist.steps.len()}),
            )?;
            RunStatus::Partial
        }
    };
    Ok(status)
}

#[derive(Debug, Serialize)]
struct SweepPoint {
    lambda: f64,
    converged: bool,
    theta: f64,
    delta: [f64; 3],
    drag: f64,
    grad_norm: f64,
    iterations: usize,
    contraction_rate: Option<f64>,
    fixed_point_residual_u: f64,
    error: Option<String>,
}

/// Relative H¹ changes below this are dominated by the linear solves.
fn contraction_floor(cfg: &RunConfig) -> f64 {
    (100.0 * cfg.solver.tol_rel).max(10.0 * cfg.picard.tol_u)
}

fn lambda_sweep(cfg: &RunConfig, w: &mut ArtifactWriter) -> Result<RunStatus> {
    let mask = mask_for(cfg)?;
    let lifting = cfg.lifting();
    let floor = contraction_floor(cfg);
    let points: Vec<SweepPoint> = cfg
        .lambdas
        .par_iter()
        .map(|&l| -> Result<SweepPoint> {
            let params = cfg.params_at(l)?;
            let setup = EquilibriumSetup::new(&params, &mask, &lifting, &cfg.solver)?;
            let (res, hist) = solve_case(&setup, &cfg.picard.options(l))?;
            let rate = analysis::contraction_rate(&hist, floor);
            Ok(match res {
                Ok(s) => {
                    let rep = equilibrium::recover_delta(&setup, &s)?;
                    let f = rep.hydrodynamic_force;
                    SweepPoint {
                        lambda: l,
                        converged: true,
                        theta: s.theta.0,
                        delta: rep.delta,
                        drag: (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt(),
                        grad_norm: crate::grid::ops::h1_seminorm(&s.u, &mask.grid),
                        iterations: hist.steps.len(),
                        contraction_rate: rate,
                        fixed_point_residual_u: hist.fixed_point_residual_u,
                        error: None,
                    }
                }
                Err(msg) => SweepPoint {
                    lambda: l,
                    converged: false,
                    theta: f64::NAN,
                    delta: [f64::NAN; 3],
                    drag: f64::NAN,
                    grad_norm: f64::NAN,
                    iterations: hist.steps.len(),
                    contraction_rate: rate,
                    fixed_point_residual_u: f64::NAN,
                    error: Some(msg),
                },
            })
        })
        .collect::<Result<_>>()?;
    let mut csv = Csv::new(&[
        "lambda",
        "status",
        "theta",
        "delta_0",
        "delta_1",
        "delta_2",
        "drag",
        "grad_norm",
        "iterations",
        "contraction_rate",
        "fixed_point_residual_u",
    ]);
    for p in &points {
        csv.push(vec![
            fmt_f64(p.lambda),
            if p.converged { "converged" } else { "diverged" }.into(),
            fmt_f64(p.theta),
            fmt_f64(p.delta[0]),
            fmt_f64(p.delta[1]),
            fmt_f64(p.delta[2]),
            fmt_f64(p.drag),
            fmt_f64(p.grad_norm),
            p.iterations.to_string(),
            fmt_f64(p.contraction_rate.unwrap_or(f64::NAN)),
            fmt_f64(p.fixed_point_residual_u),
        ]);
    }
    w.write_csv("sweep.csv", &csv)?;
    let rates: Vec<(f64, f64)> = points.iter().filter_map(|p| p.contraction_rate.map(|r| (p.lambda, r))).collect();
    let small: Vec<(f64, f64)> = rates.iter().copied().filter(|(l, _)| *l <= 0.1).collect();
    w.write_json(
        "sweep.json",
        &serde_json::json!({
            "points": points,
            "contraction_fit_small_lambda": analysis::fit_power_law(&small),
            "contraction_constant": analysis::contraction_constant(&rates),
            "contraction_monotone": rates.windows(2).all(|p| p[1].1 >= p[0].1),
        }),
    )?;
    Ok(if points.iter().all(|p| p.converged) { RunStatus::Success } else { RunStatus::Partial })
}

fn invading_sweep(cfg: &RunConfig, w: &mut ArtifactWriter) -> Result<RunStatus> {
    let rep = invading::run_invading(&cfg.sweep_plan()?)?;
    let mut csv = Csv::new(&[
        "radius",
        "n",
        "h",
        "status",
        "theta",
        "delta_0",
        "delta_1",
        "delta_2",
        "drag",
        "grad_norm",
        "bound",
        "iterations",
    ]);
    for l in &rep.levels {
        csv.push(vec![
            fmt_f64(l.radius),
            l.n.to_string(),
            fmt_f64(l.h),
            if l.converged { "converged" } else { "diverged" }.into(),
            fmt_f64(l.theta),
            fmt_f64(l.delta[0]),
            fmt_f64(l.delta[1]),
            fmt_f64(l.delta[2]),
            fmt_f64(l.drag),
            fmt_f64(l.grad_norm),
            fmt_f64(l.bound),
            l.iterations.to_string(),
        ]);
    }
    w.write_csv("invading.csv", &csv)?;
    w.write_json("invading.json", &rep)?;
    Ok(if rep.partial { RunStatus::Partial } else { RunStatus::Success })
}

fn start_options(cfg: &RunConfig, lambda: f64) -> Vec<(String, PicardOptions)> {
    cfg.uniqueness
        .starts
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let init = match s.init {
                StartInit::Zero => PicardInit::Zero,
                StartInit::Stokes => PicardInit::Stokes,
                StartInit::PerturbedStokes { amplitude } => {
                    PicardInit::PerturbedStokes { amplitude, seed: cfg.seed.wrapping_add(i as u64) }
                }
            };
            (s.label.clone(), PicardOptions { init, theta0: s.theta0, ..cfg.picard.options(lambda) })
        })
        .collect()
}

fn run_starts(cfg: &RunConfig, mask: &CellMask, lambda: f64) -> Result<analysis::DispersionReport> {
    let params = cfg.params_at(lambda)?;
    let setup = EquilibriumSetup::new(&params, mask, &cfg.lifting(), &cfg.solver)?;
    let outcomes: Vec<StartOutcome> = start_options(cfg, lambda)
        .into_par_iter()
        .map(|(label, opts)| -> Result<StartOutcome> {
            let (res, history) = solve_case(&setup, &opts)?;
            Ok(match res {
                Ok(s) => StartOutcome { label, state: Some(s), history, error: None },
                Err(e) => StartOutcome { label, state: None, history, error: Some(e) },
            })
        })
        .collect::<Result<_>>()?;
    Ok(analysis::dispersion(lambda, &outcomes, mask, cfg.uniqueness.tol_theta, cfg.uniqueness.tol_u))
}

fn uniqueness(cfg: &RunConfig, w: &mut ArtifactWriter) -> Result<RunStatus> {
    let mask = mask_for(cfg)?;
    let rep = run_starts(cfg, &mask, cfg.params.lambda)?;
    let mut csv = Csv::new(&["label", "status", "theta", "delta_0", "delta_1", "delta_2", "grad_norm", "iterations"]);
    for s in &rep.starts {
        csv.push(vec![
            s.label.clone(),
            if s.converged { "converged" } else { "diverged" }.into(),
            fmt_f64(s.theta),
            fmt_f64(s.delta[0]),
            fmt_f64(s.delta[1]),
            fmt_f64(s.delta[2]),
            fmt_f64(s.grad_norm),
            s.iterations.to_string(),
        ]);
    }
    w.write_csv("dispersion.csv", &csv)?;
    let labels: Vec<&str> = rep.starts.iter().map(|s| s.label.as_str()).collect();
    let mut header = vec!["label"];
    header.extend(&labels);
    let mut matrix = Csv::new(&header);
    for (i, row) in rep.theta_matrix.iter().enumerate() {
        let mut r = vec![labels[i].to_string()];
        r.extend(row.iter().map(|x| fmt_f64(*x)));
        matrix.push(r);
    }
    w.write_csv("dispersion_matrix.csv", &matrix)?;
    w.write_json("dispersion.json", &rep)?;
    if let Some(b) = cfg.uniqueness.bisect {
        let mut log = Vec::new();
        let (lo, hi) = analysis::bisect_threshold(b.lo, b.hi, b.steps, |l| {
            let r = run_starts(cfg, &mask, l);
            let pass = matches!(&r, Ok(r) if r.pass);
            log.push(serde_json::json!({
                "lambda": l,
                "pass": pass,
                "max_dtheta": r.as_ref().ok().map(|r| r.max_dtheta),
                "max_dgrad_rel": r.as_ref().ok().map(|r| r.max_dgrad_rel),
                "all_converged": r.as_ref().ok().map(|r| r.all_converged),
                "error": r.as_ref().err().map(|e| e.to_string()),
            }));
            pass
        });
        log.push(serde_json::json!({"lambda0_bracket": [lo, hi]}));
        w.write_json_lines("bisection.jsonl", &log)?;
    }
    Ok(if rep.all_converged { RunStatus::Success } else { RunStatus::Partial })
}

fn bounds(cfg: &RunConfig, w: &mut ArtifactWriter, notes: &mut Vec<String>) -> Result<RunStatus> {
    let mask = mask_for(cfg)?;
    let lifting = cfg.lifting();
    let grid = mask.grid;
    let key = (grid.n, grid.radius);
    let s = cfg.bounds.s;
    let solved: Vec<(f64, Option<(BoundSample, crate::grid::VectorField)>)> = cfg
        .lambdas
        .par_iter()
        .map(|&l| -> Result<_> {
            let params = cfg.params_at(l)?;
            let setup = EquilibriumSetup::new(&params, &mask, &lifting, &cfg.solver)?;
            let (res, _) = solve_case(&setup, &cfg.picard.options(l))?;
            Ok((
                l,
                match res {
                    Ok(state) => {
                        // v + b = u + V(b)
                        let mut vb = setup.basis.lifting(setup.direction(state.theta));
                        vb.axpy(1.0, &state.u);
                        let q = analysis::bound_norms(&vb, l, s, &mask)?;
                        Some((BoundSample { lambda: l, grid_key: key, quantities: q }, vb))
                    }
                    Err(_) => None,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let samples: Vec<BoundSample> = solved.iter().filter_map(|(_, x)| x.as_ref().map(|x| x.0)).collect();
    let mut csv = Csv::new(&["lambda", "status", "grad_v_2", "a1_v_plus_b_4", "a2_grad_v_r"]);
    for (l, x) in &solved {
        let q = x.as_ref().map(|x| x.0.quantities.as_array()).unwrap_or([f64::NAN; 3]);
        csv.push(vec![
            fmt_f64(*l),
            if x.is_some() { "converged" } else { "diverged" }.into(),
            fmt_f64(q[0]),
            fmt_f64(q[1]),
            fmt_f64(q[2]),
        ]);
    }
    w.write_csv("bounds.csv", &csv)?;
    if !samples.is_empty() {
        let fit = analysis::verify_affine_bounds(&samples, cfg.bounds.stability)?;
        w.write_json("bound_fit.json", &fit)?;
    }
    if let Some((_, Some((_, vb)))) = solved.iter().rev().find(|(_, x)| x.is_some()) {
        let shells = analysis::shell_averages(vb, &mask, 2.0 * lifting.rho0, grid.h);
        let mut sc = Csv::new(&["radius", "mean_abs_v_plus_b"]);
        for (r, m) in &shells {
            sc.push(vec![fmt_f64(*r), fmt_f64(*m)]);
        }
        w.write_csv("shell_decay.csv", &sc)?;
        notes.push(format!(
            "far-field membership is probed by shell averages of |v+b| beyond 2*rho0 on the truncated box (monotone: {})",
            analysis::is_monotone_decreasing(&shells)
        ));
    }
    Ok(if samples.len() == cfg.lambdas.len() { RunStatus::Success } else { RunStatus::Partial })
}

fn properties(cfg: &RunConfig, w: &mut ArtifactWriter) -> Result<RunStatus> {
    let checks = verify::property_suite(&cfg.suite)?;
    let mut csv = Csv::new(&["name", "value", "threshold", "pass"]);
    for c in &checks {
        csv.push(vec![c.name.clone(), fmt_f64(c.value), fmt_f64(c.threshold), c.pass.to_string()]);
    }
    w.write_csv("properties.csv", &csv)?;
    Ok(if checks.iter().all(|c| c.pass) { RunStatus::Success } else { RunStatus::Partial })
}

/// Built-in configuration of `fsieq props`.
pub fn property_suite_config(out: &Path) -> RunConfig {
    crate::config::parse_config(&format!(
        r#"{{"scenario": "property_suite", "body": {{"shape": "sphere", "radius": 0.5}}, "output_dir": {}}}"#,
        serde_json::to_string(&out.to_string_lossy()).expect("string")
    ))
    .expect("built-in configuration parses")
}
