//! Subcommand implementations and artifact writers. Every run emits a
//! manifest (a re-runnable config echo) and a flat `summary.json`; path
//! commands add `path.csv` (t,psi,phi) and ensemble commands `mean.csv`
//! (t,mean_x,mean_y). All floats are printed at 17 significant digits.

use std::fs;
use std::path::{Path, PathBuf};

use ompath::fbm::Regime;
use ompath::grid::GridFn;
use ompath::montecarlo::{
    om_ratio_experiment, simulate_ensemble, small_ball_diagnostic, tube_probability,
    EnsembleSpec, TubeMode,
};
use ompath::mpp::{minimize_om, noiseless_shoot, solve_el_bvp, MppInit, MppProblem, MppSolution};
use ompath::omfunctional::{check_assumption_a, PathPair, QuarticDoubleWell};
use ompath::{OmError, Result};
use serde_json::{json, Map, Value};

use crate::config::{PolyPotential, RunConfig};

pub type Summary = Map<String, Value>;

/// 17 significant digits, enough to round-trip an f64 exactly.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(cfg.out.as_deref().unwrap_or("ompath-out"));
    fs::create_dir_all(&dir)
        .map_err(|e| OmError::invalid(format!("cannot create output dir: {e}")))?;
    Ok(dir)
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<()> {
    fs::write(dir.join(name), content)
        .map_err(|e| OmError::invalid(format!("cannot write {name}: {e}")))
}

fn write_csv(dir: &Path, name: &str, header: &str, columns: &[&GridFn]) -> Result<()> {
    let n = columns[0].len();
    let mut text = String::from(header);
    text.push('\n');
    for i in 0..n {
        let t = columns[0].grid().node(i);
        text.push_str(&fmt(t));
        for c in columns {
            text.push(',');
            text.push_str(&fmt(c.values()[i]));
        }
        text.push('\n');
    }
    write_file(dir, name, &text)
}

fn write_path_csv(dir: &Path, name: &str, path: &PathPair) -> Result<()> {
    write_csv(dir, name, "t,psi,phi", &[path.psi(), path.phi()])
}

fn finish(cfg: &RunConfig, command: &str, dir: &Path, summary: Summary) -> Result<()> {
    let mut echo = cfg.clone();
    echo.command = Some(command.to_string());
    echo.version = Some(env!("CARGO_PKG_VERSION").to_string());
    echo.out = Some(dir.to_string_lossy().into_owned());
    let manifest = toml::to_string(&echo)
        .map_err(|e| OmError::invalid(format!("manifest serialization failed: {e}")))?;
    write_file(dir, "manifest.toml", &manifest)?;
    let text = serde_json::to_string_pretty(&Value::Object(summary))
        .map_err(|e| OmError::invalid(format!("summary serialization failed: {e}")))?;
    write_file(dir, "summary.json", &text)
}

fn mpp_entries(prefix: &str, sol: &MppSolution, summary: &mut Summary) {
    summary.insert(format!("{prefix}j"), json!(sol.j.j));
    summary.insert(format!("{prefix}mismatch_term"), json!(sol.j.mismatch_term));
    summary.insert(
        format!("{prefix}divergence_term"),
        json!(sol.j.divergence_term),
    );
    summary.insert(format!("{prefix}iterations"), json!(sol.iterations));
    summary.insert(format!("{prefix}grad_norm"), json!(sol.grad_norm));
    summary.insert(format!("{prefix}converged"), json!(sol.converged));
    summary.insert(format!("{prefix}starts_tried"), json!(sol.starts_tried));
    summary.insert(
        format!("{prefix}penalty_residual"),
        json!(sol.penalty_residual),
    );
}

fn linf(a: &GridFn, b: &GridFn) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max)
}

pub fn cmd_check(cfg: &RunConfig) -> Result<i32> {
    let model = cfg.model_unchecked()?;
    let hurst = cfg.hurst()?;
    let beta = cfg.beta_or_default()?;
    let report = check_assumption_a(&model, hurst, beta);
    println!(
        "assumption A: {}",
        if report.pass { "PASS" } else { "FAIL" }
    );
    if let Some(r) = report.ratio {
        println!("contraction ratio: {}", fmt(r));
    }
    println!("beta in norm window: {}", report.beta_in_window);
    for reason in &report.reasons {
        println!("note: {reason}");
    }
    if cfg.out.is_some() {
        let dir = out_dir(cfg)?;
        let mut summary = Summary::new();
        summary.insert("pass".into(), json!(report.pass));
        summary.insert("ratio".into(), json!(report.ratio));
        summary.insert("beta".into(), json!(beta));
        summary.insert("beta_in_window".into(), json!(report.beta_in_window));
        summary.insert("reasons".into(), json!(report.reasons.join("; ")));
        finish(cfg, "check", &dir, summary)?;
    }
    Ok(if report.pass { 0 } else { 1 })
}

/// Direct minimization; at H = 1/2 with a constant-sigma potential system
/// the Euler-Lagrange boundary-value solve runs as a cross-check.
fn run_mpp(cfg: &RunConfig, dir: &Path, summary: &mut Summary) -> Result<i32> {
    let model = cfg.model()?;
    let hurst = cfg.hurst()?;
    let boundary = cfg.boundary()?;
    let grid = cfg.grid()?;
    let problem = MppProblem {
        model: model.clone(),
        hurst,
        boundary,
        grid: grid.clone(),
        init: MppInit::Multistart(3),
        seed: cfg.seed,
    };
    let sol = minimize_om(&problem)?;
    write_path_csv(dir, "path.csv", &sol.path)?;
    mpp_entries("", &sol, summary);
    summary.insert("h".into(), json!(cfg.h));
    if let Ok(reference) = noiseless_shoot(&model, cfg.x0, cfg.y0, &grid) {
        summary.insert(
            "l_inf_to_noiseless".into(),
            json!(linf(sol.path.psi(), reference.psi())),
        );
    }
    let mut all_converged = sol.converged;
    let is_standard = hurst.regime() == Regime::Standard;
    let sigma_constant = cfg.sigma == "constant" || cfg.amp == 0.0;
    if is_standard && sigma_constant {
        let bvp = match cfg.force.as_str() {
            "duffing" => Some(solve_el_bvp(
                QuarticDoubleWell,
                cfg.gamma,
                cfg.sigma0,
                boundary,
                &grid,
                &sol.path,
            )?),
            "poly" => Some(solve_el_bvp(
                PolyPotential {
                    c: cfg.coeffs.clone(),
                },
                cfg.gamma,
                cfg.sigma0,
                boundary,
                &grid,
                &sol.path,
            )?),
            _ => None,
        };
        if let Some(bvp) = bvp {
            write_path_csv(dir, "path_bvp.csv", &bvp.path)?;
            mpp_entries("bvp_", &bvp, summary);
            let gap = (bvp.j.j - sol.j.j).abs() / (1.0 + sol.j.j.abs());
            summary.insert("j_gap_relative".into(), json!(gap));
            summary.insert(
                "l_inf_between_solvers".into(),
                json!(linf(sol.path.psi(), bvp.path.psi())),
            );
            all_converged = all_converged && bvp.converged;
        }
    }
    println!("j = {}", fmt(sol.j.j));
    println!("converged: {all_converged}");
    Ok(if all_converged { 0 } else { 1 })
}

pub fn cmd_mpp(cfg: &RunConfig) -> Result<i32> {
    let dir = out_dir(cfg)?;
    let mut summary = Summary::new();
    let code = run_mpp(cfg, &dir, &mut summary)?;
    finish(cfg, "mpp", &dir, summary)?;
    Ok(code)
}

fn ensemble_spec(cfg: &RunConfig) -> Result<EnsembleSpec> {
    EnsembleSpec::new(
        cfg.model()?,
        cfg.hurst()?,
        cfg.x0,
        cfg.y0,
        cfg.n - 1,
        cfg.n_paths,
        cfg.seed,
    )
}

fn run_simulate(cfg: &RunConfig, dir: &Path, summary: &mut Summary) -> Result<i32> {
    let spec = ensemble_spec(cfg)?;
    let res = simulate_ensemble(&spec)?;
    write_csv(dir, "mean.csv", "t,mean_x,mean_y", &[&res.mean_x, &res.mean_y])?;
    summary.insert("seed".into(), json!(res.provenance.seed));
    summary.insert("n_paths".into(), json!(res.provenance.n_paths));
    summary.insert("diverged".into(), json!(res.provenance.diverged));
    summary.insert("method".into(), json!(res.provenance.method));
    println!(
        "simulated {} paths ({} diverged) via {}",
        res.provenance.n_paths, res.provenance.diverged, res.provenance.method
    );
    Ok(0)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<i32> {
    let dir = out_dir(cfg)?;
    let mut summary = Summary::new();
    let code = run_simulate(cfg, &dir, &mut summary)?;
    finish(cfg, "simulate", &dir, summary)?;
    Ok(code)
}

fn tube_mode(cfg: &RunConfig) -> Result<TubeMode> {
    match cfg.tube_mode.as_str() {
        "position" => Ok(TubeMode::PositionNorm),
        "path" => Ok(TubeMode::PathSeminorm),
        "noise" => Ok(TubeMode::NoiseNorm),
        other => Err(OmError::invalid(format!(
            "unknown tube mode '{other}' (position | path | noise)"
        ))),
    }
}

fn merge_report(summary: &mut Summary, report: Value) {
    if let Value::Object(map) = report {
        for (k, v) in map {
            summary.insert(k, v);
        }
    }
}

pub fn cmd_tube(cfg: &RunConfig) -> Result<i32> {
    let epsilon = cfg
        .epsilon
        .ok_or_else(|| OmError::invalid("tube needs an epsilon key"))?;
    let beta = cfg.beta_or_default()?;
    let spec = ensemble_spec(cfg)?;
    let center = cfg.reference_path(&cfg.center, &spec.model)?;
    let est = tube_probability(&spec, &center, epsilon, beta, tube_mode(cfg)?)?;
    println!(
        "p_hat = {} ({} / {} hits, 95% CI [{}, {}])",
        fmt(est.p_hat),
        est.hits,
        est.trials,
        fmt(est.wilson_low),
        fmt(est.wilson_high)
    );
    let dir = out_dir(cfg)?;
    let mut summary = Summary::new();
    summary.insert("center".into(), json!(cfg.center));
    summary.insert("seed".into(), json!(cfg.seed));
    merge_report(&mut summary, serde_json::to_value(&est).unwrap());
    finish(cfg, "tube", &dir, summary)?;
    Ok(0)
}

pub fn cmd_ratio(cfg: &RunConfig) -> Result<i32> {
    let epsilon = cfg
        .epsilon
        .ok_or_else(|| OmError::invalid("ratio needs an epsilon key"))?;
    let beta = cfg.beta_or_default()?;
    let spec = ensemble_spec(cfg)?;
    let p1 = cfg.reference_path(&cfg.path1, &spec.model)?;
    let p2 = cfg.reference_path(&cfg.path2, &spec.model)?;
    let rep = om_ratio_experiment(&spec, &p1, &p2, epsilon, beta)?;
    if rep.inconclusive {
        println!(
            "inconclusive: hits {} / {} at epsilon = {}",
            rep.hits1, rep.hits2, epsilon
        );
    } else {
        println!(
            "log ratio = {} (se {}), delta J = {}",
            fmt(rep.log_ratio_mc),
            fmt(rep.se_log_ratio),
            fmt(rep.delta_j)
        );
    }
    let dir = out_dir(cfg)?;
    let mut summary = Summary::new();
    summary.insert("path1".into(), json!(cfg.path1));
    summary.insert("path2".into(), json!(cfg.path2));
    summary.insert("seed".into(), json!(cfg.seed));
    merge_report(&mut summary, serde_json::to_value(&rep).unwrap());
    finish(cfg, "ratio", &dir, summary)?;
    Ok(0)
}

pub fn cmd_smallball(cfg: &RunConfig) -> Result<i32> {
    if cfg.radii.is_empty() {
        return Err(OmError::invalid("smallball needs a radii list"));
    }
    let beta = cfg.beta_or_default()?;
    let spec = ensemble_spec(cfg)?;
    let rep = small_ball_diagnostic(&spec, beta, &cfg.radii)?;
    println!("fitted slope = {}", fmt(rep.slope_fit));
    let dir = out_dir(cfg)?;
    let mut summary = Summary::new();
    summary.insert("beta".into(), json!(beta));
    summary.insert("seed".into(), json!(cfg.seed));
    summary.insert("slope_fit".into(), json!(rep.slope_fit));
    summary.insert("intercept_fit".into(), json!(rep.intercept_fit));
    summary.insert("dropped".into(), json!(rep.dropped));
    for (i, p) in rep.points.iter().enumerate() {
        summary.insert(format!("point{i}_epsilon"), json!(p.epsilon));
        summary.insert(format!("point{i}_x"), json!(p.x));
        summary.insert(format!("point{i}_p_hat"), json!(p.p_hat));
        summary.insert(format!("point{i}_hits"), json!(p.hits));
        summary.insert(format!("point{i}_trials"), json!(p.trials));
    }
    finish(cfg, "smallball", &dir, summary)?;
    Ok(0)
}

/// Canned end-to-end experiments on the two reference systems.
pub fn cmd_example(which: &str, base: &RunConfig) -> Result<i32> {
    let mut cfg = base.clone();
    match which {
        "pendulum" => {
            cfg.force = "pendulum".into();
            cfg.k = None;
            cfg.sigma = "cos".into();
            cfg.sigma0 = 2.0;
            cfg.amp = 1.5;
            cfg.omega = 10.0;
            cfg.h = 0.3;
            cfg.n = 129;
            cfg.x0 = -std::f64::consts::FRAC_PI_2;
            cfg.y0 = 0.0;
            cfg.x1 = Some(std::f64::consts::FRAC_PI_2);
            cfg.y1 = Some(0.0);
            let dir = out_dir(&cfg)?;
            let mut summary = Summary::new();
            let code = run_mpp(&cfg, &dir, &mut summary)?;
            run_simulate(&cfg, &dir, &mut summary)?;
            finish(&cfg, "example pendulum", &dir, summary)?;
            Ok(code)
        }
        "duffing" => {
            cfg.force = "duffing".into();
            cfg.gamma = 0.1;
            cfg.sigma = "constant".into();
            cfg.sigma0 = 3.0;
            cfg.amp = 0.0;
            cfg.h = 0.5;
            cfg.n = 129;
            cfg.x0 = -1.0;
            cfg.y0 = 0.0;
            cfg.x1 = Some(1.0);
            cfg.y1 = Some(0.0);
            let dir = out_dir(&cfg)?;
            let mut summary = Summary::new();
            let code = run_mpp(&cfg, &dir, &mut summary)?;
            finish(&cfg, "example duffing", &dir, summary)?;
            Ok(code)
        }
        other => Err(OmError::invalid(format!(
            "unknown example '{other}' (pendulum | duffing)"
        ))),
    }
}
