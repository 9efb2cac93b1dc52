//! One function per subcommand. Each writes its outputs under `output_dir` and
//! returns the exit class on failure.

use std::path::{Path, PathBuf};

use serde::Serialize;
use tailtilt_core::diagnostics::{count_violations, default_sweep, distances, monotone_in_delta, sensitivity_sweep};
use tailtilt_core::distributions::{kde_pdf_1d, sample_prior};
use tailtilt_core::fdc::run_fdc_from;
use tailtilt_core::io;
use tailtilt_core::pipeline::comparison_table;
use tailtilt_core::risk::inverse_cdf;
use tailtilt_core::threshold::{default_tolerance, solve_biased_sgd, solve_golden_section, solve_pgd, SgdConfig};
use tailtilt_core::tilt::{grid_target, tail_mass, tilt_samples};
use tailtilt_core::{
    EmpiricalDistribution, RiskReport, SampleSet, TailMode, ThresholdProblem, ThresholdResult, TiltMode, TiltSpec,
};

use crate::config::{ExperimentConfig, FdcStart, SolverConfig};
use crate::exit::CliError;

pub type CmdResult = Result<(), CliError>;

fn out(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

pub fn prior_samples(cfg: &ExperimentConfig) -> Result<SampleSet, CliError> {
    Ok(sample_prior(&cfg.prior, cfg.n_samples, cfg.seed)?.with_rewards(&cfg.reward))
}

/// Run the configured solver on `problem`.
pub fn solve(problem: &ThresholdProblem, cfg: &ExperimentConfig) -> Result<ThresholdResult, CliError> {
    let res = match &cfg.solver {
        SolverConfig::Golden { tol } => {
            solve_golden_section(problem, tol.unwrap_or_else(|| default_tolerance(problem)))?
        }
        SolverConfig::Pgd { step, iters } => {
            let step = step.unwrap_or_else(|| 1.0 / (4.0 * problem.smoothness_constant()));
            solve_pgd(problem, step, *iters)?
        }
        SolverConfig::Sgd {
            batch_size,
            iters,
            step,
            replacement,
        } => {
            let mut sgd = SgdConfig::new(*batch_size, *iters, cfg.seed);
            sgd.step = *step;
            sgd.replacement = *replacement;
            solve_biased_sgd(problem, &sgd)?
        }
    };
    Ok(res)
}

#[derive(Serialize)]
struct QuantileCheck {
    /// Tilted mass strictly beyond `t_star` on the tail side.
    tail_mass: f64,
    level: f64,
    abs_error: f64,
}

#[derive(Serialize)]
struct Stage1Output<'a> {
    mode: TailMode,
    alpha: f64,
    beta: f64,
    seed: u64,
    n_samples: usize,
    t_star: f64,
    objective: f64,
    gradient_at_star: f64,
    method: tailtilt_core::Method,
    iterations: usize,
    averaged_iterate: Option<f64>,
    final_iterate: f64,
    quantile_check: QuantileCheck,
    warnings: &'a [String],
}

fn tail_level(mode: TailMode, beta: f64) -> f64 {
    match mode {
        TailMode::Right => 1.0 - beta,
        TailMode::Left => beta,
    }
}

fn quantile_check(samples: &SampleSet, spec: &TiltSpec, mode: TailMode) -> Result<QuantileCheck, CliError> {
    let tilted = tilt_samples(samples, spec)?.samples;
    let dist = EmpiricalDistribution::new(tilted.rewards()?, Some(&tilted.weights()))?;
    let m = tail_mass(&dist, spec.t_star, mode);
    let level = tail_level(mode, spec.beta);
    Ok(QuantileCheck {
        tail_mass: m,
        level,
        abs_error: (m - level).abs(),
    })
}

pub fn stage1(cfg: &ExperimentConfig) -> CmdResult {
    let mode = cfg.tail_mode("stage1")?;
    let samples = prior_samples(cfg)?;
    let problem = ThresholdProblem::from_samples(mode, cfg.alpha, cfg.beta, &samples)?;
    let res = solve(&problem, cfg)?;
    warn_all(&res.warnings);
    if !res.t_star.is_finite() {
        return Err(CliError::Numeric(format!("solver returned t* = {}", res.t_star)));
    }
    let spec = TiltSpec::new(mode.into(), cfg.alpha, cfg.beta, res.t_star)?;
    let check = quantile_check(&samples, &spec, mode)?;
    let output = Stage1Output {
        mode,
        alpha: cfg.alpha,
        beta: cfg.beta,
        seed: cfg.seed,
        n_samples: cfg.n_samples,
        t_star: res.t_star,
        objective: res.objective_value,
        gradient_at_star: res.gradient_at_star,
        method: res.method,
        iterations: res.iterations,
        averaged_iterate: res.averaged_iterate,
        final_iterate: res.final_iterate,
        quantile_check: check,
        warnings: &res.warnings,
    };
    io::write_json(&out(cfg, "threshold.json"), &output)?;
    io::write_trace_csv(&out(cfg, "trace.csv"), &res.trace)?;
    println!(
        "t* = {} ({} iterations, {})",
        res.t_star,
        res.iterations,
        res.method.as_str()
    );
    Ok(())
}

#[derive(Serialize)]
struct TiltReport<'a> {
    mode: TiltMode,
    alpha: f64,
    beta: Option<f64>,
    t_star: Option<f64>,
    #[serde(flatten)]
    report: &'a RiskReport,
    warning: Option<String>,
}

pub fn tilt(cfg: &ExperimentConfig) -> CmdResult {
    let samples = prior_samples(cfg)?;
    let (spec, solved) = match cfg.mode.tail() {
        Some(mode) => {
            let problem = ThresholdProblem::from_samples(mode, cfg.alpha, cfg.beta, &samples)?;
            let res = solve(&problem, cfg)?;
            warn_all(&res.warnings);
            (TiltSpec::new(cfg.mode, cfg.alpha, cfg.beta, res.t_star)?, Some(res))
        }
        None => (TiltSpec::expected(cfg.alpha)?, None),
    };
    let tilted = tilt_samples(&samples, &spec)?;
    if let Some(w) = &tilted.warning {
        eprintln!("warning: {w}");
    }
    let set = &tilted.samples;
    let rewards = set.rewards()?;
    let weights = set.weights();
    let var_level = if cfg.mode.tail().is_some() {
        cfg.beta
    } else {
        cfg.report.beta_right
    };
    let report = RiskReport::compute(
        rewards,
        Some(&weights),
        cfg.report.beta_right,
        cfg.report.beta_left,
        var_level,
    )?;

    let (beta, t_star) = match &solved {
        Some(res) => (Some(cfg.beta), Some(res.t_star)),
        None => (None, None),
    };
    io::write_json(
        &out(cfg, "risk_report.json"),
        &TiltReport {
            mode: cfg.mode,
            alpha: cfg.alpha,
            beta,
            t_star,
            report: &report,
            warning: tilted.warning.clone(),
        },
    )?;
    io::write_samples_csv(&out(cfg, "tilted_samples.csv"), set)?;

    let qs: Vec<f64> = (1..100).map(|k| k as f64 / 100.0).collect();
    let inv = inverse_cdf(rewards, Some(&weights), &qs)?;
    io::write_xy_csv(&out(cfg, "inverse_cdf.csv"), ["q", "reward"], &qs, &inv)?;

    let (lo, hi) = rewards
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
    let m = cfg.kde.points;
    let xs: Vec<f64> = (0..m).map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64).collect();
    let pdf = kde_pdf_1d(rewards, Some(&weights), cfg.kde.bandwidth_factor, &xs)?;
    io::write_xy_csv(&out(cfg, "pdf.csv"), ["reward", "density"], &xs, &pdf)?;

    println!(
        "E[r] = {:.4}  VaR = {:.4}  R-CVaR = {:.4}  L-CVaR = {:.4}  ESS = {:.1}",
        report.mean_reward, report.var_beta, report.right_cvar, report.left_cvar, tilted.effective_sample_size
    );
    Ok(())
}

#[derive(Serialize)]
struct FdcSummary {
    alpha: f64,
    beta: f64,
    iterations: usize,
    t_star: f64,
    t_final: f64,
    abs_t_error: f64,
    final_kl: f64,
    final_js: f64,
    final_tv: f64,
    max_kl: f64,
}

pub fn fdc(cfg: &ExperimentConfig) -> CmdResult {
    if cfg.mode != TiltMode::Right {
        return Err(CliError::Config(format!(
            "mode: `fdc` iterates the right-tail operator, got {}",
            cfg.mode.as_str()
        )));
    }
    let prior = cfg.prior_grid()?;
    let rewards = prior.evaluate(&cfg.reward);
    let target = grid_target(&prior, &rewards, TailMode::Right, cfg.alpha, cfg.beta)?;
    let initial = match cfg.fdc_start {
        FdcStart::Prior => prior.clone(),
        FdcStart::Target => target.target.clone(),
    };
    let schedule = cfg.eta_schedule();
    let state = run_fdc_from(
        &initial,
        &prior,
        &rewards,
        cfg.alpha,
        cfg.beta,
        &schedule,
        &target.target,
    )?;

    io::write_fdc_history_csv(&out(cfg, "fdc_history.csv"), &state)?;
    io::write_grid_json(&out(cfg, "grid_initial.json"), &initial)?;
    io::write_grid_json(&out(cfg, "grid_final.json"), &state.iterate)?;
    io::write_grid_json(&out(cfg, "grid_target.json"), &target.target)?;
    let last = distances(&state.iterate, &target.target)?;
    let t_final = *state.t_history.last().expect("history has the initial row");
    let summary = FdcSummary {
        alpha: cfg.alpha,
        beta: cfg.beta,
        iterations: state.k,
        t_star: target.t_star,
        t_final,
        abs_t_error: (t_final - target.t_star).abs(),
        final_kl: last.kl,
        final_js: last.js,
        final_tv: last.tv,
        max_kl: state.distance_history.iter().map(|d| d.kl).fold(0.0, f64::max),
    };
    io::write_json(&out(cfg, "summary.json"), &summary)?;
    println!(
        "K = {}  KL = {:.3e}  JS = {:.3e}  TV = {:.3e}  |t_K - t*| = {:.3e}",
        summary.iterations, summary.final_kl, summary.final_js, summary.final_tv, summary.abs_t_error
    );
    Ok(())
}

pub fn sensitivity(cfg: &ExperimentConfig) -> CmdResult {
    let mode = cfg.tail_mode("sensitivity")?;
    let prior = cfg.prior_grid()?;
    let (d_deltas, d_alphas, d_betas) = default_sweep(mode);
    let pick = |name: &str, given: &Option<Vec<f64>>, default: Vec<f64>| -> Result<Vec<f64>, CliError> {
        match given {
            Some(v) if v.is_empty() => Err(CliError::Config(format!("sweep.{name}: list is empty"))),
            Some(v) => Ok(v.clone()),
            None => Ok(default),
        }
    };
    let deltas = pick("deltas", &cfg.sweep.deltas, d_deltas)?;
    let alphas = pick("alphas", &cfg.sweep.alphas, d_alphas)?;
    let betas = pick("betas", &cfg.sweep.betas, d_betas)?;
    let points = sensitivity_sweep(&prior, &cfg.reward, &alphas, &betas, &deltas, mode)?;
    io::write_sweep_csv(&out(cfg, "sensitivity.csv"), &points)?;
    let violations = count_violations(&points);
    let monotone = monotone_in_delta(&points);
    println!(
        "{} points, {violations} bound violations, monotone in delta: {monotone}",
        points.len()
    );
    if violations > 0 {
        return Err(CliError::Violation(format!(
            "{violations} sweep points exceed 2 delta / lambda"
        )));
    }
    Ok(())
}

pub fn report(cfg: &ExperimentConfig) -> CmdResult {
    let samples = prior_samples(cfg)?;
    let rows = comparison_table(&samples, cfg.alpha, cfg.report.beta_right, cfg.report.beta_left)?;
    let header = [
        "name",
        "t_star",
        "mean_reward",
        "var_level",
        "var_beta",
        "right_cvar",
        "left_cvar",
        "effective_sample_size",
    ];
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.name.clone(),
                opt(r.t_star),
                r.report.mean_reward.to_string(),
                r.report.var_level.to_string(),
                r.report.var_beta.to_string(),
                r.report.right_cvar.to_string(),
                r.report.left_cvar.to_string(),
                opt(r.report.effective_sample_size),
            ]
        })
        .collect();
    io::write_table(&out(cfg, "comparison.csv"), &header, &table)?;
    io::write_json(&out(cfg, "comparison.json"), &rows)?;
    println!("{:<12} {:>9} {:>9} {:>9}", "model", "E[r]", "R-CVaR", "L-CVaR");
    for r in &rows {
        println!(
            "{:<12} {:>9.3} {:>9.3} {:>9.3}",
            r.name, r.report.mean_reward, r.report.right_cvar, r.report.left_cvar
        );
    }
    Ok(())
}

/// Load a grid file, mapping any failure to the data-error class.
pub fn load_grid(path: &Path) -> Result<tailtilt_core::GridDistribution, CliError> {
    io::read_grid_json(path).map_err(|e| CliError::Numeric(format!("{}: {e}", path.display())))
}
