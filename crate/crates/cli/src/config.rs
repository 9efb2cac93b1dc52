//! Experiment configuration: one JSON document per run, with every field
//! optional and unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tailtilt_core::fdc::EtaSchedule;
use tailtilt_core::{GaussianPrior, GridDistribution, RewardField, RewardKind, TailMode, TiltMode};

use crate::exit::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub prior: GaussianPrior,
    pub reward: RewardField,
    pub alpha: f64,
    pub beta: f64,
    pub mode: TiltMode,
    pub n_samples: usize,
    pub grid: GridConfig,
    pub solver: SolverConfig,
    pub output_dir: PathBuf,
    /// FDC step sizes; `None` uses the default geometric schedule.
    pub schedule: Option<EtaSchedule>,
    pub fdc_start: FdcStart,
    pub sweep: SweepConfig,
    pub report: ReportConfig,
    pub kde: KdeConfig,
    /// Grid files `verify` checks for corruption.
    pub verify_grids: Vec<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            prior: GaussianPrior::standard(2),
            reward: RewardField::sum2(),
            alpha: 1.0,
            beta: 0.8,
            mode: TiltMode::Right,
            n_samples: 100_000,
            grid: GridConfig::default(),
            solver: SolverConfig::default(),
            output_dir: PathBuf::from("out"),
            schedule: None,
            fdc_start: FdcStart::Prior,
            sweep: SweepConfig::default(),
            report: ReportConfig::default(),
            kde: KdeConfig::default(),
            verify_grids: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            lo: [-4.0, -4.0],
            hi: [4.0, 4.0],
            n: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum SolverConfig {
    Golden {
        #[serde(default)]
        tol: Option<f64>,
    },
    Pgd {
        #[serde(default)]
        step: Option<f64>,
        #[serde(default = "default_iters")]
        iters: usize,
    },
    Sgd {
        #[serde(default = "default_batch")]
        batch_size: usize,
        #[serde(default = "default_iters")]
        iters: usize,
        #[serde(default)]
        step: Option<f64>,
        #[serde(default = "default_true")]
        replacement: bool,
    },
}

fn default_iters() -> usize {
    1000
}

fn default_batch() -> usize {
    256
}

fn default_true() -> bool {
    true
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig::Golden { tol: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FdcStart {
    Prior,
    /// Start at the exact tilted target (fixed-point check).
    Target,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub alphas: Option<Vec<f64>>,
    pub betas: Option<Vec<f64>>,
    pub deltas: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub beta_right: f64,
    pub beta_left: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            beta_right: 0.8,
            beta_left: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdeConfig {
    pub points: usize,
    pub bandwidth_factor: f64,
}

impl Default for KdeConfig {
    fn default() -> Self {
        KdeConfig {
            points: 200,
            bandwidth_factor: 1.0,
        }
    }
}

/// Command-line overrides of top-level scalar fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub mode: Option<TiltMode>,
    pub n_samples: Option<usize>,
}

fn field(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {msg}"))
}

fn check_unit(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(field(name, format!("must lie strictly between 0 and 1, got {v}")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(field(name, format!("must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    /// Read `path` (or start from defaults), apply overrides, validate.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?
            }
            None => ExperimentConfig::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.output_dir = v.clone();
        }
        if let Some(v) = o.alpha {
            self.alpha = v;
        }
        if let Some(v) = o.beta {
            self.beta = v;
        }
        if let Some(v) = o.mode {
            self.mode = v;
        }
        if let Some(v) = o.n_samples {
            self.n_samples = v;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check_positive("alpha", self.alpha)?;
        check_unit("beta", self.beta)?;
        check_unit("report.beta_right", self.report.beta_right)?;
        check_unit("report.beta_left", self.report.beta_left)?;
        if self.n_samples == 0 {
            return Err(field("n_samples", "must be at least 1"));
        }
        self.prior.validate().map_err(|e| field("prior", e))?;
        let dim = self.prior.dim();
        match self.reward.kind() {
            RewardKind::Linear { coeffs } if coeffs.len() != dim => {
                return Err(field(
                    "reward",
                    format!("has {} coefficients for a {dim}-dimensional prior", coeffs.len()),
                ))
            }
            RewardKind::GaussianBump { mu, .. } if mu.len() != dim => {
                return Err(field(
                    "reward",
                    format!("bump center has {} coordinates for a {dim}-dimensional prior", mu.len()),
                ))
            }
            RewardKind::Tabulated { .. } if dim != 2 => {
                return Err(field("reward", "tabulated rewards need a 2-dimensional prior"))
            }
            _ => {}
        }
        let g = &self.grid;
        if g.n < 2 {
            return Err(field("grid.n", format!("must be at least 2, got {}", g.n)));
        }
        for k in 0..2 {
            if !(g.lo[k].is_finite() && g.hi[k].is_finite() && g.lo[k] < g.hi[k]) {
                return Err(field(
                    "grid",
                    format!("needs finite lo < hi in every coordinate, got {:?} / {:?}", g.lo, g.hi),
                ));
            }
        }
        match &self.solver {
            SolverConfig::Golden { tol: Some(t) } => check_positive("solver.tol", *t)?,
            SolverConfig::Golden { tol: None } => {}
            SolverConfig::Pgd { step, iters } => {
                if let Some(s) = step {
                    check_positive("solver.step", *s)?;
                }
                if *iters == 0 {
                    return Err(field("solver.iters", "must be at least 1"));
                }
            }
            SolverConfig::Sgd {
                batch_size,
                iters,
                step,
                ..
            } => {
                if let Some(s) = step {
                    check_positive("solver.step", *s)?;
                }
                if *iters == 0 {
                    return Err(field("solver.iters", "must be at least 1"));
                }
                if *batch_size == 0 {
                    return Err(field("solver.batch_size", "must be at least 1"));
                }
            }
        }
        if let Some(s) = &self.schedule {
            s.validate(self.alpha).map_err(|e| field("schedule", e))?;
        }
        if self.kde.points < 2 {
            return Err(field("kde.points", "must be at least 2"));
        }
        check_positive("kde.bandwidth_factor", self.kde.bandwidth_factor)?;
        Ok(())
    }

    /// Tail mode for commands that solve a threshold.
    pub fn tail_mode(&self, command: &str) -> Result<TailMode, CliError> {
        self.mode
            .tail()
            .ok_or_else(|| field("mode", format!("`{command}` needs mode right or left, got expected")))
    }

    /// Grid commands need a 2-dimensional prior.
    pub fn prior_grid(&self) -> Result<GridDistribution, CliError> {
        if self.prior.dim() != 2 {
            return Err(field("prior", "grid commands need a 2-dimensional prior"));
        }
        Ok(GridDistribution::gaussian(
            &self.prior,
            &self.grid.lo,
            &self.grid.hi,
            self.grid.n,
        )?)
    }

    pub fn eta_schedule(&self) -> EtaSchedule {
        self.schedule
            .clone()
            .unwrap_or_else(|| EtaSchedule::default_for(self.alpha))
    }
}
