//! Two-stage pipeline on a sample batch: solve the threshold on the batch, then
//! tilt the same batch, and summarize the risk profile of each variant.

use serde::{Deserialize, Serialize};

use crate::distributions::SampleSet;
use crate::error::Result;
use crate::risk::RiskReport;
use crate::threshold::{default_tolerance, solve_golden_section, TailMode, ThresholdProblem, ThresholdResult};
use crate::tilt::{tilt_samples, TiltSpec, TiltedSamples};

/// Stage 1 (golden section on `samples`) followed by the exact tilt.
pub fn two_stage(
    samples: &SampleSet,
    mode: TailMode,
    alpha: f64,
    beta: f64,
) -> Result<(ThresholdResult, TiltedSamples)> {
    let problem = ThresholdProblem::from_samples(mode, alpha, beta, samples)?;
    let solve = solve_golden_section(&problem, default_tolerance(&problem))?;
    let spec = TiltSpec::new(mode.into(), alpha, beta, solve.t_star)?;
    let tilted = tilt_samples(samples, &spec)?;
    Ok((solve, tilted))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub t_star: Option<f64>,
    pub report: RiskReport,
}

fn report(set: &SampleSet, beta_right: f64, beta_left: f64, var_level: f64) -> Result<RiskReport> {
    let w = set.weights();
    let mut r = RiskReport::compute(set.rewards()?, Some(&w), beta_right, beta_left, var_level)?;
    if !set.is_weighted() {
        r.effective_sample_size = None;
    }
    Ok(r)
}

/// Rows `pre-trained`, `exp-ft`, `l-tfft`, `r-tfft` on one batch with rewards.
pub fn comparison_table(
    samples: &SampleSet,
    alpha: f64,
    beta_right: f64,
    beta_left: f64,
) -> Result<Vec<ComparisonRow>> {
    let mut rows = vec![ComparisonRow {
        name: "pre-trained".into(),
        t_star: None,
        report: report(samples, beta_right, beta_left, beta_right)?,
    }];
    let exp = tilt_samples(samples, &TiltSpec::expected(alpha)?)?;
    rows.push(ComparisonRow {
        name: "exp-ft".into(),
        t_star: None,
        report: report(&exp.samples, beta_right, beta_left, beta_right)?,
    });
    let (left, left_tilt) = two_stage(samples, TailMode::Left, alpha, beta_left)?;
    rows.push(ComparisonRow {
        name: "l-tfft".into(),
        t_star: Some(left.t_star),
        report: report(&left_tilt.samples, beta_right, beta_left, beta_left)?,
    });
    let (right, right_tilt) = two_stage(samples, TailMode::Right, alpha, beta_right)?;
    rows.push(ComparisonRow {
        name: "r-tfft".into(),
        t_star: Some(right.t_star),
        report: report(&right_tilt.samples, beta_right, beta_left, beta_right)?,
    });
    Ok(rows)
}
