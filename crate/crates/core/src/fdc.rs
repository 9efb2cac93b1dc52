//! The prior-anchored tilt operator iterated on a grid,
//!
//! `p' ∝ p^(1 - alpha/eta) * prior^(alpha/eta) * exp([r - VaR_beta(p)]_+ / (eta (1 - beta)))`,
//!
//! with threshold and divergence trajectories against a fixed target.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{distances, Distances};
use crate::distributions::{GridDistribution, RewardField};
use crate::error::{Error, Result};
use crate::math::positive_part;
use crate::risk::EmpiricalDistribution;

/// Step sizes `eta_1 .. eta_K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EtaSchedule {
    Constant {
        eta: f64,
        iterations: usize,
    },
    /// Linear from `eta0` at step 1 to `eta_final` at step K.
    Linear {
        eta0: f64,
        eta_final: f64,
        iterations: usize,
    },
    /// `eta_k = eta0 * ratio^(k - 1)`.
    Geometric {
        eta0: f64,
        ratio: f64,
        iterations: usize,
    },
}

impl EtaSchedule {
    /// Geometric growth from `2 alpha` to `20 alpha` over 40 steps.
    pub fn default_for(alpha: f64) -> Self {
        Self::geometric_between(2.0 * alpha, 20.0 * alpha, 40)
    }

    pub fn geometric_between(eta0: f64, eta_final: f64, iterations: usize) -> Self {
        let ratio = if iterations > 1 {
            (eta_final / eta0).powf(1.0 / (iterations - 1) as f64)
        } else {
            1.0
        };
        EtaSchedule::Geometric {
            eta0,
            ratio,
            iterations,
        }
    }

    pub fn iterations(&self) -> usize {
        match self {
            EtaSchedule::Constant { iterations, .. }
            | EtaSchedule::Linear { iterations, .. }
            | EtaSchedule::Geometric { iterations, .. } => *iterations,
        }
    }

    /// `eta_k` for `k` in `1..=K`.
    pub fn eta(&self, k: usize) -> f64 {
        match *self {
            EtaSchedule::Constant { eta, .. } => eta,
            EtaSchedule::Linear {
                eta0,
                eta_final,
                iterations,
            } => {
                if iterations <= 1 {
                    eta0
                } else {
                    eta0 + (eta_final - eta0) * (k - 1) as f64 / (iterations - 1) as f64
                }
            }
            EtaSchedule::Geometric { eta0, ratio, .. } => eta0 * ratio.powi(k as i32 - 1),
        }
    }

    pub fn etas(&self) -> Vec<f64> {
        (1..=self.iterations()).map(|k| self.eta(k)).collect()
    }

    /// Every `eta_k` must be finite and strictly above `alpha`.
    pub fn validate(&self, alpha: f64) -> Result<()> {
        for (k, eta) in self.etas().into_iter().enumerate() {
            if !(eta.is_finite() && eta > alpha) {
                return Err(Error::invalid(format!(
                    "schedule step {} has eta = {eta}, which must exceed alpha = {alpha}",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

/// Weighted `beta`-quantile of cell rewards under the cell masses.
pub fn grid_var_beta(p: &GridDistribution, reward: &RewardField, beta: f64) -> Result<f64> {
    grid_var_beta_values(p, &p.evaluate(reward), beta)
}

pub fn grid_var_beta_values(p: &GridDistribution, rewards: &[f64], beta: f64) -> Result<f64> {
    EmpiricalDistribution::from_log_weights(rewards, p.log_mass())?.quantile(beta)
}

fn check_step(
    p: &GridDistribution,
    prior: &GridDistribution,
    rewards: &[f64],
    alpha: f64,
    beta: f64,
    eta: f64,
) -> Result<()> {
    p.same_lattice(prior)?;
    if rewards.len() != p.len() {
        return Err(Error::invalid("cell reward count does not match the grid"));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid(format!("beta must lie in (0, 1), got {beta}")));
    }
    if !(eta.is_finite() && eta >= alpha) {
        return Err(Error::invalid(format!("eta = {eta} must be at least alpha = {alpha}")));
    }
    Ok(())
}

/// One operator application with an explicit threshold `t` in place of
/// `VaR_beta(p)`.
pub fn apply_operator_with_threshold(
    p: &GridDistribution,
    prior: &GridDistribution,
    rewards: &[f64],
    alpha: f64,
    beta: f64,
    eta: f64,
    t: f64,
) -> Result<GridDistribution> {
    check_step(p, prior, rewards, alpha, beta, eta)?;
    let a = alpha / eta;
    let keep = 1.0 - a;
    // A zero coefficient must not meet a -inf log mass.
    let scaled = |c: f64, l: f64| if c == 0.0 { 0.0 } else { c * l };
    let lm = p
        .log_mass()
        .iter()
        .zip(prior.log_mass())
        .zip(rewards)
        .map(|((&lp, &l0), &r)| scaled(keep, lp) + scaled(a, l0) + positive_part(r - t) / (eta * (1.0 - beta)))
        .collect();
    p.with_log_mass(lm)
}

/// One step with precomputed cell rewards. Returns the new iterate and the
/// threshold `VaR_beta(p)` used.
pub fn fdc_step_values(
    p: &GridDistribution,
    prior: &GridDistribution,
    rewards: &[f64],
    alpha: f64,
    beta: f64,
    eta: f64,
) -> Result<(GridDistribution, f64)> {
    check_step(p, prior, rewards, alpha, beta, eta)?;
    let t = grid_var_beta_values(p, rewards, beta)?;
    Ok((
        apply_operator_with_threshold(p, prior, rewards, alpha, beta, eta, t)?,
        t,
    ))
}

/// One step of the operator. `eta == alpha` is accepted (pure tilt of the
/// prior); `eta < alpha` is rejected.
pub fn fdc_step(
    p: &GridDistribution,
    prior: &GridDistribution,
    reward: &RewardField,
    alpha: f64,
    beta: f64,
    eta: f64,
) -> Result<GridDistribution> {
    p.same_lattice(prior)?;
    Ok(fdc_step_values(p, prior, &p.evaluate(reward), alpha, beta, eta)?.0)
}

#[derive(Clone, Debug)]
pub struct FdcState {
    pub iterate: GridDistribution,
    pub k: usize,
    /// `t_k = VaR_beta(p^k)`, length `k + 1`.
    pub t_history: Vec<f64>,
    /// `eta_k` used to reach `p^k`; `None` for `k = 0`.
    pub eta_history: Vec<Option<f64>>,
    /// Distances from `p^k` to the target, length `k + 1`.
    pub distance_history: Vec<Distances>,
}

/// Iterate from the prior.
pub fn run_fdc(
    prior: &GridDistribution,
    reward: &RewardField,
    alpha: f64,
    beta: f64,
    schedule: &EtaSchedule,
    target: &GridDistribution,
) -> Result<FdcState> {
    run_fdc_from(prior, prior, &prior.evaluate(reward), alpha, beta, schedule, target)
}

/// Iterate from an arbitrary initial distribution with precomputed rewards.
pub fn run_fdc_from(
    initial: &GridDistribution,
    prior: &GridDistribution,
    rewards: &[f64],
    alpha: f64,
    beta: f64,
    schedule: &EtaSchedule,
    target: &GridDistribution,
) -> Result<FdcState> {
    schedule.validate(alpha)?;
    initial.same_lattice(prior)?;
    initial.same_lattice(target)?;
    let mut p = initial.clone();
    let mut state = FdcState {
        iterate: p.clone(),
        k: 0,
        t_history: vec![grid_var_beta_values(&p, rewards, beta)?],
        eta_history: vec![None],
        distance_history: vec![distances(&p, target)?],
    };
    for k in 1..=schedule.iterations() {
        let eta = schedule.eta(k);
        p = fdc_step_values(&p, prior, rewards, alpha, beta, eta)?.0;
        state.t_history.push(grid_var_beta_values(&p, rewards, beta)?);
        state.eta_history.push(Some(eta));
        state.distance_history.push(distances(&p, target)?);
        state.k = k;
    }
    state.iterate = p;
    Ok(state)
}
