//! Pseudo-rewards and the exponentially tilted target distributions, on sample
//! sets (self-normalized importance weights) and on grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{GridDistribution, RewardField, SampleSet};
use crate::error::{Error, Result};
use crate::math::positive_part;
use crate::risk::EmpiricalDistribution;
use crate::threshold::{default_tolerance, solve_golden_section, TailMode, ThresholdProblem, ThresholdResult};

/// Effective sample sizes below this attach a degeneracy warning.
pub const ESS_WARNING_THRESHOLD: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiltMode {
    Right,
    Left,
    /// Plain Boltzmann tilt by `r / alpha`.
    Expected,
}

impl TiltMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TiltMode::Right => "right",
            TiltMode::Left => "left",
            TiltMode::Expected => "expected",
        }
    }

    pub fn tail(&self) -> Option<TailMode> {
        match self {
            TiltMode::Right => Some(TailMode::Right),
            TiltMode::Left => Some(TailMode::Left),
            TiltMode::Expected => None,
        }
    }
}

impl From<TailMode> for TiltMode {
    fn from(m: TailMode) -> Self {
        match m {
            TailMode::Right => TiltMode::Right,
            TailMode::Left => TiltMode::Left,
        }
    }
}

/// `beta` and `t_star` are ignored in expected mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TiltSpec {
    pub mode: TiltMode,
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub t_star: f64,
}

impl TiltSpec {
    pub fn new(mode: TiltMode, alpha: f64, beta: f64, t_star: f64) -> Result<Self> {
        let spec = TiltSpec {
            mode,
            alpha,
            beta,
            t_star,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn right(alpha: f64, beta: f64, t_star: f64) -> Result<Self> {
        Self::new(TiltMode::Right, alpha, beta, t_star)
    }

    pub fn left(alpha: f64, beta: f64, t_star: f64) -> Result<Self> {
        Self::new(TiltMode::Left, alpha, beta, t_star)
    }

    pub fn expected(alpha: f64) -> Result<Self> {
        Self::new(TiltMode::Expected, alpha, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.mode != TiltMode::Expected {
            if !(self.beta > 0.0 && self.beta < 1.0) {
                return Err(Error::invalid(format!("beta must lie in (0, 1), got {}", self.beta)));
            }
            if !self.t_star.is_finite() {
                return Err(Error::invalid("t_star must be finite"));
            }
        }
        Ok(())
    }
}

/// `[r - t]_+ / (1 - beta)`, `-[t - r]_+ / beta`, or `r`.
pub fn pseudo_reward(spec: &TiltSpec, r: f64) -> f64 {
    match spec.mode {
        TiltMode::Right => positive_part(r - spec.t_star) / (1.0 - spec.beta),
        TiltMode::Left => -positive_part(spec.t_star - r) / spec.beta,
        TiltMode::Expected => r,
    }
}

/// Log tilt increment `pseudo_reward / alpha`, written as
/// `[r - t]_+ / (alpha (1 - beta))` so it matches the threshold objective's
/// exponent bit for bit.
pub fn log_tilt(spec: &TiltSpec, r: f64) -> f64 {
    match spec.mode {
        TiltMode::Right => positive_part(r - spec.t_star) / (spec.alpha * (1.0 - spec.beta)),
        TiltMode::Left => -positive_part(spec.t_star - r) / (spec.alpha * spec.beta),
        TiltMode::Expected => r / spec.alpha,
    }
}

#[derive(Clone, Debug)]
pub struct TiltedSamples {
    pub samples: SampleSet,
    pub effective_sample_size: f64,
    pub warning: Option<String>,
}

/// Reweight prior samples by `exp(pseudo_reward / alpha)`.
pub fn tilt_samples(prior_samples: &SampleSet, spec: &TiltSpec) -> Result<TiltedSamples> {
    spec.validate()?;
    let rewards = prior_samples.rewards()?;
    let inc: Vec<f64> = rewards.par_iter().map(|&r| log_tilt(spec, r)).collect();
    let samples = prior_samples.reweight_by(&inc)?;
    let ess = samples.effective_sample_size();
    let warning = (ess < ESS_WARNING_THRESHOLD).then(|| {
        format!("effective sample size {ess:.2} is below {ESS_WARNING_THRESHOLD}; importance weights are degenerate")
    });
    Ok(TiltedSamples {
        samples,
        effective_sample_size: ess,
        warning,
    })
}

/// Tilt a grid distribution cell by cell.
pub fn tilt_grid(prior: &GridDistribution, reward: &RewardField, spec: &TiltSpec) -> Result<GridDistribution> {
    spec.validate()?;
    let rewards = prior.evaluate(reward);
    tilt_grid_values(prior, &rewards, spec)
}

/// As [`tilt_grid`] with precomputed cell rewards.
pub fn tilt_grid_values(prior: &GridDistribution, rewards: &[f64], spec: &TiltSpec) -> Result<GridDistribution> {
    if rewards.len() != prior.len() {
        return Err(Error::invalid("cell reward count does not match the grid"));
    }
    let lm = prior
        .log_mass()
        .iter()
        .zip(rewards)
        .map(|(l, &r)| l + log_tilt(spec, r))
        .collect();
    prior.with_log_mass(lm)
}

/// Grid-exact optimal distribution for a tail mode.
#[derive(Clone, Debug)]
pub struct GridTarget {
    pub t_star: f64,
    pub target: GridDistribution,
    pub solve: ThresholdResult,
}

/// Solve for `t*` by golden section on the grid masses, then tilt the prior.
pub fn grid_target(
    prior: &GridDistribution,
    rewards: &[f64],
    mode: TailMode,
    alpha: f64,
    beta: f64,
) -> Result<GridTarget> {
    let problem = ThresholdProblem::new(mode, alpha, beta, rewards.to_vec(), Some(prior.log_mass().to_vec()))?;
    let solve = solve_golden_section(&problem, 1e-4 * default_tolerance(&problem))?;
    let spec = TiltSpec::new(mode.into(), alpha, beta, solve.t_star)?;
    let target = tilt_grid_values(prior, rewards, &spec)?;
    Ok(GridTarget {
        t_star: solve.t_star,
        target,
        solve,
    })
}

/// `P(r > t)` for the right mode, `P(r < t)` for the left mode.
pub fn tail_mass(dist: &EmpiricalDistribution, t: f64, mode: TailMode) -> f64 {
    match mode {
        TailMode::Right => dist.mass_above(t),
        TailMode::Left => dist.mass_below(t),
    }
}

/// `|VaR_beta(tilted) - t_star|` for a tilted reward distribution.
pub fn verify_quantile_consistency(tilted: &EmpiricalDistribution, t_star: f64, beta: f64) -> Result<f64> {
    Ok((tilted.quantile(beta)? - t_star).abs())
}

/// `E_p[r] - alpha * KL(p || prior)` on a shared lattice.
pub fn regularized_objective(
    p: &GridDistribution,
    prior: &GridDistribution,
    rewards: &[f64],
    alpha: f64,
) -> Result<f64> {
    p.same_lattice(prior)?;
    let kl = crate::diagnostics::kl_grid(p, prior)?;
    Ok(p.expectation(rewards) - alpha * kl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::GaussianPrior;

    #[test]
    fn pseudo_reward_scaling() {
        let r = TiltSpec::right(1.0, 0.8, 0.3).unwrap();
        assert_eq!(pseudo_reward(&r, 0.3), 0.0);
        assert!((pseudo_reward(&r, 1.3) - 5.0).abs() < 1e-12);
        let l = TiltSpec::left(1.0, 0.2, 0.3).unwrap();
        assert!((pseudo_reward(&l, -0.7) + 5.0).abs() < 1e-12);
        assert_eq!(pseudo_reward(&l, 2.0), 0.0);
        let e = TiltSpec::expected(2.0).unwrap();
        assert_eq!(pseudo_reward(&e, 1.5), 1.5);
    }

    #[test]
    fn spec_validation_and_serde() {
        assert!(TiltSpec::right(0.0, 0.5, 0.0).is_err());
        assert!(TiltSpec::left(1.0, 1.1, 0.0).is_err());
        assert!(TiltSpec::right(1.0, 0.5, f64::INFINITY).is_err());
        let s = TiltSpec::right(1.0, 0.8, 0.25).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"mode\":\"right\""));
        let back: TiltSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn vacuous_right_tilt_is_identity_on_grid() {
        let g = GridDistribution::gaussian(&GaussianPrior::standard(2), &[-4.0, -4.0], &[4.0, 4.0], 50).unwrap();
        let reward = RewardField::sum2();
        let spec = TiltSpec::right(1.0, 0.8, 100.0).unwrap();
        let out = tilt_grid(&g, &reward, &spec).unwrap();
        for (a, b) in g.log_mass().iter().zip(out.log_mass()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_matches_far_left_threshold_up_to_constant() {
        let g = GridDistribution::gaussian(&GaussianPrior::standard(2), &[-4.0, -4.0], &[4.0, 4.0], 40).unwrap();
        let reward = RewardField::sum2();
        let alpha = 0.5;
        let beta = 0.0; // Right mode with beta = 0 reduces to r / alpha once t is below every reward.
        let far = TiltSpec {
            mode: TiltMode::Right,
            alpha,
            beta,
            t_star: -1e3,
        };
        let right = tilt_grid_values(&g, &g.evaluate(&reward), &far).unwrap();
        let exp = tilt_grid(&g, &reward, &TiltSpec::expected(alpha).unwrap()).unwrap();
        let d0 = right.log_mass()[0] - exp.log_mass()[0];
        for (a, b) in right.log_mass().iter().zip(exp.log_mass()) {
            assert!((a - b - d0).abs() < 1e-9);
        }
    }

    #[test]
    fn tilt_monotone_in_reward() {
        let s = crate::distributions::sample_prior(&GaussianPrior::standard(2), 2000, 1)
            .unwrap()
            .with_rewards(&RewardField::sum2());
        // Both hinges are nondecreasing in r: the right tilt rewards the upper
        // tail, the left tilt penalizes the lower tail.
        for spec in [
            TiltSpec::right(1.0, 0.8, 0.5).unwrap(),
            TiltSpec::left(1.0, 0.2, -0.5).unwrap(),
        ] {
            let t = tilt_samples(&s, &spec).unwrap();
            let mut pairs: Vec<(f64, f64)> = t
                .samples
                .rewards()
                .unwrap()
                .iter()
                .copied()
                .zip(t.samples.weights())
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in pairs.windows(2) {
                assert!(w[1].1 >= w[0].1);
            }
            // Weights are flat on the side of t* the hinge ignores.
            let flat: Vec<f64> = pairs
                .iter()
                .filter(|(r, _)| match spec.mode {
                    TiltMode::Right => *r <= spec.t_star,
                    _ => *r >= spec.t_star,
                })
                .map(|p| p.1)
                .collect();
            assert!(flat.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn degenerate_tilt_warns() {
        let s = crate::distributions::sample_prior(&GaussianPrior::standard(2), 1000, 2)
            .unwrap()
            .with_rewards(&RewardField::sum2());
        let t = tilt_samples(&s, &TiltSpec::right(0.01, 0.99, 0.0).unwrap()).unwrap();
        assert!(t.effective_sample_size < ESS_WARNING_THRESHOLD);
        assert!(t.warning.is_some());
        let t = tilt_samples(&s, &TiltSpec::right(1.0, 0.5, 0.0).unwrap()).unwrap();
        assert!(t.warning.is_none());
    }
}
