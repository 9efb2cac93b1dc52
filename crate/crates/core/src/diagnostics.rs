//! Divergences between grid distributions, finite differences, and the
//! threshold-error sensitivity sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{GridDistribution, RewardField};
use crate::error::{Error, Result};
use crate::threshold::TailMode;
use crate::tilt::{grid_target, tilt_grid_values, TiltSpec};

/// `KL(p || q)` in nats.
pub fn kl_grid(p: &GridDistribution, q: &GridDistribution) -> Result<f64> {
    p.same_lattice(q)?;
    let mut acc = 0.0;
    for (&lp, &lq) in p.log_mass().iter().zip(q.log_mass()) {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        if lq == f64::NEG_INFINITY {
            return Ok(f64::INFINITY);
        }
        acc += lp.exp() * (lp - lq);
    }
    Ok(acc.max(0.0))
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Jensen-Shannon divergence in nats (at most `ln 2`).
pub fn js_grid(p: &GridDistribution, q: &GridDistribution) -> Result<f64> {
    p.same_lattice(q)?;
    let half = 0.5f64.ln();
    let mut acc = 0.0;
    for (&lp, &lq) in p.log_mass().iter().zip(q.log_mass()) {
        let lm = half + log_add_exp(lp, lq);
        if lp > f64::NEG_INFINITY {
            acc += 0.5 * lp.exp() * (lp - lm);
        }
        if lq > f64::NEG_INFINITY {
            acc += 0.5 * lq.exp() * (lq - lm);
        }
    }
    Ok(acc.clamp(0.0, std::f64::consts::LN_2))
}

/// Total variation `0.5 * sum |p - q|`.
pub fn tv_grid(p: &GridDistribution, q: &GridDistribution) -> Result<f64> {
    p.same_lattice(q)?;
    let s: f64 = p
        .log_mass()
        .iter()
        .zip(q.log_mass())
        .map(|(a, b)| (a.exp() - b.exp()).abs())
        .sum();
    Ok((0.5 * s).min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distances {
    pub kl: f64,
    pub js: f64,
    pub tv: f64,
}

/// `KL(p || target)`, `JS(p, target)`, `TV(p, target)`.
pub fn distances(p: &GridDistribution, target: &GridDistribution) -> Result<Distances> {
    Ok(Distances {
        kl: kl_grid(p, target)?,
        js: js_grid(p, target)?,
        tv: tv_grid(p, target)?,
    })
}

/// Central difference of order 1 or 2 with step `h`.
pub fn finite_difference<F>(f: F, t: f64, h: f64, order: u8) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {h}")));
    }
    match order {
        1 => Ok((f(t + h) - f(t - h)) / (2.0 * h)),
        2 => Ok((f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h)),
        _ => Err(Error::invalid(format!("order must be 1 or 2, got {order}"))),
    }
}

/// `alpha (1 - beta)` for the right mode and `alpha beta` for the left mode.
pub fn sensitivity_lambda(mode: TailMode, alpha: f64, beta: f64) -> f64 {
    match mode {
        TailMode::Right => alpha * (1.0 - beta),
        TailMode::Left => alpha * beta,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub mode: TailMode,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    /// `+1` for `t* + delta`, `-1` for `t* - delta`.
    pub sign: i8,
    pub t_star: f64,
    pub kl_measured: f64,
    /// `2 delta / lambda` with the mode-specific `lambda`.
    pub kl_bound: f64,
    /// Whether `2 delta / (alpha (1 - beta))` also bounds the measurement.
    pub printed_bound_holds: bool,
}

impl SensitivityPoint {
    pub fn holds(&self) -> bool {
        self.kl_measured <= self.kl_bound + 1e-9
    }
}

/// Default sweep lists: deltas, alphas, and the betas for `mode`.
pub fn default_sweep(mode: TailMode) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let deltas = vec![0.01, 0.05, 0.1, 0.2, 0.5];
    let alphas = vec![0.5, 1.0, 2.0];
    let betas = match mode {
        TailMode::Right => vec![0.8, 0.9],
        TailMode::Left => vec![0.1, 0.2],
    };
    (deltas, alphas, betas)
}

/// For each `(alpha, beta)`: solve `t*` on the grid, build the exact target,
/// and compare it with the tilt at `t* +- delta` for every delta.
pub fn sensitivity_sweep(
    prior: &GridDistribution,
    reward: &RewardField,
    alpha_list: &[f64],
    beta_list: &[f64],
    delta_list: &[f64],
    mode: TailMode,
) -> Result<Vec<SensitivityPoint>> {
    if alpha_list.is_empty() || beta_list.is_empty() || delta_list.is_empty() {
        return Err(Error::invalid("sweep lists must be nonempty"));
    }
    if delta_list.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::invalid("deltas must be finite and nonnegative"));
    }
    let rewards = prior.evaluate(reward);
    let pairs: Vec<(f64, f64)> = alpha_list
        .iter()
        .flat_map(|&a| beta_list.iter().map(move |&b| (a, b)))
        .collect();
    let blocks: Vec<Result<Vec<SensitivityPoint>>> = pairs
        .par_iter()
        .map(|&(alpha, beta)| {
            let target = grid_target(prior, &rewards, mode, alpha, beta)?;
            let lambda = sensitivity_lambda(mode, alpha, beta);
            let printed = alpha * (1.0 - beta);
            let mut out = Vec::with_capacity(2 * delta_list.len());
            for &sign in &[1i8, -1i8] {
                for &delta in delta_list {
                    let t_hat = target.t_star + f64::from(sign) * delta;
                    let spec = TiltSpec::new(mode.into(), alpha, beta, t_hat)?;
                    let p_hat = tilt_grid_values(prior, &rewards, &spec)?;
                    let kl = kl_grid(&target.target, &p_hat)?;
                    out.push(SensitivityPoint {
                        mode,
                        alpha,
                        beta,
                        delta,
                        sign,
                        t_star: target.t_star,
                        kl_measured: kl,
                        kl_bound: 2.0 * delta / lambda,
                        printed_bound_holds: kl <= 2.0 * delta / printed + 1e-9,
                    });
                }
            }
            Ok(out)
        })
        .collect();
    let mut points = Vec::new();
    for b in blocks {
        points.extend(b?);
    }
    Ok(points)
}

/// Number of points whose measurement exceeds the bound.
pub fn count_violations(points: &[SensitivityPoint]) -> usize {
    points.iter().filter(|p| !p.holds()).count()
}

/// True when, for every `(mode, alpha, beta, sign)`, KL is nondecreasing in delta.
pub fn monotone_in_delta(points: &[SensitivityPoint]) -> bool {
    let mut groups: Vec<Vec<&SensitivityPoint>> = Vec::new();
    for p in points {
        match groups.iter_mut().find(|g| {
            let q = g[0];
            q.mode == p.mode && q.alpha == p.alpha && q.beta == p.beta && q.sign == p.sign
        }) {
            Some(g) => g.push(p),
            None => groups.push(vec![p]),
        }
    }
    groups.into_iter().all(|mut g| {
        g.sort_by(|a, b| a.delta.total_cmp(&b.delta));
        g.windows(2).all(|w| w[1].kl_measured >= w[0].kl_measured - 1e-15)
    })
}
