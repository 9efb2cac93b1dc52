//! Value-at-risk, right/left CVaR and inverse CDFs of weighted reward samples.
//!
//! Everything goes through [`EmpiricalDistribution`], which merges tied rewards
//! into atoms and drops zero-weight points.
//!
//! Quantiles interpolate linearly between atoms placed at the midpoint of their
//! cumulative mass interval, so `q(beta)` for `n` equal atoms `1..=n` hits the
//! value `k` at `beta = (k - 1/2) / n`. Outside the first and last midpoints the
//! quantile is clamped to the extreme atoms. CVaR averages exactly `1 - beta`
//! (right) or `beta` (left) of mass, splitting the boundary atom.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Discrete distribution over sorted, distinct reward atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalDistribution {
    values: Vec<f64>,
    masses: Vec<f64>,
    /// `cum[k] = masses[0] + ... + masses[k]`.
    cum: Vec<f64>,
}

fn check_level(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid(format!("risk level must lie in (0, 1), got {beta}")));
    }
    Ok(())
}

impl EmpiricalDistribution {
    /// `weights == None` means uniform. Weights need not be normalized.
    pub fn new(rewards: &[f64], weights: Option<&[f64]>) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::invalid("empty reward sample"));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("rewards must be finite"));
        }
        let mut pairs: Vec<(f64, f64)> = match weights {
            Some(w) => {
                if w.len() != rewards.len() {
                    return Err(Error::invalid("weights and rewards differ in length"));
                }
                if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(Error::invalid("weights must be finite and nonnegative"));
                }
                rewards
                    .iter()
                    .copied()
                    .zip(w.iter().copied())
                    .filter(|p| p.1 > 0.0)
                    .collect()
            }
            None => rewards.iter().map(|&r| (r, 1.0)).collect(),
        };
        if pairs.is_empty() {
            return Err(Error::invalid("total weight is zero"));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut values: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut masses: Vec<f64> = Vec::with_capacity(pairs.len());
        for (v, m) in pairs {
            match values.last() {
                Some(&last) if last == v => *masses.last_mut().unwrap() += m,
                _ => {
                    values.push(v);
                    masses.push(m);
                }
            }
        }
        let total: f64 = masses.iter().sum();
        for m in &mut masses {
            *m /= total;
        }
        let mut cum = Vec::with_capacity(masses.len());
        let mut acc = 0.0;
        for m in &masses {
            acc += m;
            cum.push(acc);
        }
        Ok(EmpiricalDistribution { values, masses, cum })
    }

    /// Weights given as (unnormalized) log weights.
    pub fn from_log_weights(rewards: &[f64], log_weights: &[f64]) -> Result<Self> {
        if log_weights.len() != rewards.len() {
            return Err(Error::invalid("log weights and rewards differ in length"));
        }
        if log_weights.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(Error::invalid("log weights must not be NaN or +inf"));
        }
        if math::logsumexp(log_weights) == f64::NEG_INFINITY {
            return Err(Error::invalid("total weight is zero"));
        }
        Self::new(rewards, Some(&math::softmax(log_weights)))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn atom_count(&self) -> usize {
        self.values.len()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.masses).map(|(v, m)| v * m).sum()
    }

    /// `P(r <= t)`.
    pub fn cdf(&self, t: f64) -> f64 {
        let k = self.values.partition_point(|v| *v <= t);
        if k == 0 {
            0.0
        } else {
            self.cum[k - 1].min(1.0)
        }
    }

    /// `P(r > t)`.
    pub fn mass_above(&self, t: f64) -> f64 {
        let k = self.values.partition_point(|v| *v <= t);
        self.masses[k..].iter().sum()
    }

    /// `P(r < t)`.
    pub fn mass_below(&self, t: f64) -> f64 {
        let k = self.values.partition_point(|v| *v < t);
        self.masses[..k].iter().sum()
    }

    /// Linearly interpolated `beta`-quantile.
    pub fn quantile(&self, beta: f64) -> Result<f64> {
        check_level(beta)?;
        Ok(self.quantile_unchecked(beta))
    }

    fn quantile_unchecked(&self, beta: f64) -> f64 {
        let n = self.values.len();
        let pos = |k: usize| self.cum[k] - 0.5 * self.masses[k];
        if n == 1 || beta <= pos(0) {
            return self.values[0];
        }
        if beta >= pos(n - 1) {
            return self.values[n - 1];
        }
        // First atom whose midpoint is at or beyond beta; k >= 1 here.
        let (mut lo, mut hi) = (0usize, n - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if pos(mid) < beta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (p0, p1) = (pos(lo), pos(hi));
        let (v0, v1) = (self.values[lo], self.values[hi]);
        if p1 <= p0 {
            return v1;
        }
        let w = ((beta - p0) / (p1 - p0)).clamp(0.0, 1.0);
        v0 + w * (v1 - v0)
    }

    /// Mean of the top `1 - beta` of mass.
    pub fn right_cvar(&self, beta: f64) -> Result<f64> {
        check_level(beta)?;
        let target = 1.0 - beta;
        let (mut remaining, mut acc) = (target, 0.0);
        for (v, m) in self.values.iter().zip(&self.masses).rev() {
            let take = m.min(remaining);
            acc += take * v;
            remaining -= take;
            if remaining <= 0.0 {
                break;
            }
        }
        Ok(acc / (target - remaining.max(0.0)))
    }

    /// Mean of the bottom `beta` of mass.
    pub fn left_cvar(&self, beta: f64) -> Result<f64> {
        check_level(beta)?;
        let (mut remaining, mut acc) = (beta, 0.0);
        for (v, m) in self.values.iter().zip(&self.masses) {
            let take = m.min(remaining);
            acc += take * v;
            remaining -= take;
            if remaining <= 0.0 {
                break;
            }
        }
        Ok(acc / (beta - remaining.max(0.0)))
    }
}

/// Weighted `beta`-quantile of `rewards`.
pub fn var_beta(rewards: &[f64], weights: Option<&[f64]>, beta: f64) -> Result<f64> {
    check_level(beta)?;
    EmpiricalDistribution::new(rewards, weights)?.quantile(beta)
}

/// Mean of the upper `1 - beta` tail.
pub fn right_cvar(rewards: &[f64], weights: Option<&[f64]>, beta: f64) -> Result<f64> {
    check_level(beta)?;
    EmpiricalDistribution::new(rewards, weights)?.right_cvar(beta)
}

/// Mean of the lower `beta` tail.
pub fn left_cvar(rewards: &[f64], weights: Option<&[f64]>, beta: f64) -> Result<f64> {
    check_level(beta)?;
    EmpiricalDistribution::new(rewards, weights)?.left_cvar(beta)
}

/// `min_{t in t_grid} t + E[r - t]_+ / (1 - beta)`.
///
/// Kept independent of the primal CVaR code so it can serve as an oracle for it.
pub fn dual_right_cvar(rewards: &[f64], weights: Option<&[f64]>, beta: f64, t_grid: &[f64]) -> Result<f64> {
    check_level(beta)?;
    if t_grid.is_empty() {
        return Err(Error::invalid("empty threshold grid"));
    }
    let n = rewards.len();
    if n == 0 {
        return Err(Error::invalid("empty reward sample"));
    }
    let w: Vec<f64> = match weights {
        Some(w) if w.len() == n => {
            let total: f64 = w.iter().sum();
            w.iter().map(|x| x / total).collect()
        }
        Some(_) => return Err(Error::invalid("weights and rewards differ in length")),
        None => vec![1.0 / n as f64; n],
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rewards[a].total_cmp(&rewards[b]));
    // Suffix sums of w and w*r over the sorted order.
    let mut tail_w = vec![0.0; n + 1];
    let mut tail_wr = vec![0.0; n + 1];
    for k in (0..n).rev() {
        let i = order[k];
        tail_w[k] = tail_w[k + 1] + w[i];
        tail_wr[k] = tail_wr[k + 1] + w[i] * rewards[i];
    }
    let sorted: Vec<f64> = order.iter().map(|&i| rewards[i]).collect();
    let mut best = f64::INFINITY;
    for &t in t_grid {
        let k = sorted.partition_point(|r| *r <= t);
        let excess = tail_wr[k] - t * tail_w[k];
        best = best.min(t + excess / (1.0 - beta));
    }
    Ok(best)
}

/// `var_beta` at every level in `q_grid`.
pub fn inverse_cdf(rewards: &[f64], weights: Option<&[f64]>, q_grid: &[f64]) -> Result<Vec<f64>> {
    let dist = EmpiricalDistribution::new(rewards, weights)?;
    q_grid.iter().map(|&q| dist.quantile(q)).collect()
}

/// Summary risk profile of a reward distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub mean_reward: f64,
    /// Quantile at `var_level`.
    pub var_beta: f64,
    pub var_level: f64,
    pub right_cvar: f64,
    pub left_cvar: f64,
    pub beta_right: f64,
    pub beta_left: f64,
    pub sample_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective_sample_size: Option<f64>,
}

impl RiskReport {
    pub fn from_distribution(
        dist: &EmpiricalDistribution,
        sample_count: usize,
        beta_right: f64,
        beta_left: f64,
        var_level: f64,
    ) -> Result<Self> {
        Ok(RiskReport {
            mean_reward: dist.mean(),
            var_beta: dist.quantile(var_level)?,
            var_level,
            right_cvar: dist.right_cvar(beta_right)?,
            left_cvar: dist.left_cvar(beta_left)?,
            beta_right,
            beta_left,
            sample_count,
            effective_sample_size: None,
        })
    }

    pub fn compute(
        rewards: &[f64],
        weights: Option<&[f64]>,
        beta_right: f64,
        beta_left: f64,
        var_level: f64,
    ) -> Result<Self> {
        let dist = EmpiricalDistribution::new(rewards, weights)?;
        let mut report = Self::from_distribution(&dist, rewards.len(), beta_right, beta_left, var_level)?;
        if let Some(w) = weights {
            let total: f64 = w.iter().sum();
            let norm: Vec<f64> = w.iter().map(|x| x / total).collect();
            report.effective_sample_size = Some(math::effective_sample_size(&norm));
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_to(n: usize) -> Vec<f64> {
        (1..=n).map(|k| k as f64).collect()
    }

    #[test]
    fn uniform_ranks_quantile_and_median() {
        let r = one_to(100);
        let q = var_beta(&r, None, 0.8).unwrap();
        assert!((q - 80.0).abs() <= 1.0, "{q}");
        let med = inverse_cdf(&one_to(10), None, &[0.5]).unwrap()[0];
        assert!((med - 5.5).abs() <= 0.5);
    }

    #[test]
    fn point_mass_and_constant() {
        let r = vec![3.25; 17];
        for beta in [0.01, 0.3, 0.5, 0.99] {
            assert_eq!(var_beta(&r, None, beta).unwrap(), 3.25);
            assert!((right_cvar(&r, None, beta).unwrap() - 3.25).abs() < 1e-14);
            assert!((left_cvar(&r, None, beta).unwrap() - 3.25).abs() < 1e-14);
        }
        let grid: Vec<f64> = (0..=100).map(|k| 3.0 + k as f64 * 0.005).collect();
        assert!((dual_right_cvar(&r, None, 0.8, &grid).unwrap() - 3.25).abs() < 1e-12);
    }

    #[test]
    fn level_and_input_validation() {
        assert!(var_beta(&[], None, 0.5).is_err());
        assert!(var_beta(&[1.0], None, 0.0).is_err());
        assert!(var_beta(&[1.0], None, 1.0).is_err());
        assert!(right_cvar(&[1.0, 2.0], Some(&[0.0, 0.0]), 0.5).is_err());
        assert!(left_cvar(&[f64::NAN], None, 0.5).is_err());
    }

    #[test]
    fn two_point_dual() {
        let r = [0.0, 1.0];
        let grid: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        let d = dual_right_cvar(&r, None, 0.5, &grid).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        assert!((right_cvar(&r, None, 0.5).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn boundary_atom_is_split() {
        // Top 30% of {1,2,3,4} uniform: all of 4 (0.25) plus 0.05 of 3.
        let c = right_cvar(&[1.0, 2.0, 3.0, 4.0], None, 0.7).unwrap();
        assert!((c - (0.25 * 4.0 + 0.05 * 3.0) / 0.3).abs() < 1e-12);
        let c = left_cvar(&[1.0, 2.0, 3.0, 4.0], None, 0.3).unwrap();
        assert!((c - (0.25 * 1.0 + 0.05 * 2.0) / 0.3).abs() < 1e-12);
    }

    #[test]
    fn ties_and_zero_weights_merge() {
        let a = EmpiricalDistribution::new(&[1.0, 2.0, 2.0, 5.0], Some(&[1.0, 1.0, 1.0, 0.0])).unwrap();
        assert_eq!(a.values(), &[1.0, 2.0]);
        assert!((a.masses()[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.max(), 2.0);
    }

    #[test]
    fn log_weights_construction() {
        let lw = [1000.0, 1000.0 + 2f64.ln()];
        let d = EmpiricalDistribution::from_log_weights(&[0.0, 3.0], &lw).unwrap();
        assert!((d.mean() - 2.0).abs() < 1e-12);
        assert!(EmpiricalDistribution::from_log_weights(&[0.0], &[f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn ordering_of_risk_functionals() {
        let r: Vec<f64> = (0..257).map(|k| ((k * 37) % 101) as f64 * 0.3 - 4.0).collect();
        let d = EmpiricalDistribution::new(&r, None).unwrap();
        for beta in [0.05, 0.2, 0.5, 0.8, 0.95] {
            let q = d.quantile(beta).unwrap();
            assert!(d.left_cvar(beta).unwrap() <= q + 1e-12);
            assert!(d.right_cvar(beta).unwrap() >= q - 1e-12);
            assert!(d.left_cvar(beta).unwrap() <= d.mean() + 1e-12);
            assert!(d.right_cvar(beta).unwrap() >= d.mean() - 1e-12);
        }
    }

    #[test]
    fn cdf_and_tail_masses() {
        let d = EmpiricalDistribution::new(&[1.0, 2.0, 3.0, 4.0], None).unwrap();
        assert_eq!(d.cdf(0.5), 0.0);
        assert!((d.cdf(2.0) - 0.5).abs() < 1e-15);
        assert!((d.mass_above(2.0) - 0.5).abs() < 1e-15);
        assert!((d.mass_below(2.0) - 0.25).abs() < 1e-15);
        assert_eq!(d.cdf(4.0), 1.0);
    }

    #[test]
    fn report_serializes() {
        let rep = RiskReport::compute(&[1.0, 2.0, 3.0], Some(&[1.0, 1.0, 2.0]), 0.8, 0.2, 0.8).unwrap();
        let json = serde_json::to_value(&rep).unwrap();
        for key in [
            "mean_reward",
            "var_beta",
            "right_cvar",
            "left_cvar",
            "beta_right",
            "beta_left",
            "sample_count",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert!(rep.left_cvar <= rep.mean_reward && rep.mean_reward <= rep.right_cvar);
    }
}
