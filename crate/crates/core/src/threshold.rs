//! Scalar threshold problems: the right objective
//! `F_R(t) = t + alpha * log E[exp([r - t]_+ / (alpha (1 - beta)))]` (minimized)
//! and the left objective
//! `F_L(t) = t + alpha * log E[exp(-[t - r]_+ / (alpha beta))]` (maximized),
//! with deterministic solvers and the minibatch ratio-estimator SGD.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{GridDistribution, RewardField, SampleSet};
use crate::error::{Error, Result};
use crate::math::{self, positive_part};
use crate::risk::EmpiricalDistribution;

const CHUNK: usize = 1 << 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailMode {
    Right,
    Left,
}

impl TailMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TailMode::Right => "right",
            TailMode::Left => "left",
        }
    }
}

impl std::fmt::Display for TailMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "golden")]
    GoldenSection,
    #[serde(rename = "pgd")]
    Pgd,
    #[serde(rename = "sgd")]
    BiasedSgd,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::GoldenSection => "golden",
            Method::Pgd => "pgd",
            Method::BiasedSgd => "sgd",
        }
    }
}

/// One solver step. `gradient` is the gradient used for the step (a minibatch
/// estimate for SGD).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iter: usize,
    pub t: f64,
    pub objective: f64,
    pub gradient: f64,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    /// The returned threshold (the Polyak average for SGD).
    pub t_star: f64,
    pub objective_value: f64,
    pub gradient_at_star: f64,
    pub method: Method,
    pub iterations: usize,
    pub averaged_iterate: Option<f64>,
    /// Last raw iterate.
    pub final_iterate: f64,
    #[serde(skip)]
    pub trace: Vec<TracePoint>,
    pub warnings: Vec<String>,
}

/// `(mode, alpha, beta, data, interval)` for the threshold objectives.
#[derive(Clone, Debug)]
pub struct ThresholdProblem {
    mode: TailMode,
    alpha: f64,
    beta: f64,
    rewards: Vec<f64>,
    /// Normalized. Empty means uniform.
    log_weights: Vec<f64>,
    r_min: f64,
    r_max: f64,
    interval: (f64, f64),
}

fn check_params(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid(format!("beta must lie in (0, 1), got {beta}")));
    }
    Ok(())
}

/// Deterministic chunked reduction of `(max, sum exp(x - max))` pairs.
fn chunked_lse<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let max = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            (c * CHUNK..((c + 1) * CHUNK).min(n))
                .map(&f)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sums: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| (c * CHUNK..((c + 1) * CHUNK).min(n)).map(|i| (f(i) - max).exp()).sum())
        .collect();
    max + sums.iter().sum::<f64>().ln()
}

impl ThresholdProblem {
    /// `log_weights == None` means a uniform batch.
    pub fn new(
        mode: TailMode,
        alpha: f64,
        beta: f64,
        rewards: Vec<f64>,
        log_weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        check_params(alpha, beta)?;
        if rewards.is_empty() {
            return Err(Error::invalid("threshold problem needs at least one reward"));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("rewards must be finite"));
        }
        let log_weights = match log_weights {
            Some(mut lw) => {
                if lw.len() != rewards.len() {
                    return Err(Error::invalid("log weights and rewards differ in length"));
                }
                if lw.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
                    return Err(Error::invalid("log weights must not be NaN or +inf"));
                }
                if !math::normalize_log(&mut lw).is_finite() {
                    return Err(Error::Degenerate("all weights are zero".into()));
                }
                lw
            }
            None => Vec::new(),
        };
        let r_min = rewards.iter().copied().fold(f64::INFINITY, f64::min);
        let r_max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = r_max - r_min;
        let pad = if range > 0.0 { 0.1 * range } else { 0.5 };
        Ok(ThresholdProblem {
            mode,
            alpha,
            beta,
            rewards,
            log_weights,
            r_min,
            r_max,
            interval: (r_min - pad, r_max + pad),
        })
    }

    pub fn from_samples(mode: TailMode, alpha: f64, beta: f64, samples: &SampleSet) -> Result<Self> {
        let lw = samples.log_weights().map(|l| l.to_vec());
        Self::new(mode, alpha, beta, samples.rewards()?.to_vec(), lw)
    }

    /// Cell-center rewards weighted by cell masses.
    pub fn from_grid(
        mode: TailMode,
        alpha: f64,
        beta: f64,
        grid: &GridDistribution,
        reward: &RewardField,
    ) -> Result<Self> {
        Self::new(mode, alpha, beta, grid.evaluate(reward), Some(grid.log_mass().to_vec()))
    }

    /// Override the projection interval. It may be narrower than the reward
    /// range, in which case solvers return the constrained optimum.
    pub fn with_interval(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid("interval needs finite lo < hi"));
        }
        self.interval = (lo, hi);
        Ok(self)
    }

    pub fn mode(&self) -> TailMode {
        self.mode
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn reward_range(&self) -> (f64, f64) {
        (self.r_min, self.r_max)
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn project(&self, t: f64) -> f64 {
        t.clamp(self.interval.0, self.interval.1)
    }

    /// Log weight of point `i` up to the constant [`Self::log_weight_offset`].
    #[inline]
    fn lw(&self, i: usize) -> f64 {
        if self.log_weights.is_empty() {
            0.0
        } else {
            self.log_weights[i]
        }
    }

    /// Uniform batches keep unit log weights and subtract `ln n` once, which
    /// makes `F(t) = t` exact where the hinge vanishes.
    fn log_weight_offset(&self) -> f64 {
        if self.log_weights.is_empty() {
            -(self.rewards.len() as f64).ln()
        } else {
            0.0
        }
    }

    /// Temperature of the hinge term: `alpha (1 - beta)` or `alpha beta`.
    pub fn temperature(&self) -> f64 {
        match self.mode {
            TailMode::Right => self.alpha * (1.0 - self.beta),
            TailMode::Left => self.alpha * self.beta,
        }
    }

    /// Tail probability scale, `1 - beta` (right) or `beta` (left).
    fn tail_level(&self) -> f64 {
        match self.mode {
            TailMode::Right => 1.0 - self.beta,
            TailMode::Left => self.beta,
        }
    }

    /// Hinge exponent of a single reward.
    #[inline]
    pub fn exponent(&self, r: f64, t: f64) -> f64 {
        match self.mode {
            TailMode::Right => positive_part(r - t) / self.temperature(),
            TailMode::Left => -positive_part(t - r) / self.temperature(),
        }
    }

    #[inline]
    fn in_tail(&self, r: f64, t: f64) -> bool {
        match self.mode {
            TailMode::Right => r > t,
            TailMode::Left => r < t,
        }
    }

    fn check_t(t: f64) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::invalid(format!("threshold must be finite, got {t}")));
        }
        Ok(())
    }

    /// `F(t)` for the problem's mode.
    pub fn objective(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        let lse = chunked_lse(self.len(), |i| self.lw(i) + self.exponent(self.rewards[i], t));
        let value = t + self.alpha * (lse + self.log_weight_offset());
        if !value.is_finite() {
            return Err(Error::NumericOverflow(format!("objective is not finite at t = {t}")));
        }
        Ok(value)
    }

    /// Tilted tail probability `rho(t) = q_t(tail)` with
    /// `q_t ∝ w exp(exponent)`.
    pub fn tilted_tail_probability(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        let n = self.len();
        let max = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                (c * CHUNK..((c + 1) * CHUNK).min(n))
                    .map(|i| self.lw(i) + self.exponent(self.rewards[i], t))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::NumericOverflow(format!(
                "tilt normalizer is not finite at t = {t}"
            )));
        }
        let parts: Vec<(f64, f64)> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut all = 0.0;
                let mut tail = 0.0;
                for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    let r = self.rewards[i];
                    let e = (self.lw(i) + self.exponent(r, t) - max).exp();
                    all += e;
                    if self.in_tail(r, t) {
                        tail += e;
                    }
                }
                (tail, all)
            })
            .collect();
        let (tail, all) = parts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        Ok(tail / all)
    }

    /// `F'(t) = 1 - rho(t) / (1 - beta)` (right) or `1 - rho(t) / beta` (left).
    pub fn gradient(&self, t: f64) -> Result<f64> {
        let rho = self.tilted_tail_probability(t)?;
        Ok(1.0 - rho / self.tail_level())
    }

    /// Second derivative away from reward atoms,
    /// `rho (1 - rho) / (alpha * level^2)`. The objective has additional kinks
    /// at the atoms themselves, convex for the right mode and concave for the
    /// left mode.
    pub fn curvature_between_atoms(&self, t: f64) -> Result<f64> {
        let rho = self.tilted_tail_probability(t)?;
        let level = self.tail_level();
        Ok(rho * (1.0 - rho) / (self.alpha * level * level))
    }

    /// `1 / (4 alpha (1 - beta)^2)` (right) or `1 / (4 alpha beta^2)` (left).
    pub fn smoothness_constant(&self) -> f64 {
        let level = self.tail_level();
        1.0 / (4.0 * self.alpha * level * level)
    }

    /// `+1` when minimizing, `-1` when maximizing.
    fn sense(&self) -> f64 {
        match self.mode {
            TailMode::Right => 1.0,
            TailMode::Left => -1.0,
        }
    }

    /// Weighted `beta`-quantile of the batch, the default SGD start.
    pub fn empirical_quantile(&self) -> Result<f64> {
        let dist = if self.log_weights.is_empty() {
            EmpiricalDistribution::new(&self.rewards, None)?
        } else {
            EmpiricalDistribution::from_log_weights(&self.rewards, &self.log_weights)?
        };
        dist.quantile(self.beta)
    }

    fn trace_point(&self, iter: usize, t: f64, gradient: f64, batch_size: usize) -> Result<TracePoint> {
        Ok(TracePoint {
            iter,
            t,
            objective: self.objective(t)?,
            gradient,
            batch_size,
        })
    }
}

/// Default golden-section tolerance, `1e-8 * |interval|`.
pub fn default_tolerance(problem: &ThresholdProblem) -> f64 {
    let (lo, hi) = problem.interval();
    1e-8 * (hi - lo)
}

/// Minimize `F_R` (or maximize `F_L`) over the projection interval.
///
/// A coarse scan brackets the best grid point (first one on ties) before
/// golden-section refinement, so a non-unimodal objective still lands on its
/// best basin.
pub fn solve_golden_section(problem: &ThresholdProblem, tol: f64) -> Result<ThresholdResult> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    const SCAN: usize = 129;
    let sense = problem.sense();
    let g = |t: f64| problem.objective(t).map(|v| sense * v);
    let (lo, hi) = problem.interval();
    let step = (hi - lo) / (SCAN - 1) as f64;
    let mut trace = Vec::new();
    let mut best = (0usize, f64::INFINITY);
    for k in 0..SCAN {
        let t = if k == SCAN - 1 { hi } else { lo + k as f64 * step };
        let v = g(t)?;
        if v < best.1 - 1e-14 * v.abs().max(1.0) {
            best = (k, v);
        }
    }
    let at = |k: usize| if k == SCAN - 1 { hi } else { lo + k as f64 * step };
    let mut a = at(best.0.saturating_sub(1));
    let mut b = at((best.0 + 1).min(SCAN - 1));

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = g(c)?;
    let mut fd = g(d)?;
    let mut iter = 0;
    while (b - a) > tol {
        // Keep the left part on ties so flat regions resolve to the smallest t.
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = g(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = g(d)?;
        }
        iter += 1;
        trace.push(TracePoint {
            iter,
            t: 0.5 * (a + b),
            objective: sense * fc.min(fd),
            gradient: f64::NAN,
            batch_size: problem.len(),
        });
    }
    // Endpoints may beat the interior probes on monotone segments.
    let mut t_star = 0.5 * (a + b);
    let mut f_star = g(t_star)?;
    for cand in [a, b] {
        let v = g(cand)?;
        if v < f_star {
            t_star = cand;
            f_star = v;
        }
    }
    // Objective values cannot resolve the minimizer much below sqrt(eps), so
    // polish by bisection on the sign of the gradient when it changes sign
    // near the golden-section answer.
    let dg = |t: f64| problem.gradient(t).map(|d| sense * d);
    let (ilo, ihi) = problem.interval();
    let mut w = 4.0 * tol;
    while w <= 2.0 * step {
        let (mut lo_b, mut hi_b) = ((t_star - w).max(ilo), (t_star + w).min(ihi));
        if dg(lo_b)? < 0.0 && dg(hi_b)? >= 0.0 {
            for _ in 0..200 {
                let mid = 0.5 * (lo_b + hi_b);
                if mid <= lo_b || mid >= hi_b {
                    break;
                }
                if dg(mid)? >= 0.0 {
                    hi_b = mid;
                } else {
                    lo_b = mid;
                }
            }
            t_star = hi_b;
            f_star = g(t_star)?;
            break;
        }
        w *= 2.0;
    }
    let grad = problem.gradient(t_star)?;
    for p in &mut trace {
        p.gradient = problem.gradient(p.t)?;
    }
    Ok(ThresholdResult {
        t_star,
        objective_value: sense * f_star,
        gradient_at_star: grad,
        method: Method::GoldenSection,
        iterations: iter,
        averaged_iterate: None,
        final_iterate: t_star,
        trace,
        warnings: Vec::new(),
    })
}

fn step_warning(problem: &ThresholdProblem, step: f64) -> Option<String> {
    let bound = 1.0 / (4.0 * problem.smoothness_constant());
    (step > bound * (1.0 + 1e-12)).then(|| format!("step {step} exceeds the smoothness bound 1/(4L) = {bound}"))
}

/// Full-batch projected gradient descent (ascent for the left mode) from the
/// empirical quantile.
pub fn solve_pgd(problem: &ThresholdProblem, step: f64, iters: usize) -> Result<ThresholdResult> {
    let start = problem.empirical_quantile()?;
    solve_pgd_from(problem, step, iters, start)
}

pub fn solve_pgd_from(problem: &ThresholdProblem, step: f64, iters: usize, start: f64) -> Result<ThresholdResult> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {step}")));
    }
    let mut warnings = Vec::new();
    warnings.extend(step_warning(problem, step));
    let sense = problem.sense();
    let mut t = problem.project(start);
    let mut trace = Vec::with_capacity(iters + 1);
    for k in 0..iters {
        let grad = problem.gradient(t)?;
        trace.push(problem.trace_point(k, t, grad, problem.len())?);
        t = problem.project(t - sense * step * grad);
    }
    let grad = problem.gradient(t)?;
    trace.push(problem.trace_point(iters, t, grad, problem.len())?);
    Ok(ThresholdResult {
        t_star: t,
        objective_value: problem.objective(t)?,
        gradient_at_star: grad,
        method: Method::Pgd,
        iterations: iters,
        averaged_iterate: None,
        final_iterate: t,
        trace,
        warnings,
    })
}

/// Settings for [`solve_biased_sgd`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub batch_size: usize,
    pub iters: usize,
    /// `None` picks `min(1/(4L), |interval| / sqrt(iters))`.
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// `None` starts at the empirical quantile of the batch.
    #[serde(default)]
    pub start: Option<f64>,
    #[serde(default = "default_true")]
    pub replacement: bool,
    /// Record a trace entry (with a full-batch objective) at every step.
    #[serde(default = "default_true")]
    pub record_trace: bool,
}

fn default_true() -> bool {
    true
}

impl SgdConfig {
    pub fn new(batch_size: usize, iters: usize, seed: u64) -> Self {
        SgdConfig {
            batch_size,
            iters,
            step: None,
            seed,
            start: None,
            replacement: true,
            record_trace: true,
        }
    }
}

/// `min(1/(4L), D/sqrt(M))` with `D = |interval|`.
pub fn default_sgd_step(problem: &ThresholdProblem, iters: usize) -> f64 {
    let (lo, hi) = problem.interval();
    let bound = 1.0 / (4.0 * problem.smoothness_constant());
    bound.min((hi - lo) / (iters.max(1) as f64).sqrt())
}

/// Draws minibatch gradient estimates from a fixed batch.
struct MinibatchSampler<'a> {
    problem: &'a ThresholdProblem,
    weighted: Option<WeightedIndex<f64>>,
    scratch_exp: Vec<f64>,
    scratch_tail: Vec<bool>,
    perm: Vec<usize>,
}

impl<'a> MinibatchSampler<'a> {
    fn new(problem: &'a ThresholdProblem) -> Result<Self> {
        let weighted = if problem.log_weights.is_empty() {
            None
        } else {
            let w = math::softmax(&problem.log_weights);
            Some(WeightedIndex::new(&w).map_err(|e| Error::Degenerate(format!("batch weights: {e}")))?)
        };
        Ok(MinibatchSampler {
            problem,
            weighted,
            scratch_exp: Vec::new(),
            scratch_tail: Vec::new(),
            perm: Vec::new(),
        })
    }

    fn draw_index<R: Rng>(&self, rng: &mut R) -> usize {
        match &self.weighted {
            Some(w) => w.sample(rng),
            None => rng.random_range(0..self.problem.len()),
        }
    }

    /// Ratio estimate `1 - (1/level) sum_tail e_i / sum e_i` over `n` draws.
    fn estimate<R: Rng>(&mut self, rng: &mut R, t: f64, n: usize, replacement: bool) -> f64 {
        let p = self.problem;
        self.scratch_exp.clear();
        self.scratch_tail.clear();
        if replacement {
            for _ in 0..n {
                let r = p.rewards[self.draw_index(rng)];
                self.scratch_exp.push(p.exponent(r, t));
                self.scratch_tail.push(p.in_tail(r, t));
            }
        } else {
            // Partial Fisher-Yates over a persistent permutation.
            if self.perm.len() != p.len() {
                self.perm = (0..p.len()).collect();
            }
            for k in 0..n {
                let j = rng.random_range(k..p.len());
                self.perm.swap(k, j);
                let r = p.rewards[self.perm[k]];
                self.scratch_exp.push(p.exponent(r, t));
                self.scratch_tail.push(p.in_tail(r, t));
            }
        }
        let max = self.scratch_exp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut tail, mut all) = (0.0, 0.0);
        for (a, in_tail) in self.scratch_exp.iter().zip(&self.scratch_tail) {
            let e = (a - max).exp();
            all += e;
            if *in_tail {
                tail += e;
            }
        }
        1.0 - tail / all / p.tail_level()
    }
}

/// Projected SGD with minibatch ratio estimates; returns the uniform average of
/// the iterates `t_0 .. t_{M-1}` at which gradients were taken.
///
/// With `replacement == false` and `batch_size == len` the full batch is used
/// directly, which reproduces [`solve_pgd_from`] step for step.
pub fn solve_biased_sgd(problem: &ThresholdProblem, config: &SgdConfig) -> Result<ThresholdResult> {
    let n = config.batch_size;
    if n < 2 {
        return Err(Error::invalid("batch size must be at least 2"));
    }
    if !config.replacement && n > problem.len() {
        return Err(Error::invalid(format!(
            "batch size {n} exceeds the {} available samples without replacement",
            problem.len()
        )));
    }
    if !config.replacement && !problem.log_weights.is_empty() {
        return Err(Error::invalid("sampling without replacement requires a uniform batch"));
    }
    if config.iters == 0 {
        return Err(Error::invalid("iteration count must be at least 1"));
    }
    let step = config.step.unwrap_or_else(|| default_sgd_step(problem, config.iters));
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {step}")));
    }
    let mut warnings = Vec::new();
    warnings.extend(step_warning(problem, step));
    let start = match config.start {
        Some(s) => s,
        None => problem.empirical_quantile()?,
    };
    let full_batch = !config.replacement && n == problem.len();
    let sense = problem.sense();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sampler = MinibatchSampler::new(problem)?;
    let mut t = problem.project(start);
    let mut sum = 0.0;
    let mut trace = Vec::with_capacity(if config.record_trace { config.iters + 1 } else { 0 });
    for k in 0..config.iters {
        let g = if full_batch {
            problem.gradient(t)?
        } else {
            sampler.estimate(&mut rng, t, n, config.replacement)
        };
        if config.record_trace {
            trace.push(problem.trace_point(k, t, g, n)?);
        }
        sum += t;
        t = problem.project(t - sense * step * g);
    }
    // Rounding can push the mean of in-interval iterates one ulp outside.
    let avg = problem.project(sum / config.iters as f64);
    if config.record_trace {
        trace.push(problem.trace_point(config.iters, t, f64::NAN, n)?);
    }
    Ok(ThresholdResult {
        t_star: avg,
        objective_value: problem.objective(avg)?,
        gradient_at_star: problem.gradient(avg)?,
        method: Method::BiasedSgd,
        iterations: config.iters,
        averaged_iterate: Some(avg),
        final_iterate: t,
        trace,
        warnings,
    })
}

/// One row of the estimator study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub bias: f64,
    pub variance: f64,
    pub trials: usize,
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination.
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Empirical bias and variance of the minibatch gradient estimate at `t`
/// against the full-batch gradient, with minibatches drawn with replacement.
///
/// Trials run in fixed-size chunks with seeds derived from `(seed, N, chunk)`,
/// so results do not depend on the thread count.
pub fn estimator_bias_variance_study(
    problem: &ThresholdProblem,
    t: f64,
    n_list: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<StudyRow>> {
    if trials < 2 {
        return Err(Error::invalid("study needs at least two trials"));
    }
    if n_list.iter().any(|&n| n < 1) {
        return Err(Error::invalid("minibatch sizes must be positive"));
    }
    let exact = problem.gradient(t)?;
    const TRIAL_CHUNK: usize = 256;
    let chunks = trials.div_ceil(TRIAL_CHUNK);
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let parts: Vec<Result<(f64, f64)>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, n as u64, c as u64));
                let mut sampler = MinibatchSampler::new(problem)?;
                let count = TRIAL_CHUNK.min(trials - c * TRIAL_CHUNK);
                let (mut s1, mut s2) = (0.0, 0.0);
                for _ in 0..count {
                    let d = sampler.estimate(&mut rng, t, n, true) - exact;
                    s1 += d;
                    s2 += d * d;
                }
                Ok((s1, s2))
            })
            .collect();
        let (mut s1, mut s2) = (0.0, 0.0);
        for p in parts {
            let (a, b) = p?;
            s1 += a;
            s2 += b;
        }
        let m = trials as f64;
        let bias = s1 / m;
        let variance = (s2 / m - bias * bias) * m / (m - 1.0);
        rows.push(StudyRow {
            n,
            bias,
            variance,
            trials,
        });
    }
    Ok(rows)
}
