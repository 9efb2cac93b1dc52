//! Sample-based and grid-based distributions over small-dimensional spaces,
//! the Gaussian prior, reward fields and a weighted KDE for reporting.
//!
//! Weights are always stored as log weights and combined in log space; the
//! tilts used downstream reach `exp(100)` and beyond for small `alpha * (1 - beta)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, logsumexp};

/// Largest supported point dimension.
pub const MAX_DIM: usize = 4;

// ---------------------------------------------------------------------------
// Gaussian prior
// ---------------------------------------------------------------------------

/// Axis-aligned Gaussian `N(mean, diag(variance))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        let prior = GaussianPrior { mean, variance };
        prior.validate()?;
        Ok(prior)
    }

    /// `N(0, I_d)`.
    pub fn standard(dim: usize) -> Self {
        GaussianPrior {
            mean: vec![0.0; dim],
            variance: vec![1.0; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.is_empty() || self.mean.len() > MAX_DIM {
            return Err(Error::invalid(format!(
                "prior dimension must be in 1..={MAX_DIM}, got {}",
                self.mean.len()
            )));
        }
        if self.mean.len() != self.variance.len() {
            return Err(Error::invalid("prior mean and variance lengths differ"));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("prior mean must be finite"));
        }
        if self.variance.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("prior variances must be positive"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Normalized log density.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, m), v) in x.iter().zip(&self.mean).zip(&self.variance) {
            let d = xi - m;
            acc += -0.5 * d * d / v - 0.5 * (2.0 * std::f64::consts::PI * v).ln();
        }
        acc
    }
}

/// Draw `n` i.i.d. points from the prior with uniform weights.
pub fn sample_prior(prior: &GaussianPrior, n: usize, seed: u64) -> Result<SampleSet> {
    prior.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let dim = prior.dim();
    let sd: Vec<f64> = prior.variance.iter().map(|v| v.sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(n * dim);
    for _ in 0..n {
        for k in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            coords.push(prior.mean[k] + sd[k] * z);
        }
    }
    SampleSet::new(dim, coords)
}

// ---------------------------------------------------------------------------
// Reward fields
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum RewardKind {
    /// `sum_k coeffs[k] * x[k]`.
    Linear { coeffs: Vec<f64> },
    /// `exp(-0.5 * |x - mu|^2 / sigma^2)`.
    GaussianBump { mu: Vec<f64>, sigma: f64 },
    /// Values on a 2D lattice, looked up at the nearest cell (clamped at the
    /// border).
    Tabulated {
        lo: Vec<f64>,
        hi: Vec<f64>,
        n: usize,
        values: Vec<f64>,
    },
}

/// A deterministic scalar reward `r(x) = scale * kind(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RewardSpec", into = "RewardSpec")]
pub struct RewardField {
    kind: RewardKind,
    scale: f64,
}

impl RewardField {
    pub fn new(kind: RewardKind, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale != 0.0) {
            return Err(Error::invalid("reward scale must be finite and non-zero"));
        }
        match &kind {
            RewardKind::Linear { coeffs } => {
                if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::invalid("linear reward needs finite coefficients"));
                }
            }
            RewardKind::GaussianBump { mu, sigma } => {
                if !(sigma.is_finite() && *sigma > 0.0) {
                    return Err(Error::invalid("gaussian bump sigma must be positive"));
                }
                if mu.is_empty() || mu.iter().any(|m| !m.is_finite()) {
                    return Err(Error::invalid("gaussian bump center must be finite"));
                }
            }
            RewardKind::Tabulated { lo, hi, n, values } => {
                check_lattice(lo, hi, *n)?;
                if values.len() != n * n || values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("tabulated reward needs n*n finite values"));
                }
            }
        }
        Ok(RewardField { kind, scale })
    }

    pub fn linear(coeffs: Vec<f64>) -> Result<Self> {
        Self::new(RewardKind::Linear { coeffs }, 1.0)
    }

    pub fn gaussian_bump(mu: Vec<f64>, sigma: f64) -> Result<Self> {
        Self::new(RewardKind::GaussianBump { mu, sigma }, 1.0)
    }

    /// `r(x) = x_1 + x_2`.
    pub fn sum2() -> Self {
        Self::linear(vec![1.0, 1.0]).expect("static coefficients")
    }

    pub fn kind(&self) -> &RewardKind {
        &self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        Self::new(self.kind.clone(), scale)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let raw = match &self.kind {
            RewardKind::Linear { coeffs } => coeffs.iter().zip(x).map(|(c, v)| c * v).sum(),
            RewardKind::GaussianBump { mu, sigma } => {
                let d2: f64 = mu.iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum();
                (-0.5 * d2 / (sigma * sigma)).exp()
            }
            RewardKind::Tabulated { lo, hi, n, values } => {
                let cell = |k: usize| {
                    let h = (hi[k] - lo[k]) / *n as f64;
                    let idx = ((x[k] - lo[k]) / h).floor();
                    idx.clamp(0.0, (*n - 1) as f64) as usize
                };
                values[cell(0) * n + cell(1)]
            }
        };
        self.scale * raw
    }
}

/// Flat serialized form, e.g. `{"kind": "gaussian_bump", "mu": [2, 2], "sigma": 0.8}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardSpec {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coeffs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
    #[serde(default = "unit_scale")]
    scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl TryFrom<RewardSpec> for RewardField {
    type Error = Error;

    fn try_from(s: RewardSpec) -> Result<Self> {
        let missing = |field: &str| Error::invalid(format!("reward.{field} is required for kind {}", s.kind));
        let kind = match s.kind.as_str() {
            "linear" => RewardKind::Linear {
                coeffs: s.coeffs.clone().ok_or_else(|| missing("coeffs"))?,
            },
            "gaussian_bump" => RewardKind::GaussianBump {
                mu: s.mu.clone().ok_or_else(|| missing("mu"))?,
                sigma: s.sigma.ok_or_else(|| missing("sigma"))?,
            },
            "tabulated" => RewardKind::Tabulated {
                lo: s.lo.clone().ok_or_else(|| missing("lo"))?,
                hi: s.hi.clone().ok_or_else(|| missing("hi"))?,
                n: s.n.ok_or_else(|| missing("n"))?,
                values: s.values.clone().ok_or_else(|| missing("values"))?,
            },
            other => {
                return Err(Error::invalid(format!(
                    "reward.kind must be linear, gaussian_bump or tabulated, got {other:?}"
                )))
            }
        };
        RewardField::new(kind, s.scale)
    }
}

impl From<RewardField> for RewardSpec {
    fn from(r: RewardField) -> Self {
        let mut spec = RewardSpec {
            kind: String::new(),
            coeffs: None,
            mu: None,
            sigma: None,
            lo: None,
            hi: None,
            n: None,
            values: None,
            scale: r.scale,
        };
        match r.kind {
            RewardKind::Linear { coeffs } => {
                spec.kind = "linear".into();
                spec.coeffs = Some(coeffs);
            }
            RewardKind::GaussianBump { mu, sigma } => {
                spec.kind = "gaussian_bump".into();
                spec.mu = Some(mu);
                spec.sigma = Some(sigma);
            }
            RewardKind::Tabulated { lo, hi, n, values } => {
                spec.kind = "tabulated".into();
                spec.lo = Some(lo);
                spec.hi = Some(hi);
                spec.n = Some(n);
                spec.values = Some(values);
            }
        }
        spec
    }
}

// ---------------------------------------------------------------------------
// Sample sets
// ---------------------------------------------------------------------------

/// Weighted point cloud with cached rewards.
///
/// Points are stored row-major in one buffer. `log_weights == None` means
/// uniform weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    dim: usize,
    coords: Vec<f64>,
    rewards: Option<Vec<f64>>,
    log_weights: Option<Vec<f64>>,
}

impl SampleSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::invalid(format!("dimension must be in 1..={MAX_DIM}")));
        }
        if coords.is_empty() || !coords.len().is_multiple_of(dim) {
            return Err(Error::invalid("sample set needs at least one complete point"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("sample coordinates must be finite"));
        }
        Ok(SampleSet {
            dim,
            coords,
            rewards: None,
            log_weights: None,
        })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::invalid("points have inconsistent dimensions"));
        }
        Self::new(dim, points.concat())
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Evaluate and cache `reward` at every point.
    pub fn with_rewards(mut self, reward: &RewardField) -> Self {
        let values: Vec<f64> = self.coords.par_chunks_exact(self.dim).map(|p| reward.eval(p)).collect();
        self.rewards = Some(values);
        self
    }

    pub fn with_reward_values(mut self, rewards: Vec<f64>) -> Result<Self> {
        if rewards.len() != self.len() {
            return Err(Error::invalid("reward count does not match point count"));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("rewards must be finite"));
        }
        self.rewards = Some(rewards);
        Ok(self)
    }

    /// Replace the log weights (unnormalized is fine) and normalize.
    pub fn with_log_weights(mut self, log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.len() != self.len() {
            return Err(Error::invalid("log weight count does not match point count"));
        }
        self.log_weights = Some(log_weights);
        self.normalize()
    }

    pub fn has_rewards(&self) -> bool {
        self.rewards.is_some()
    }

    pub fn rewards(&self) -> Result<&[f64]> {
        self.rewards
            .as_deref()
            .ok_or_else(|| Error::invalid("rewards have not been evaluated on this sample set"))
    }

    pub fn log_weights(&self) -> Option<&[f64]> {
        self.log_weights.as_deref()
    }

    pub fn is_weighted(&self) -> bool {
        self.log_weights.is_some()
    }

    /// Normalized log weights (uniform `-ln n` when unweighted).
    pub fn normalized_log_weights(&self) -> Vec<f64> {
        match &self.log_weights {
            Some(lw) => {
                let z = logsumexp(lw);
                lw.iter().map(|l| l - z).collect()
            }
            None => vec![-(self.len() as f64).ln(); self.len()],
        }
    }

    /// Normalized linear weights.
    pub fn weights(&self) -> Vec<f64> {
        match &self.log_weights {
            Some(lw) => math::softmax(lw),
            None => vec![1.0 / self.len() as f64; self.len()],
        }
    }

    pub fn normalize(mut self) -> Result<Self> {
        if let Some(lw) = self.log_weights.as_mut() {
            if lw.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
                return Err(Error::invalid("log weights must not be NaN or +inf"));
            }
            let z = math::normalize_log(lw);
            if !z.is_finite() {
                return Err(Error::Degenerate("all weights are zero".into()));
            }
        }
        Ok(self)
    }

    pub fn effective_sample_size(&self) -> f64 {
        match &self.log_weights {
            Some(_) => math::effective_sample_size(&self.weights()),
            None => self.len() as f64,
        }
    }

    /// Add `increments[i]` to the log weight of point `i` and renormalize.
    pub fn reweight_by(&self, increments: &[f64]) -> Result<SampleSet> {
        if increments.len() != self.len() {
            return Err(Error::invalid("tilt length does not match point count"));
        }
        if increments.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("log tilt must be finite on every point"));
        }
        let base = self.normalized_log_weights();
        let lw = base.iter().zip(increments).map(|(b, d)| b + d).collect();
        let mut out = self.clone();
        out.log_weights = Some(lw);
        out.normalize()
    }

    /// Weighted mean of the points.
    pub fn mean_point(&self) -> Vec<f64> {
        let w = self.weights();
        let mut acc = vec![0.0; self.dim];
        for (p, wi) in self.points().zip(&w) {
            for (a, x) in acc.iter_mut().zip(p) {
                *a += wi * x;
            }
        }
        acc
    }
}

/// Self-normalized importance reweighting by `exp(log_tilt(x))`.
pub fn reweight<F>(set: &SampleSet, log_tilt: F) -> Result<SampleSet>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let inc: Vec<f64> = set.coords.par_chunks_exact(set.dim).map(&log_tilt).collect();
    set.reweight_by(&inc)
}

// ---------------------------------------------------------------------------
// Grid distributions
// ---------------------------------------------------------------------------

fn check_lattice(lo: &[f64], hi: &[f64], n: usize) -> Result<()> {
    if lo.len() != 2 || hi.len() != 2 {
        return Err(Error::invalid("grid corners must be 2-dimensional"));
    }
    if lo.iter().chain(hi).any(|v| !v.is_finite()) || !(hi[0] > lo[0] && hi[1] > lo[1]) {
        return Err(Error::invalid("grid requires finite hi > lo componentwise"));
    }
    if n < 2 {
        return Err(Error::invalid("grid resolution must be at least 2"));
    }
    Ok(())
}

/// Probability mass on a uniform `n x n` lattice over `[lo, hi]`, stored as log
/// mass in row-major order (`index = i * n + j`, `i` along the first axis).
#[derive(Clone, Debug, PartialEq)]
pub struct GridDistribution {
    lo: [f64; 2],
    hi: [f64; 2],
    n: usize,
    log_mass: Vec<f64>,
}

impl GridDistribution {
    /// Build from unnormalized log mass; the result is normalized.
    pub fn from_log_mass(lo: &[f64], hi: &[f64], n: usize, mut log_mass: Vec<f64>) -> Result<Self> {
        check_lattice(lo, hi, n)?;
        if log_mass.len() != n * n {
            return Err(Error::invalid(format!(
                "expected {} cells, got {}",
                n * n,
                log_mass.len()
            )));
        }
        if log_mass.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(Error::NumericOverflow("log mass contains NaN or +inf".into()));
        }
        let z = math::normalize_log(&mut log_mass);
        if !z.is_finite() {
            return Err(Error::Degenerate("grid has zero total mass".into()));
        }
        Ok(GridDistribution {
            lo: [lo[0], lo[1]],
            hi: [hi[0], hi[1]],
            n,
            log_mass,
        })
    }

    /// Discretize a log density: `log_mass = log_density(center) + log(area)`,
    /// then normalize.
    pub fn from_log_density<F>(lo: &[f64], hi: &[f64], n: usize, log_density: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        check_lattice(lo, hi, n)?;
        let shell = GridDistribution {
            lo: [lo[0], lo[1]],
            hi: [hi[0], hi[1]],
            n,
            log_mass: Vec::new(),
        };
        let log_area = shell.cell_area().ln();
        let lm: Vec<f64> = (0..n * n)
            .into_par_iter()
            .map(|k| log_density(&shell.cell_center(k)) + log_area)
            .collect();
        Self::from_log_mass(lo, hi, n, lm)
    }

    pub fn uniform(lo: &[f64], hi: &[f64], n: usize) -> Result<Self> {
        Self::from_log_mass(lo, hi, n, vec![0.0; n * n])
    }

    /// Discretized `N(mean, diag(variance))`.
    pub fn gaussian(prior: &GaussianPrior, lo: &[f64], hi: &[f64], n: usize) -> Result<Self> {
        prior.validate()?;
        if prior.dim() != 2 {
            return Err(Error::invalid("grid priors must be 2-dimensional"));
        }
        Self::from_log_density(lo, hi, n, |x| prior.log_density(x))
    }

    /// A new distribution on the same lattice.
    pub fn with_log_mass(&self, log_mass: Vec<f64>) -> Result<Self> {
        Self::from_log_mass(&self.lo, &self.hi, self.n, log_mass)
    }

    pub fn lo(&self) -> [f64; 2] {
        self.lo
    }

    pub fn hi(&self) -> [f64; 2] {
        self.hi
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.log_mass.is_empty()
    }

    pub fn log_mass(&self) -> &[f64] {
        &self.log_mass
    }

    pub fn masses(&self) -> Vec<f64> {
        self.log_mass.iter().map(|l| l.exp()).collect()
    }

    pub fn cell_width(&self) -> [f64; 2] {
        let n = self.n as f64;
        [(self.hi[0] - self.lo[0]) / n, (self.hi[1] - self.lo[1]) / n]
    }

    pub fn cell_area(&self) -> f64 {
        let [a, b] = self.cell_width();
        a * b
    }

    pub fn cell_center(&self, k: usize) -> [f64; 2] {
        let (i, j) = (k / self.n, k % self.n);
        let [hx, hy] = self.cell_width();
        [self.lo[0] + (i as f64 + 0.5) * hx, self.lo[1] + (j as f64 + 0.5) * hy]
    }

    /// Reward at every cell center, in cell order.
    pub fn evaluate(&self, reward: &RewardField) -> Vec<f64> {
        (0..self.len())
            .into_par_iter()
            .map(|k| reward.eval(&self.cell_center(k)))
            .collect()
    }

    /// `E[values]` under the cell masses.
    pub fn expectation(&self, values: &[f64]) -> f64 {
        self.log_mass.iter().zip(values).map(|(l, v)| l.exp() * v).sum()
    }

    /// Density values (mass divided by cell area).
    pub fn densities(&self) -> Vec<f64> {
        let area = self.cell_area();
        self.log_mass.iter().map(|l| l.exp() / area).collect()
    }

    pub fn same_lattice(&self, other: &GridDistribution) -> Result<()> {
        if self.n != other.n || self.lo != other.lo || self.hi != other.hi {
            return Err(Error::LatticeMismatch(format!(
                "{}x{} on {:?}..{:?} vs {}x{} on {:?}..{:?}",
                self.n, self.n, self.lo, self.hi, other.n, other.n, other.lo, other.hi
            )));
        }
        Ok(())
    }
}

/// Discretize a nonnegative density on `[lo, hi]` with `n x n` cells.
pub fn grid_from_density<F>(lo: &[f64], hi: &[f64], n: usize, density: F) -> Result<GridDistribution>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check_lattice(lo, hi, n)?;
    let probe = GridDistribution {
        lo: [lo[0], lo[1]],
        hi: [hi[0], hi[1]],
        n,
        log_mass: Vec::new(),
    };
    let values: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|k| density(&probe.cell_center(k)))
        .collect();
    if values.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::invalid("density must be nonnegative"));
    }
    if values.iter().all(|v| *v == 0.0) {
        return Err(Error::Degenerate("density is zero everywhere on the grid".into()));
    }
    let log_area = probe.cell_area().ln();
    GridDistribution::from_log_mass(lo, hi, n, values.iter().map(|v| v.ln() + log_area).collect())
}

// ---------------------------------------------------------------------------
// KDE
// ---------------------------------------------------------------------------

/// Weighted Gaussian KDE of scalar values.
///
/// Bandwidth is Scott's rule `std * m^(-1/5)` times `bandwidth_factor`, with the
/// weighted standard deviation and the effective sample size `m`. A sample with
/// zero spread falls back to unit scale.
pub fn kde_pdf_1d(
    values: &[f64],
    weights: Option<&[f64]>,
    bandwidth_factor: f64,
    eval_points: &[f64],
) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("KDE needs at least one value"));
    }
    if !(bandwidth_factor.is_finite() && bandwidth_factor > 0.0) {
        return Err(Error::invalid("bandwidth factor must be positive"));
    }
    let w: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != values.len() {
                return Err(Error::invalid("weights and values differ in length"));
            }
            let total: f64 = w.iter().sum();
            if !(total > 0.0) || w.iter().any(|x| *x < 0.0) {
                return Err(Error::invalid("KDE weights must be nonnegative with positive total"));
            }
            w.iter().map(|x| x / total).collect()
        }
        None => vec![1.0 / values.len() as f64; values.len()],
    };
    let mean: f64 = values.iter().zip(&w).map(|(v, wi)| v * wi).sum();
    let var: f64 = values.iter().zip(&w).map(|(v, wi)| wi * (v - mean).powi(2)).sum();
    let ess = math::effective_sample_size(&w);
    let spread = if var > 0.0 { var.sqrt() } else { 1.0 };
    let h = spread * ess.powf(-0.2) * bandwidth_factor;

    let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(w).filter(|p| p.1 > 0.0).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
    let reach = 9.0 * h;
    Ok(eval_points
        .par_iter()
        .map(|&x| {
            let start = pairs.partition_point(|p| p.0 < x - reach);
            let stop = pairs.partition_point(|p| p.0 <= x + reach);
            let mut acc = 0.0;
            for &(v, wi) in &pairs[start..stop] {
                let z = (x - v) / h;
                acc += wi * (-0.5 * z * z).exp();
            }
            acc * norm
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_prior_rejects_zero_and_is_deterministic() {
        let prior = GaussianPrior::standard(2);
        assert!(matches!(sample_prior(&prior, 0, 1), Err(Error::InvalidArgument(_))));
        let a = sample_prior(&prior, 100, 42).unwrap();
        let b = sample_prior(&prior, 100, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_prior(&prior, 100, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_means_match_prior_means() {
        let prior = GaussianPrior::standard(2);
        let s = sample_prior(&prior, 1_000_000, 7).unwrap();
        for m in s.mean_point() {
            assert!(m.abs() < 0.01, "mean {m}");
        }
        let shifted = GaussianPrior::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let s = sample_prior(&shifted, 1_000_000, 7).unwrap();
        for m in s.mean_point() {
            assert!((m - 1.0).abs() < 0.01, "mean {m}");
        }
    }

    #[test]
    fn linear_reward_variance_is_two() {
        let s = sample_prior(&GaussianPrior::standard(2), 100_000, 7)
            .unwrap()
            .with_rewards(&RewardField::sum2());
        let r = s.rewards().unwrap();
        let m = r.iter().sum::<f64>() / r.len() as f64;
        let v = r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / r.len() as f64;
        assert!((v - 2.0).abs() / 2.0 < 0.02, "var {v}");
    }

    #[test]
    fn prior_validation() {
        assert!(GaussianPrior::new(vec![0.0], vec![0.0]).is_err());
        assert!(GaussianPrior::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(GaussianPrior::new(vec![0.0; 5], vec![1.0; 5]).is_err());
    }

    #[test]
    fn uniform_density_grid() {
        let g = grid_from_density(&[-4.0, -4.0], &[4.0, 4.0], 100, |_| 3.0).unwrap();
        for m in g.masses() {
            assert!((m - 1e-4).abs() < 1e-12 * 1e-4 * 1e4);
        }
    }

    #[test]
    fn grid_density_errors() {
        assert!(matches!(
            grid_from_density(&[-1.0, -1.0], &[1.0, 1.0], 10, |_| 0.0),
            Err(Error::Degenerate(_))
        ));
        assert!(grid_from_density(&[-1.0, -1.0], &[1.0, 1.0], 10, |_| -1.0).is_err());
        assert!(grid_from_density(&[1.0, -1.0], &[1.0, 1.0], 10, |_| 1.0).is_err());
        assert!(grid_from_density(&[-1.0, -1.0], &[1.0, 1.0], 1, |_| 1.0).is_err());
    }

    #[test]
    fn gaussian_grid_symmetry_and_mean() {
        let g = GridDistribution::gaussian(&GaussianPrior::standard(2), &[-4.0, -4.0], &[4.0, 4.0], 200).unwrap();
        assert!(crate::math::logsumexp(g.log_mass()).abs() < 1e-10);
        let r = g.evaluate(&RewardField::sum2());
        // Cells on the anti-diagonal split evenly between the two half-planes.
        let below: f64 = g
            .masses()
            .iter()
            .zip(&r)
            .map(|(m, v)| {
                if *v < -1e-12 {
                    *m
                } else if v.abs() <= 1e-12 {
                    0.5 * m
                } else {
                    0.0
                }
            })
            .sum();
        assert!((below - 0.5).abs() < 5e-3, "below {below}");
        assert!(g.expectation(&r).abs() < 1e-3);
    }

    #[test]
    fn grid_from_density_scale_invariant() {
        let f = |x: &[f64]| (-(x[0] * x[0] + 2.0 * x[1] * x[1])).exp();
        let a = grid_from_density(&[-3.0, -3.0], &[3.0, 3.0], 50, f).unwrap();
        let b = grid_from_density(&[-3.0, -3.0], &[3.0, 3.0], 50, |x| 17.5 * f(x)).unwrap();
        for (x, y) in a.log_mass().iter().zip(b.log_mass()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn kde_single_and_symmetric_pairs() {
        let xs: Vec<f64> = (-50..=50).map(|k| k as f64 * 0.1).collect();
        let single = kde_pdf_1d(&[0.0], None, 0.25, &xs).unwrap();
        for k in 0..xs.len() {
            assert!((single[k] - single[xs.len() - 1 - k]).abs() < 1e-12);
        }
        let pair = kde_pdf_1d(&[-1.0, 1.0], Some(&[0.5, 0.5]), 0.25, &xs).unwrap();
        for k in 0..xs.len() {
            assert!((pair[k] - pair[xs.len() - 1 - k]).abs() < 1e-12);
        }
        assert!(kde_pdf_1d(&[1.0], Some(&[0.0]), 0.25, &xs).is_err());
        assert!(kde_pdf_1d(&[], None, 0.25, &xs).is_err());
        assert!(kde_pdf_1d(&[1.0], None, 0.0, &xs).is_err());
    }

    #[test]
    fn kde_mode_of_normal_and_unit_integral() {
        let s = sample_prior(&GaussianPrior::standard(2), 100_000, 3)
            .unwrap()
            .with_rewards(&RewardField::sum2());
        let r = s.rewards().unwrap();
        let at0 = kde_pdf_1d(r, None, 0.25, &[0.0]).unwrap()[0];
        let exact = 1.0 / (4.0 * std::f64::consts::PI).sqrt();
        assert!((at0 - exact).abs() / exact < 0.05, "kde(0) = {at0}");

        let grid: Vec<f64> = (0..=2000).map(|k| -10.0 + k as f64 * 0.01).collect();
        let pdf = kde_pdf_1d(r, None, 0.25, &grid).unwrap();
        let integral: f64 = pdf.iter().sum::<f64>() * 0.01;
        assert!((integral - 1.0).abs() < 1e-2);
    }

    #[test]
    fn reweight_identity_constant_and_gaussian_tilt() {
        let s = sample_prior(&GaussianPrior::standard(2), 1000, 11).unwrap();
        let base = s.weights();
        let same = reweight(&s, |_| 0.0).unwrap();
        let shifted = reweight(&s, |_| 123.4).unwrap();
        for ((a, b), c) in base.iter().zip(same.weights()).zip(shifted.weights()) {
            assert!((a - b).abs() < 1e-15);
            assert!((a - c).abs() < 1e-15);
        }
        assert!(reweight(&s, |_| f64::NAN).is_err());

        let big = sample_prior(&GaussianPrior::standard(2), 1_000_000, 7).unwrap();
        let tilted = reweight(&big, |x| x[0] + x[1]).unwrap();
        for m in tilted.mean_point() {
            assert!((m - 1.0).abs() < 0.02, "tilted mean {m}");
        }
    }

    #[test]
    fn reward_field_serde_and_validation() {
        let r: RewardField = serde_json::from_str(r#"{"kind":"gaussian_bump","mu":[2,2],"sigma":0.8}"#).unwrap();
        assert!((r.eval(&[2.0, 2.0]) - 1.0).abs() < 1e-15);
        let back: RewardField = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(r, back);
        assert!(serde_json::from_str::<RewardField>(r#"{"kind":"gaussian_bump","mu":[0,0],"sigma":0}"#).is_err());
        assert!(serde_json::from_str::<RewardField>(r#"{"kind":"linear","coeffs":[1],"bogus":1}"#).is_err());
        assert!(serde_json::from_str::<RewardField>(r#"{"kind":"quadratic"}"#).is_err());

        let tab = RewardField::new(
            RewardKind::Tabulated {
                lo: vec![0.0, 0.0],
                hi: vec![2.0, 2.0],
                n: 2,
                values: vec![1.0, 2.0, 3.0, 4.0],
            },
            2.0,
        )
        .unwrap();
        assert_eq!(tab.eval(&[0.5, 1.5]), 4.0);
        assert_eq!(tab.eval(&[9.0, -9.0]), 6.0);
    }
}
