//! Fixtures shared by the benchmarks.

use tailtilt_core::{GaussianPrior, GridDistribution, RewardField, SampleSet, TailMode, ThresholdProblem};

/// `n` standard-normal points in 2D with `r = x1 + x2`.
pub fn gaussian_batch(n: usize, seed: u64) -> SampleSet {
    tailtilt_core::distributions::sample_prior(&GaussianPrior::standard(2), n, seed)
        .expect("valid prior")
        .with_rewards(&RewardField::sum2())
}

pub fn right_problem(n: usize) -> ThresholdProblem {
    ThresholdProblem::from_samples(TailMode::Right, 1.0, 0.8, &gaussian_batch(n, 7)).expect("valid problem")
}

/// Standard normal prior on `[-4, 4]^2` with `n` cells per axis.
pub fn prior_grid(n: usize) -> GridDistribution {
    GridDistribution::gaussian(&GaussianPrior::standard(2), &[-4.0, -4.0], &[4.0, 4.0], n).expect("valid grid")
}

pub fn bump_reward() -> RewardField {
    RewardField::gaussian_bump(vec![2.0, 2.0], 0.8).expect("valid bump")
}
