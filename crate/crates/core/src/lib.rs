//! Tail-aware fine-tuning math on small, exactly representable distributions.
//!
//! The crate covers the two-stage CVaR procedure end to end:
//!
//! - [`threshold`]: the scalar dual objectives over the threshold `t` and their
//!   solvers (golden-section, projected gradient descent, biased minibatch SGD).
//! - [`tilt`]: pseudo-rewards and the exponentially tilted target distributions,
//!   realized by importance reweighting of samples or exactly on a grid.
//! - [`fdc`]: the prior-anchored distribution operator iterated on a grid, used as
//!   the iterative baseline the closed-form target is compared against.
//! - [`risk`] and [`diagnostics`]: VaR/CVaR functionals, grid divergences, the
//!   threshold-sensitivity sweep and finite-difference oracles.
//!
//! Everything is deterministic given a seed, and every weight is kept in log space.

pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod fdc;
pub mod io;
pub mod math;
pub mod pipeline;
pub mod risk;
pub mod threshold;
pub mod tilt;

pub use distributions::{GaussianPrior, GridDistribution, RewardField, RewardKind, SampleSet};
pub use error::{Error, Result};
pub use risk::{EmpiricalDistribution, RiskReport};
pub use threshold::{Method, TailMode, ThresholdProblem, ThresholdResult};
pub use tilt::{TiltMode, TiltSpec};
