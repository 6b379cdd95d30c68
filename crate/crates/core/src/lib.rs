//! Data valuation engine.
//!
//! Computes per-point data values for a training split under a family of
//! marginal-contribution, gradient and out-of-bag algorithms, and scores the
//! resulting values with noisy-data detection and point removal/addition
//! curves.
//!
//! The modules build on each other bottom-up:
//!
//! - [`dataset`]: loading, synthetic generators, splits and noise injection.
//! - [`learners`]: small deterministic models refit inside utility calls.
//! - [`utility`]: set functions over training subsets.
//! - [`marginal`]: truncated Monte Carlo permutation sampling.
//! - [`ot`]: entropic optimal transport dual potentials.
//! - [`valuators`]: one entry point per valuation algorithm.
//! - [`evaluation`]: the downstream tasks.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod learners;
pub mod marginal;
pub mod ot;
pub mod rng;
pub mod utility;
pub mod valuators;

pub use dataset::{Dataset, Labels, NoiseKind, NoiseRecord, SplitIndices, Task};
pub use error::{Error, Result};
pub use learners::{FittedModel, LearnerSpec};
pub use marginal::{ConvergenceConfig, MarginalAccumulator};
pub use utility::{Metric, Utility, UtilitySpec};
pub use valuators::ValueVector;
