//! Bayesian inference for per-aspect ratings with user-group biases.
//!
//! Users rate items on several aspects using an ordinal scale. Each item has
//! an intrinsic quality vector, each user belongs to a latent group with a
//! shared bias offset, and the rating on each aspect comes from a
//! stick-breaking ordinal likelihood over a latent continuous response.
//! Posterior inference is a Gibbs sampler using Pólya-Gamma augmentation.

pub mod baselines;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod gibbs;
pub mod io;
pub mod linalg;
pub mod polya_gamma;
pub mod rng;
pub mod stats;
pub mod stick_breaking;
pub mod synthetic;

pub use baselines::{fit_baseline, BaselineKind, BiasMode};
pub use config::{CutpointRule, Hyperparameters, RunConfig};
pub use data::{Observation, RatingsDataset, RawRating};
pub use error::{Error, Result};
pub use gibbs::{fit, fit_kind, ColdStart, LatentState, PosteriorSamples, Prediction, Sampler, SamplerFailure, Snapshot};
pub use stick_breaking::CutPoints;
pub use io::{read_model, read_ratings, write_model, write_ratings, BiasLabel, FittedModel};
