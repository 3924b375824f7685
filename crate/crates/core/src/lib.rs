//! Hierarchical episodic policy search driven by return-weighted density
//! estimation.
//!
//! Samples `(s, ξ, R)` are reweighted by `f(R) / π_old(ξ | s)`, a weighted
//! variational Gaussian mixture is fitted to the reweighted joint density,
//! and every surviving mixture component becomes an option policy. A
//! Gaussian-process model of the return selects among options per context.
//!
//! Module map:
//!
//! * [`data`], [`features`], [`rng`]: shared domain types.
//! * [`weighting`]: return transforms and normalized importance weights.
//! * [`mixest`]: importance-weighted VBEM, weighted ML-EM, option assignment.
//! * [`optpolicy`]: Gaussian option policies, eRWR and episodic REPS.
//! * [`gating`]: GP return model, uncertain-input prediction, option selection.
//! * [`embed`]: Laplacian eigenmaps.
//! * [`envs`]: benchmark tasks.
//! * [`harness`]: the outer learning loop, configuration and trace output.

pub mod data;
pub mod embed;
pub mod envs;
pub mod error;
pub mod features;
pub mod gating;
pub mod harness;
pub mod linalg;
pub mod mixest;
pub mod optpolicy;
pub mod rng;
pub mod weighting;

pub use error::{Error, Result};
