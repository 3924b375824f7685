//! Gating: a GP model of the return over `z = [ξ; s]` and the rule that
//! picks an option for a context from the GP's expected return under each
//! option's Gaussian.

mod gp;
mod hyper;
mod select;
mod uncertain;

pub use gp::{se_kernel, GpHyper, GpReturnModel, InputScaler, PriorMean};
pub use hyper::{
    gp_optimize_hypers, gp_optimize_hypers_with, log_marginal_likelihood, HyperSearch,
};
pub use select::{select_option, GatingMode, Selection};
pub use uncertain::UncertainInput;
