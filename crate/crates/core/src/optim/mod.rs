//! L-BFGS and the alternating scale/translation vs. rotation fit.

mod alternate;
mod lbfgs;

pub use alternate::{
    alternate_fit, alternate_fit_problem, parameter_delta, AlternationConfig, AlternationOutcome,
};
pub use lbfgs::{lbfgs_minimize, lbfgs_minimize_split, LbfgsConfig, LbfgsResult, Termination};
