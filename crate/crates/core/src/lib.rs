//! Bayesian variable selection with uninformed, thresholded-informed and
//! locally balanced Metropolis-Hastings samplers over sparse linear regression
//! models, plus exact finite-chain analysis for small model spaces.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod linalg;
pub mod oracle;
pub mod posterior;
pub mod proposals;
pub mod sampler;
pub mod verify;

pub use error::{Error, Result};
