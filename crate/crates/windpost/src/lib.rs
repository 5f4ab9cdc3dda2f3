//! Statistical post-processing of NWP wind-speed forecasts.
//!
//! Fits parametric predictive distributions (truncated normal, log-normal,
//! GEV, and two-component mixtures) to forecast-observation archives by
//! minimizing sampled weighted-CRPS losses with pathwise gradients, and
//! verifies the results with Brier skill scores, reliability diagrams and
//! bootstrap bands.

pub mod artifact;
pub mod bagging;
pub mod data;
pub mod dists;
pub mod hyperopt;
pub mod error;
pub mod exec;
pub mod math;
pub mod optim;
pub mod params;
pub mod scoring;
pub mod verify;

pub use error::{Error, Result};
