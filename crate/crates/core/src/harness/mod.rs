//! Scenario files, Monte-Carlo experiments and their metrics.

mod experiment;
mod metrics;
mod scenario;

pub use experiment::*;
pub use metrics::*;
pub use scenario::*;
