//! File formats, trial statistics and the experiment runner around
//! [`sing_core`].
//!
//! * [`io`]: samples CSV, graph JSON, adjacency and matrix CSV.
//! * [`metrics`]: Student-t confidence intervals for repeated trials.
//! * [`experiment`]: seeded multi-trial runs with error-versus-n summaries.

pub mod experiment;
pub mod io;
pub mod metrics;

pub use sing_core;
