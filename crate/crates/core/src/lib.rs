//! Synthetic school-absenteeism surveillance: population and epidemic
//! simulation, absenteeism tables, lag-logistic alerting, and alert-quality
//! metrics over a lag/threshold grid.

pub mod config;
pub mod detection;
pub mod epidemic;
pub mod error;
pub mod figures;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod population;
pub mod stochastics;
pub mod surveillance;

pub use config::RunConfig;
pub use error::{Error, ErrorKind, Result};
pub use stochastics::{derive_stream, RngStream};
