//! Endemic-epidemic models for multivariate weekly count time series.
//!
//! The conditional mean of each unit combines an endemic log-linear rate
//! with an autoregressive epidemic part that feeds back past counts
//! through normalized serial-interval lag weights and spatial power-law
//! weights. Counts are negative binomial given the past.

pub mod data;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod inference;
pub mod model;
pub mod par;
pub mod weights;

pub use error::{Error, ErrorCategory, Result};
