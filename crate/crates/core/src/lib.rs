//! Trend-aware transformer forecasting for daily FX returns.

pub mod backtest;
pub mod data;
pub mod error;
pub mod eval;
pub mod interpret;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
