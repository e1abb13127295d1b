//! Directed financial networks from multivariate mixture transition
//! distribution models, excess-strength assortativity, and
//! assortativity-penalized portfolio selection in a rolling backtest.

pub mod assortativity;
pub mod backtest;
pub mod error;
pub mod marketdata;
pub mod mtd;
pub mod network;
pub mod plot;
pub mod portfolio;
pub mod simplex;

pub use error::{Error, Result};
