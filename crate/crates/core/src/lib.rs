//! Mean-to-risk ratio portfolio optimization: Sharpe, Fano and general
//! `E / f(V)` maximizers, long-only relaxation, factor and statistical risk
//! models, multiply-optimized long-short weights and an intraday backtest.

pub mod backtest;
pub mod costs;
pub mod density;
pub mod error;
pub mod linalg;
pub mod long_only;
pub mod long_short;
pub mod market_data;
pub mod ratio;
pub mod risk;
mod serde_util;

pub use error::{Error, Result};
