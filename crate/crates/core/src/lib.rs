//! Adaptive multi-factor (AMF) asset pricing with groupwise interpretable
//! basis selection (GIBS), plus the low-volatility anomaly analysis built on
//! top of it.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`]: returns panels, CSV ingestion, universe filters, the ETF
//!   taxonomy and a synthetic market generator with known factor structure.
//! * [`portfolio`]: trailing volatility, quartile portfolios, equal-weighted
//!   portfolio returns and cumulative capital.
//! * [`linreg`]: OLS with inference, market projection and nested ANOVA.
//! * [`lasso`]: coordinate-descent LASSO, regularization paths,
//!   cross-validation and the capped λ rule.
//! * [`protoclust`]: correlation distance and minimax-linkage prototype
//!   clustering.
//! * [`gibs`]: basis selection, the factor-model registry and the rolling
//!   window engine.
//! * [`stats`]: the test battery and report tables.
//! * [`pipeline`]: run configuration and end-to-end orchestration used by the
//!   command-line tool.

pub mod data;
pub mod gibs;
pub mod lasso;
pub mod linreg;
pub mod pipeline;
pub mod portfolio;
pub mod protoclust;
pub mod stats;

mod error;
mod seed;

pub use error::{Error, Result};
pub use seed::mix_seed;

/// Fama-French five factor identifiers, market first.
pub const FF5_IDS: [&str; 5] = ["mkt_rf", "smb", "hml", "rmw", "cma"];

/// Identifier of the risk-free series.
pub const RISK_FREE_ID: &str = "rf";
