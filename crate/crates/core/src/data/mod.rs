//! Returns panels, ingestion, universe filters, ETF taxonomy and the synthetic
//! market generator.

mod io;
mod panel;
mod synth;
mod taxonomy;
mod universe;

pub use io::{
    load_dataset, load_factors, load_panel, write_factors_csv, write_meta_csv, write_returns_csv,
};
pub use panel::{AssetKind, AssetMeta, Calendar, ReturnsPanel};
pub use synth::{
    generate_synthetic_market, GroundTruth, LatentFactorSpec, StockGroup, SynthSpec,
};
pub use taxonomy::{merged_class, Taxonomy, TaxonomyEntry};
pub use universe::{build_universe, eligible_etfs, eligible_stocks, UniverseRules, UniverseSnapshot};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("{path}:{line}: asset `{asset_id}` has no metadata row")]
    UnknownAsset {
        path: String,
        line: u64,
        asset_id: String,
    },

    #[error("{path}:{line}: duplicate row for ({date}, {asset_id})")]
    Duplicate {
        path: String,
        line: u64,
        date: String,
        asset_id: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("taxonomy: {0}")]
    Taxonomy(String),

    #[error("window: {0}")]
    Window(String),

    #[error("missing risk-free return on {0}")]
    MissingRiskFree(chrono::NaiveDate),

    #[error("synthetic spec: {0}")]
    Spec(String),

    #[error("invalid panel: {0}")]
    Invalid(String),
}
