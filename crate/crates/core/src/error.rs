use thiserror::Error;

use crate::data::DataError;
use crate::lasso::LassoError;
use crate::linreg::RegressionError;
use crate::portfolio::PortfolioError;
use crate::protoclust::ClusterError;
use crate::stats::StatsError;

/// Top-level error for the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Portfolio(#[from] PortfolioError),

    #[error(transparent)]
    Regression(#[from] RegressionError),

    #[error(transparent)]
    Lasso(#[from] LassoError),

    #[error(transparent)]
    Cluster(#[from] ClusterError),

    #[error(transparent)]
    Stats(#[from] StatsError),

    #[error("window ending {date}: {source}")]
    Window {
        date: chrono::NaiveDate,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
