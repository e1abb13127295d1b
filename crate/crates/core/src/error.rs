use std::path::PathBuf;

use thiserror::Error;

use crate::assortativity::Modality;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),

    /// Bad input data or parameters (exit code 2 at the CLI).
    #[error("invalid input: {0}")]
    Input(String),

    #[error("asset {ticker} has identical returns over the window")]
    DegenerateAsset { ticker: String },

    /// Zero weighted variance of the excess strengths on one end of the edges.
    #[error("degenerate assortativity in mode {modality}: zero variance of {end} excess strength")]
    DegenerateAssortativity {
        modality: Modality,
        end: &'static str,
    },

    #[error("personalized pagerank did not converge (residual {residual:e} after {iterations} iterations)")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("infeasible portfolio problem: {0}")]
    Infeasible(String),

    #[error("edge ({0}, {1}) does not exist")]
    MissingEdge(usize, usize),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateAsset { .. } | Error::DegenerateAssortativity { .. } => 3,
            Error::NoConvergence { .. } => 3,
            Error::Infeasible(_) => 4,
            _ => 2,
        }
    }
}
