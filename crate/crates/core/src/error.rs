use thiserror::Error;

use crate::expr::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),

    #[error("integration of `{env}` diverged in {attempts} consecutive attempts")]
    Diverged { env: String, attempts: usize },

    #[error("no data survived binning (bins={bins}, min_count={min_count})")]
    EmptyBinning { bins: usize, min_count: usize },

    #[error("binning grid with {bins}^{dims} cells exceeds the supported size")]
    GridTooLarge { bins: usize, dims: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed data file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
