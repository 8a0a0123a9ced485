use std::path::PathBuf;

/// Everything that can go wrong between loading a cloud and writing an embedding.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: parse error at row {row}, column {col}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        msg: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("node {target} is not reachable from node {source_node}")]
    NoPath { source_node: usize, target: usize },

    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("degenerate fit: {0}")]
    FitDegenerate(String),

    #[error("no shared samples between paths; nothing to optimize")]
    NoIntersections,

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("direction of path {path} vanished before normalization")]
    ZeroDirection { path: usize },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure comes from the numerics rather than from the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoIntersections
                | Error::RankDeficient(_)
                | Error::ZeroDirection { .. }
                | Error::FitDegenerate(_)
                | Error::UndefinedCorrelation(_)
                | Error::Internal(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
