use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("row {row}, column {col}: cannot parse {value:?} as a number")]
    Parse { row: usize, col: usize, value: String },

    #[error("row {row} has {found} fields, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("unknown column {0:?}")]
    UnknownColumn(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },

    #[error("column {col} is constant")]
    ConstantColumn { col: usize },

    #[error("invalid label {label}: logarithm undefined")]
    InvalidLabel { label: i64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("theta = {0} requested; only exact gradients (theta = 0) are implemented")]
    ThetaUnsupported(f64),

    #[error("row {row} has zero distance to every other point (duplicate points)")]
    DuplicatePoints { row: usize },

    #[error("embedding became non-finite at iteration {iteration}")]
    NonFiniteEmbedding { iteration: usize },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("component {component} is degenerate: {detail}")]
    DegenerateComponent { component: usize, detail: String },

    #[error("component {component} emptied out after {reseeds} re-seeds")]
    EmptyComponent { component: usize, reseeds: usize },

    #[error("observation {row} has zero density under every component")]
    UnsupportedPoint { row: usize },

    #[error("all {starts} EM starts failed: {reasons}")]
    AllStartsFailed { starts: usize, reasons: String },

    #[error("every sweep cell failed")]
    SweepFailed,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            InvalidArgument(_) | ThetaUnsupported(_) | UnknownColumn(_) => ErrorKind::Config,
            MissingFile(_) | Io { .. } | Csv(_) | Parse { .. } | Ragged { .. }
            | NonFiniteInput { .. } | ConstantColumn { .. } | InvalidLabel { .. }
            | DuplicatePoints { .. } => ErrorKind::Data,
            NonFiniteEmbedding { .. } | NotPositiveDefinite | DegenerateComponent { .. }
            | EmptyComponent { .. } | UnsupportedPoint { .. } | AllStartsFailed { .. }
            | SweepFailed => ErrorKind::Numerical,
        }
    }

    /// Short machine-readable tag, used for "Not Estimated" sweep cells.
    pub fn reason_code(&self) -> String {
        use Error::*;
        match self {
            DegenerateComponent { component, .. } => format!("degenerate_component:{component}"),
            EmptyComponent { component, .. } => format!("empty_component:{component}"),
            UnsupportedPoint { row } => format!("unsupported_point:{row}"),
            NotPositiveDefinite => "not_positive_definite".into(),
            AllStartsFailed { reasons, .. } => format!("all_starts_failed[{reasons}]"),
            NonFiniteEmbedding { iteration } => format!("non_finite_embedding:{iteration}"),
            InvalidArgument(_) => "invalid_argument".into(),
            other => format!("{:?}", other.kind()).to_lowercase(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
