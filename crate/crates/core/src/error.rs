use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate {0} lies outside [0, 1]")]
    Domain(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("a level-0 cell has no parent")]
    NoParent,
    #[error("invalid cell: {0}")]
    InvalidCell(String),
    #[error("malformed tree: {0}")]
    Structure(String),
    #[error("malformed document: {0}")]
    Document(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from bad input rather than a failure of the
    /// environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
