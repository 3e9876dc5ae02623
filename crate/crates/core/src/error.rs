use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SsdrError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("oracle size exceeded: n = {n} > {max}")]
    OracleSizeExceeded { n: usize, max: usize },

    #[error("numerical error: {0}")]
    NumericalError(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("degenerate response: y is constant")]
    DegenerateResponse,

    #[error("invalid dimension: h = {h}, allowed 1..={max}")]
    InvalidDimension { h: usize, max: usize },

    #[error("rank-deficient basis")]
    RankDeficient,

    #[error("all variables eliminated")]
    AllVariablesEliminated,

    #[error("only {survivors} variables survive, need at least h = {h}")]
    InsufficientSurvivors { survivors: usize, h: usize },

    #[error("no valid fit on the penalty grid")]
    NoValidFit,

    #[error("truth set is empty")]
    InvalidTruth,

    #[error("singular latent Gram matrix")]
    SingularFit,

    #[error("invalid study spec: {0}")]
    InvalidSpec(String),

    #[error("parse error at row {row}, column {column}: {reason}")]
    ParseError {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("unknown column: {0}")]
    InvalidColumn(String),

    #[error("no rows remain after filtering")]
    EmptyAfterFilter,

    #[error("io error: {0}")]
    Io(String),

    #[error("{0}")]
    Usage(String),
}

impl SsdrError {
    /// Broad category used to pick the CLI exit code.
    pub fn category(&self) -> ErrorCategory {
        use SsdrError::*;
        match self {
            InvalidInput(_)
            | ParseError { .. }
            | InvalidColumn(_)
            | EmptyAfterFilter
            | Io(_)
            | InvalidSpec(_)
            | InvalidTruth
            | OracleSizeExceeded { .. } => ErrorCategory::Data,
            InvalidDimension { .. } | Usage(_) => ErrorCategory::Usage,
            NumericalError(_)
            | DegenerateDesign(_)
            | DegenerateResponse
            | RankDeficient
            | AllVariablesEliminated
            | InsufficientSurvivors { .. }
            | NoValidFit
            | SingularFit => ErrorCategory::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numerical,
}

impl ErrorCategory {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorCategory::Usage => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Numerical => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Usage => "usage",
            ErrorCategory::Data => "data",
            ErrorCategory::Numerical => "numerical",
        }
    }
}

impl From<std::io::Error> for SsdrError {
    fn from(e: std::io::Error) -> Self {
        SsdrError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SsdrError>;
