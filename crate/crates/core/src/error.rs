use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage of the test-projection construction, attached to errors so
/// callers can tell which step failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Canonicalize,
    MinorContext,
    Window,
    QAssembly,
    Orthonormalize,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Canonicalize => "canonicalize",
            Stage::MinorContext => "minor-context",
            Stage::Window => "window",
            Stage::QAssembly => "q-assembly",
            Stage::Orthonormalize => "orthonormalize",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("rank deficient: row {row} lies in the span of the preceding rows")]
    RankDeficient { row: usize },
    #[error("index {index} out of range {lo}..={hi}")]
    OutOfRange { index: usize, lo: usize, hi: usize },
    #[error("matrix is numerically singular (s_min/s_max = {ratio:e})")]
    NearSingular { ratio: f64 },
    #[error("sequence is not nonincreasing at index {index}")]
    NotMonotone { index: usize },
    #[error("sequence vanishes at index {index}")]
    ZeroAt { index: usize },
    #[error("no admissible spectral window in [{lo}, {hi}]")]
    NoWindow { lo: usize, hi: usize },
    #[error("eigensolver did not converge")]
    NoConvergence,
    #[error("overlapping or invalid index pair: {0}")]
    InvalidIndexPair(String),
    #[error("matrix is not a coisometry (||PP* - I|| = {0:e})")]
    NotCoisometry(f64),
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, stage: Stage) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }
}
