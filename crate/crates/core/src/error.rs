use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed numeric field or ragged row while reading a CSV file.
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    /// Group layout does not partition the columns (overlap, gap, or bad syntax).
    #[error("group layout error: {0}")]
    Layout(String),

    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Operand dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// All pairwise distances are zero; the median heuristic has no scale.
    /// Use a fixed bandwidth instead.
    #[error("degenerate bandwidth: all samples identical; use a fixed bandwidth")]
    DegenerateBandwidth,

    /// An eigenvalue fell below the PSD tolerance.
    #[error("matrix is not positive semi-definite: eigenvalue {min_eigenvalue} < -1e-10")]
    NotPsd { min_eigenvalue: f64 },

    /// Eigenvalue gradient requested at a (numerically) repeated eigenvalue.
    #[error("eigenvalue {index} is degenerate (gap {gap} <= 1e-8); gradient undefined")]
    DegenerateEigenvalue { index: usize, gap: f64 },

    /// alpha < 1 with a singular matrix: lambda^(alpha-1) diverges.
    #[error("singular matrix power: alpha = {alpha} < 1 with zero eigenvalues")]
    SingularPower { alpha: f64 },

    /// Operation not defined for the given configuration.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at epoch {epoch}: {msg}")]
    Divergence { epoch: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Whether the error is a usage problem (bad flag value, bad layout) as
    /// opposed to a runtime failure. The CLI maps usage errors to exit code 2.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Layout(_) | Error::Argument(_))
    }
}
