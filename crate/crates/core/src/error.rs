use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("basis mismatch: bond {bond} reconstructs to {reconstructed} but has length {length} (relative residual {residual:.3e})")]
    BasisMismatch {
        bond: usize,
        length: f64,
        reconstructed: f64,
        residual: f64,
    },

    #[error("unsupported variant: {0}")]
    UnsupportedVariant(String),

    #[error("missing levels in ({k_lo}, {k_hi}]: expected {expected}, found {found}")]
    MissingLevels {
        k_lo: f64,
        k_hi: f64,
        expected: f64,
        found: usize,
    },

    #[error("missing crossings: expected rate {expected_rate}, observed {observed_rate} over {crossings} crossings")]
    MissingCrossings {
        expected_rate: f64,
        observed_rate: f64,
        crossings: usize,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("ambiguous sheet count along x{direction}: votes {votes:?}")]
    AmbiguousSheets {
        direction: usize,
        votes: Vec<(usize, usize)>,
    },

    #[error("sum rule violated: sum m_i l_i = {lhs}, 2 L_tot = {rhs}")]
    SumRuleViolation { lhs: f64, rhs: f64 },

    #[error("branch continuation lost the surface near ({x}, {y}): {reason}")]
    Continuation { x: f64, y: f64, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{command}: {source}")]
    Command {
        command: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for configuration problems, 3 for
    /// numerical or audit failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::InvalidInput(_) | Error::BasisMismatch { .. } => 2,
            Error::Command { source, .. } => source.exit_code(),
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}
