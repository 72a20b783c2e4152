use thiserror::Error;

/// Crate-wide error type. Exit-code mapping lives in the binary: config
/// problems exit 2, numeric/solver problems exit 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("integration failed: {0}")]
    Integration(String),

    /// Marginal or conditional density underflowed (< 1e-300). `sign` is the
    /// sign of the information density limit: +1 when only the marginal
    /// underflowed, -1 when only the conditional did.
    #[error("density underflow (sign {sign})")]
    DensityUnderflow { sign: i8 },

    #[error("design matrix is numerically singular (condition estimate {cond:.3e})")]
    SingularDesign { cond: f64 },

    #[error("not enough samples: got {got}, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("covariance is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NotPsd { min_eig: f64 },

    #[error("infeasible query: {0}")]
    Infeasible(String),

    #[error("solver did not converge: {0}")]
    SolverNoConverge(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for config, 3 for numeric trouble.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}
