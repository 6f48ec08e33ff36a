use thiserror::Error;

/// Errors produced by the library.
///
/// The variants split into two families that the command line maps onto
/// distinct exit codes: configuration problems (bad input, inconsistent
/// model) and numerical failures (singular blocks, non-convergence).
#[derive(Debug, Error)]
pub enum Error {
    #[error("basis index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("coordinate {value} of covariate {covariate} lies outside [0, 1]")]
    OutOfDomain { covariate: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid design law: {0}")]
    DesignLaw(String),

    #[error("{block} block is numerically singular (condition number {condition:.3e})")]
    SingularBlock { block: &'static str, condition: f64 },

    #[error("population Gram is not positive semidefinite (minimum eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("backfitting cannot converge: empirical minimal-angle cosine {rho:.12} is too close to 1")]
    NonConvergence { rho: f64 },

    #[error("rate fit needs positive mean risks, got {value} at n = {n}")]
    NonPositiveRisk { n: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("serialization error: {0}")]
    Serialize(#[from] toml::ser::Error),
}

impl Error {
    /// True for errors that stem from the numerics rather than from the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularBlock { .. }
                | Error::NotPositiveSemidefinite { .. }
                | Error::NonConvergence { .. }
                | Error::NonPositiveRisk { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
