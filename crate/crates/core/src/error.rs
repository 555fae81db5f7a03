use thiserror::Error;

/// Broad failure category, used by front ends to map errors to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input: inconsistent configuration, invalid geometry or coefficients.
    Input,
    /// A numerical procedure failed (non-convergence, blow-up).
    Solver,
    /// Filesystem or serialization failure.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate lattice: basis vectors are linearly dependent (det = {0:e})")]
    DegenerateLattice(f64),
    #[error("field is not invertible at grid point {index}")]
    NonInvertibleField { index: usize },
    #[error("coefficient is not positive definite at x = {point:?} (min eigenvalue {min_eig:e})")]
    NotPositive { point: [f64; 3], min_eig: f64 },
    #[error("right-hand side has nonzero mean (|mean| = {0:e})")]
    NonZeroMean(f64),
    #[error("right-hand side is not divergence-free (relative divergence {0:e})")]
    NotDivergenceFree(f64),
    #[error("{solver} did not converge in {iterations} iterations (relative residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("direction must be a unit vector, got |theta| = {0}")]
    NonUnitDirection(f64),
    #[error("branches are not degenerate at theta0 (gamma1 = {g1}, gamma2 = {g2})")]
    NotDegenerate { g1: f64, g2: f64 },
    #[error("grid does not resolve eps = 1/{n}: {reason}")]
    Unresolved { n: usize, reason: String },
    #[error("energy guard tripped at step {step}: relative drift {drift:e}")]
    EnergyBlowUp { step: usize, drift: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NoConvergence { .. }
            | Error::EnergyBlowUp { .. }
            | Error::NotDivergenceFree(_)
            | Error::NonZeroMean(_) => ErrorKind::Solver,
            Error::Io(_) | Error::Json(_) => ErrorKind::Io,
            _ => ErrorKind::Input,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
