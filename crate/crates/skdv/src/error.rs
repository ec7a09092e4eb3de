use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("covariance spectrum has a negative mode (min {min:.3e})")]
    NegativeSpectrum { min: f64 },

    #[error("newton iteration did not converge after {iters} iterations (residual {residual:.3e})")]
    NewtonDiverged { iters: usize, residual: f64 },

    #[error("modulation system is numerically singular (det {det:.3e})")]
    SingularSystem { det: f64 },

    #[error("field became non-finite at step {step} (t = {t})")]
    NonFinite { step: u64, t: f64 },

    #[error("eigenvalue solve failed (lapack info = {0})")]
    Lapack(i32),

    #[error("semigroup norm did not decay (fitted rate {0:.3e})")]
    NoDecay(f64),

    #[error("no trajectories")]
    EmptyEnsemble,

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
