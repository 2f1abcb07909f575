use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("truncation too small: {0}")]
    Truncation(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("basis mismatch: {left:?} vs {right:?}")]
    BasisMismatch {
        left: crate::operator_core::BasisTag,
        right: crate::operator_core::BasisTag,
    },

    #[error("near-resonant pair ({i}, {j}): |g n_ij| / |omega_ij - omega_r| = {ratio:.3e} exceeds {limit}")]
    NearResonance { i: usize, j: usize, ratio: f64, limit: f64 },

    #[error("vanishing denominator for levels {levels:?}: {value:.3e}")]
    ResonantDenominator { levels: Vec<usize>, value: f64 },

    #[error("step instability at t = {t} ns: trace drift {drift:.3e}")]
    StepInstability { t: f64, drift: f64 },

    #[error("steady state is not unique: {0}")]
    DegenerateSteadyState(String),

    #[error("rates vanish (g_eff = 0); steady-state populations undefined")]
    DegenerateRates,

    #[error("negative rate {name} = {value:.3e}; increase n_trunc (currently {n_trunc})")]
    NegativeRate { name: &'static str, value: f64, n_trunc: usize },

    #[error("recurrence tail diverges: |d/b| = {ratio:.3} at n = {index}")]
    DivergentSeries { ratio: f64, index: usize },

    #[error("series not converged: relative change {change:.3e} with n_trunc = {n_trunc}")]
    NotConverged { change: f64, n_trunc: usize },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("scenario error at `{path}`: {message}")]
    Scenario { path: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(expected: impl std::fmt::Debug, found: impl std::fmt::Debug) -> Self {
        Error::DimensionMismatch {
            expected: format!("{expected:?}"),
            found: format!("{found:?}"),
        }
    }

    /// True for errors caused by the input configuration rather than numerics.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. } | Error::Scenario { .. } | Error::Io(_)
        )
    }
}
