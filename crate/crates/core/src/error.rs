use thiserror::Error;

/// Errors raised by the numerical routines, samplers and harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdError {
    /// A parameter or argument lies outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A series could not certify its tolerance within the term budget.
    #[error("series did not converge after {terms} terms: {detail}")]
    SeriesDivergence { terms: usize, detail: String },

    /// Adaptive quadrature exhausted its subdivision budget.
    #[error("quadrature failed: estimated error {error:e} exceeds tolerance {tolerance:e}")]
    Quadrature { error: f64, tolerance: f64 },

    /// Characteristic-function inversion could not meet its accuracy target.
    #[error("inversion accuracy: {0}")]
    Inversion(String),

    /// Enumeration requested beyond the exhaustive cap.
    #[error("n = {n} exceeds the enumeration cap {cap}")]
    CapExceeded { n: usize, cap: usize },

    /// The subordinator sampler could not bound its unrepresented tail.
    #[error("atom budget {budget} too small: tail error {error:e} above tolerance {tolerance:e}")]
    AtomBudget {
        budget: usize,
        error: f64,
        tolerance: f64,
    },

    /// Q matrix inversion drifted from the identity.
    #[error("ill-conditioned Q matrix: |Q Q^-1 - I| = {0:e}")]
    IllConditioned(f64),

    /// Too few draws to compute a statistic.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

impl PdError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        PdError::Domain(msg.into())
    }

    /// True for errors that come from numerical procedures rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            PdError::SeriesDivergence { .. }
                | PdError::Quadrature { .. }
                | PdError::Inversion(_)
                | PdError::AtomBudget { .. }
                | PdError::IllConditioned(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, PdError>;
