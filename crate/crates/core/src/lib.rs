//! Exact sampling laws, samplers and limit laws for the Poisson-Dirichlet
//! family: PD(θ), PD_α, PD(α, θ) and the trimmed laws PD_α^(r).

pub mod error;
pub mod exact_laws;
pub mod limit_laws;
pub mod mc_verify;
pub mod quadrature;
pub mod samplers;
pub mod special_fn;

pub use error::{PdError, Result};
pub use exact_laws::{FrequencySpectrum, ModelSpec, PartitionTable};
pub use quadrature::{QuadResult, QuadratureControl};

/// Decimal rendering with 17 significant digits, enough to round-trip an `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
