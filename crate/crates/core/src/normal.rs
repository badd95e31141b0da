//! Standard normal distribution helpers (evaluated in `f64`).

use statrs::distribution::{ContinuousCDF, Normal};

fn standard() -> Normal {
    Normal::standard()
}

pub fn cdf(x: f64) -> f64 {
    standard().cdf(x)
}

/// Upper tail `1 − Φ(x)`, accurate for large `x`.
pub fn sf(x: f64) -> f64 {
    standard().sf(x)
}

pub fn quantile(p: f64) -> f64 {
    standard().inverse_cdf(p)
}

/// Upper `α`-point `z_α` with `P(Z ≥ z_α) = α`.
pub fn upper_point(alpha: f64) -> f64 {
    quantile(1.0 - alpha)
}
