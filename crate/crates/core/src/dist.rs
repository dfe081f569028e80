//! Thin wrappers over the reference distributions used throughout.

use statrs::distribution::{Beta, ChiSquared, Continuous, ContinuousCDF, Normal, StudentsT};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

pub fn norm_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Upper tail `1 - Φ(x)` without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    std_normal().sf(x)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn norm_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

pub fn t_cdf(x: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("t df > 0").cdf(x)
}

pub fn t_quantile(p: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("t df > 0")
        .inverse_cdf(p)
}

pub fn chi2_cdf(x: f64, df: f64) -> f64 {
    ChiSquared::new(df).expect("chi2 df > 0").cdf(x)
}

pub fn chi2_quantile(p: f64, df: f64) -> f64 {
    ChiSquared::new(df).expect("chi2 df > 0").inverse_cdf(p)
}

pub fn beta_quantile(p: f64, a: f64, b: f64) -> f64 {
    Beta::new(a, b).expect("beta shape > 0").inverse_cdf(p)
}

pub fn beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    Beta::new(a, b).expect("beta shape > 0").pdf(x)
}

/// Two-sided standard-normal cutoff for a Bonferronised per-observation
/// level `alpha / n`.
pub fn bonferroni_cutoff(alpha: f64, n: usize) -> f64 {
    norm_quantile(1.0 - alpha / (2.0 * n as f64))
}
