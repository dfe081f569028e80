//! Tukey's biweight: rho, psi and weight functions, tuning constants for a
//! given breakdown point or efficiency, and the M-estimator of scale.

use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::dist::{norm_pdf, norm_sf};
use crate::error::{Error, Result};
use crate::quadrature::integrate;

/// Biweight constants `(c, K)` for the scale equation `mean rho_c(r/s) = K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiweightTuning {
    pub c: f64,
    pub k: f64,
    pub bdp: f64,
    pub eff: f64,
}

impl BiweightTuning {
    /// Fraction of non-zero residuals at or below which the M-scale collapses
    /// to zero.
    pub fn exact_fit_fraction(&self) -> f64 {
        self.k / (self.c * self.c / 6.0)
    }
}

pub fn rho(u: f64, c: f64) -> f64 {
    let a = u.abs();
    if a >= c {
        return c * c / 6.0;
    }
    let t = (u / c) * (u / c);
    u * u / 2.0 * (1.0 - t + t * t / 3.0)
}

/// `(psi(u), psi(u)/u)`, the latter taken as 1 at the origin.
pub fn psi_and_weight(u: f64, c: f64) -> (f64, f64) {
    if u.abs() > c {
        return (0.0, 0.0);
    }
    let t = 1.0 - (u / c) * (u / c);
    let w = t * t;
    (u * w, w)
}

pub fn weight(u: f64, c: f64) -> f64 {
    psi_and_weight(u, c).1
}

fn psi_prime(u: f64, c: f64) -> f64 {
    if u.abs() > c {
        return 0.0;
    }
    let t = (u / c) * (u / c);
    (1.0 - t) * (1.0 - 5.0 * t)
}

const QUAD_TOL: f64 = 1e-14;

/// `E rho_c(Z)` for standard normal `Z`.
pub fn expected_rho(c: f64) -> f64 {
    let inner = integrate(|z| rho(z, c) * norm_pdf(z), -c, c, QUAD_TOL);
    inner + c * c / 6.0 * 2.0 * norm_sf(c)
}

/// Asymptotic efficiency at the normal, `(E psi')^2 / E psi^2`.
pub fn efficiency(c: f64) -> f64 {
    let a = integrate(|z| psi_prime(z, c) * norm_pdf(z), -c, c, QUAD_TOL);
    let b = integrate(|z| psi_and_weight(z, c).0.powi(2) * norm_pdf(z), -c, c, QUAD_TOL);
    a * a / b
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64, what: &str) -> Result<f64> {
    let (flo, fhi) = (f(lo), f(hi));
    if flo.signum() == fhi.signum() {
        return Err(Error::NumericSolver(format!("{what}: root not bracketed")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(Error::NumericSolver(format!("{what}: bisection did not converge")))
}

#[derive(Hash, PartialEq, Eq)]
enum TuningKey {
    Bdp(u64),
    Eff(u64),
}

fn tuning_cache() -> &'static RwLock<HashMap<TuningKey, BiweightTuning>> {
    static CACHE: OnceLock<RwLock<HashMap<TuningKey, BiweightTuning>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn cached(key: TuningKey, compute: impl FnOnce() -> Result<BiweightTuning>) -> Result<BiweightTuning> {
    if let Some(t) = tuning_cache().read().unwrap().get(&key) {
        return Ok(*t);
    }
    let t = compute()?;
    tuning_cache().write().unwrap().insert(key, t);
    Ok(t)
}

/// Constants giving breakdown point `bdp`: `E rho_c(Z) = K = bdp c^2 / 6`.
pub fn tuning_from_bdp(bdp: f64) -> Result<BiweightTuning> {
    if !(bdp > 0.0 && bdp <= 0.5) {
        return Err(Error::Domain(format!("breakdown point {bdp} outside (0, 0.5]")));
    }
    cached(TuningKey::Bdp(bdp.to_bits()), || {
        let c = bisect(1e-3, 50.0, |c| expected_rho(c) / (c * c / 6.0) - bdp, "biweight c for bdp")?;
        Ok(BiweightTuning {
            c,
            k: bdp * c * c / 6.0,
            bdp,
            eff: efficiency(c),
        })
    })
}

/// Constants giving asymptotic efficiency `eff` at the normal; `K` keeps
/// the scale equation consistent, so the breakdown point is `K / (c^2/6)`.
pub fn tuning_from_efficiency(eff: f64) -> Result<BiweightTuning> {
    if !(eff > 0.0 && eff < 1.0) {
        return Err(Error::Domain(format!("efficiency {eff} outside (0, 1)")));
    }
    cached(TuningKey::Eff(eff.to_bits()), || {
        let c = bisect(0.05, 30.0, |c| efficiency(c) - eff, "biweight c for efficiency")?;
        let k = expected_rho(c);
        Ok(BiweightTuning {
            c,
            k,
            bdp: k / (c * c / 6.0),
            eff,
        })
    })
}

/// Inverse of rho on `[0, c]`.
pub fn rho_inverse(v: f64, c: f64) -> Result<f64> {
    let top = c * c / 6.0;
    if !(0.0..=top).contains(&v) {
        return Err(Error::Domain(format!("rho value {v} outside [0, {top}]")));
    }
    if v == top {
        return Ok(c);
    }
    bisect(0.0, c, |u| rho(u, c) - v, "rho inverse")
}

fn median_abs(r: &[f64]) -> f64 {
    let mut a: Vec<f64> = r.iter().map(|v| v.abs()).collect();
    let mid = a.len() / 2;
    let (_, m, _) = a.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if a.len() % 2 == 1 {
        m
    } else {
        let lower = a[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + m)
    }
}

/// Default starting value: normalised median absolute residual.
pub fn mscale_start(residuals: &[f64]) -> f64 {
    median_abs(residuals) / 0.674_489_750_196_081_7
}

/// The M-estimator of scale: the `s` solving `mean rho_c(r_i / s) = K`.
///
/// Newton steps on `log s`, kept inside a bracket and falling back to
/// bisection, to relative tolerance 1e-12. Returns 0 when too few residuals
/// are non-zero for the equation to have a positive root (an exact fit).
pub fn mscale(residuals: &[f64], tuning: &BiweightTuning, sigma0: f64) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::InvalidInput("M-scale of an empty residual vector".into()));
    }
    let n = residuals.len() as f64;
    let nonzero = residuals.iter().filter(|&&r| r != 0.0).count() as f64;
    if nonzero / n <= tuning.exact_fit_fraction() {
        return Ok(0.0);
    }
    let (c, k) = (tuning.c, tuning.k);
    let mut s = if sigma0 > 0.0 && sigma0.is_finite() {
        sigma0
    } else {
        let m = mscale_start(residuals);
        if m > 0.0 {
            m
        } else {
            residuals.iter().map(|v| v.abs()).fold(0.0, f64::max)
        }
    };
    // g(s) = mean rho(r/s) - K is decreasing in s; g'(s) = -mean(psi(u) u)/s.
    let eval = |s: f64| {
        let (mut g, mut d) = (0.0, 0.0);
        for &r in residuals {
            let u = r / s;
            g += rho(u, c);
            d += psi_and_weight(u, c).0 * u;
        }
        (g / n - k, -d / (n * s))
    };
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for _ in 0..200 {
        let (g, d) = eval(s);
        if g == 0.0 {
            return Ok(s);
        }
        if g > 0.0 {
            lo = lo.max(s);
        } else {
            hi = hi.min(s);
        }
        let mut next = if d < 0.0 { s - g / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * s };
            if lo == 0.0 && hi.is_finite() {
                next = 0.5 * hi;
            }
        }
        if (next - s).abs() <= 1e-12 * s {
            return Ok(next);
        }
        s = next;
    }
    Err(Error::NumericSolver("M-scale iteration did not converge".into()))
}
