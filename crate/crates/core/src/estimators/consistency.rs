use crate::dist::{chi2_cdf, chi2_quantile, norm_cdf, norm_pdf};
use crate::error::{Error, Result};

/// Factor making `sqrt(mean of the smallest frac*n squared residuals)`
/// consistent for `sigma` under normality.
///
/// `dim` is the dimension of the truncated quadratic form: 1 for regression
/// residuals. Keeping a fraction `frac` of a `chi2_dim` variable truncates it
/// at `q = chi2_dim^{-1}(frac)`, and the truncated second moment is
/// `dim * F_{dim+2}(q) / frac`.
pub fn consistency_factor(frac: f64, dim: usize) -> Result<f64> {
    if !(0.5..=1.0).contains(&frac) {
        return Err(Error::Domain(format!("trimming fraction {frac} outside [0.5, 1]")));
    }
    if dim == 0 {
        return Err(Error::Domain("dimension must be positive".into()));
    }
    if frac == 1.0 {
        return Ok(1.0);
    }
    let d = dim as f64;
    let q = chi2_quantile(frac, d);
    Ok((frac / chi2_cdf(q, d + 2.0)).sqrt())
}

/// Factor for a scale computed from residuals kept when `|r/sigma| <= z`:
/// the inverse root of `E[Z^2 | |Z| <= z]`.
pub fn truncated_normal_factor(z: f64) -> f64 {
    let mass = 2.0 * norm_cdf(z) - 1.0;
    1.0 / (1.0 - 2.0 * z * norm_pdf(z) / mass).sqrt()
}

/// `(a_p, b_p)` of the correction `1 / (1 - exp(a_p) / n^b_p)`, indexed by
/// `p - 1`. Fitted to the median of the LTS scale on clean normal samples
/// (see the `calibrate_small_sample` example); `p` beyond the table reuses
/// its last row.
const SMALL_SAMPLE: [(f64, f64); 12] = [
    (0.8829, 0.8933),
    (1.1872, 0.7675),
    (1.1642, 0.6955),
    (1.5904, 0.7273),
    (1.6202, 0.6963),
    (1.8529, 0.7113),
    (1.7909, 0.6754),
    (2.1221, 0.7203),
    (2.0486, 0.6907),
    (2.0655, 0.6740),
    (2.1764, 0.6859),
    (2.2542, 0.6870),
];

/// Finite-sample multiplier for the LTS scale; decreases to 1 as `n` grows.
pub fn small_sample_correction(n: usize, p: usize) -> f64 {
    let (a, b) = SMALL_SAMPLE[p.clamp(1, SMALL_SAMPLE.len()) - 1];
    let shrink = (a - b * (n as f64).ln()).exp();
    // The fitted curve is only trusted where the shrinkage is moderate.
    1.0 / (1.0 - shrink.min(0.75))
}
