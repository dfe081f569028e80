use nalgebra::DVector;
use rayon::prelude::*;

use super::consistency::{consistency_factor, small_sample_correction, truncated_normal_factor};
use super::subsets::{elemental_fit, elemental_subsets, smallest_h};
use super::{LtsConfig, TestConfig};
use crate::data::{Dataset, Diagnostics, FitResult, Method};
use crate::error::{Error, Result};
use crate::linalg::lstsq_rows;
use crate::rng::{binomial, for_each_combination};

const MAX_CSTEPS: usize = 1000;

pub fn default_h(n: usize, p: usize) -> usize {
    (n / 2 + (p + 1) / 2).min(n)
}

fn squared_residuals(data: &Dataset, beta: &DVector<f64>) -> Vec<f64> {
    let mut r = data.residual_vec(beta.as_slice());
    for v in &mut r {
        *v *= *v;
    }
    r
}

/// Sum of the `h` smallest squared residuals at `beta`.
pub fn lts_objective(data: &Dataset, beta: &DVector<f64>, h: usize) -> f64 {
    let r2 = squared_residuals(data, beta);
    smallest_h(&r2, h).iter().map(|&i| r2[i]).sum()
}

#[derive(Debug, Clone)]
struct Candidate {
    obj: f64,
    /// Sorted rows holding the `h` smallest residuals at `beta`.
    subset: Vec<usize>,
    beta: DVector<f64>,
}

impl Candidate {
    fn at(data: &Dataset, beta: DVector<f64>, h: usize) -> Self {
        let r2 = squared_residuals(data, &beta);
        let subset = smallest_h(&r2, h);
        let obj = subset.iter().map(|&i| r2[i]).sum();
        Self { obj, subset, beta }
    }

    fn better_than(&self, other: &Candidate) -> bool {
        self.obj
            .total_cmp(&other.obj)
            .then_with(|| self.subset.cmp(&other.subset))
            .is_lt()
    }

    /// One concentration step: refit on the current subset.
    fn cstep(&self, data: &Dataset) -> Option<Candidate> {
        let beta = lstsq_rows(data, &self.subset).ok()?.beta;
        Some(Candidate::at(data, beta, self.subset.len()))
    }

    fn converge(self, data: &Dataset) -> Option<Candidate> {
        let mut cur = self;
        for _ in 0..MAX_CSTEPS {
            let next = cur.cstep(data)?;
            let stable = next.subset == cur.subset;
            cur = next;
            if stable {
                break;
            }
        }
        Some(cur)
    }
}

/// Keep the `k` best distinct candidates, ordered best first.
fn best_distinct(mut cands: Vec<Candidate>, k: usize) -> Vec<Candidate> {
    cands.sort_by(|a, b| a.obj.total_cmp(&b.obj).then_with(|| a.subset.cmp(&b.subset)));
    cands.dedup_by(|a, b| a.subset == b.subset);
    cands.truncate(k);
    cands
}

/// Least trimmed squares by elemental starts and concentration steps.
pub fn lts_fit(data: &Dataset, cfg: &LtsConfig) -> Result<FitResult> {
    cfg.subset.validate()?;
    let (n, p) = (data.n(), data.p());
    let h = cfg.h.unwrap_or_else(|| default_h(n, p));
    if h < p || h > n {
        return Err(Error::InvalidInput(format!("trim size h = {h} outside [{p}, {n}]")));
    }
    if binomial(n, h) <= cfg.subset.n_elemental as u64 {
        let best = all_h_subsets(data, h)
            .ok_or_else(|| Error::failure(Method::Lts, "every h-subset gave a singular fit"))?;
        return finish(data, best, h, 0, true);
    }
    let starts = elemental_subsets(n, p, &cfg.subset);
    let refined: Vec<Option<Candidate>> = (0..starts.len())
        .into_par_iter()
        .with_min_len(32)
        .map(|i| {
            let beta = elemental_fit(data, starts.get(i))?;
            let mut c = Candidate::at(data, beta, h);
            for _ in 0..cfg.subset.n_refine {
                c = c.cstep(data)?;
            }
            Some(c)
        })
        .collect();
    let n_singular = refined.iter().filter(|c| c.is_none()).count();
    let survivors: Vec<Candidate> = refined.into_iter().flatten().collect();
    if survivors.is_empty() {
        return Err(Error::failure(
            Method::Lts,
            format!("all {} elemental subsets gave singular fits", starts.len()),
        ));
    }
    let mut best: Option<Candidate> = None;
    for c in best_distinct(survivors, cfg.subset.n_best) {
        if let Some(c) = c.converge(data) {
            if best.as_ref().is_none_or(|b| c.better_than(b)) {
                best = Some(c);
            }
        }
    }
    let best = best.ok_or_else(|| Error::failure(Method::Lts, "no candidate survived refinement"))?;
    let mut fit = finish(data, best, h, n_singular, false)?;
    fit.diagnostics
        .insert("elemental_exhaustive".into(), f64::from(u8::from(starts.exhaustive)));
    Ok(fit)
}

/// Exact LTS for tiny samples: least squares on every h-subset.
fn all_h_subsets(data: &Dataset, h: usize) -> Option<Candidate> {
    let mut best: Option<(f64, DVector<f64>)> = None;
    for_each_combination(data.n(), h, |rows| {
        let Ok(fit) = lstsq_rows(data, rows) else { return };
        let rss = (data.select_y(rows) - data.select_rows(rows) * &fit.beta).norm_squared();
        if best.as_ref().is_none_or(|b| rss < b.0) {
            best = Some((rss, fit.beta));
        }
    });
    best.map(|(_, beta)| Candidate::at(data, beta, h))
}

fn finish(data: &Dataset, best: Candidate, h: usize, n_singular: usize, enumerated: bool) -> Result<FitResult> {
    let n = data.n();
    let p = data.p();
    let exact_tol = 1e-10 * data.y_scale();
    let raw = (best.obj / h as f64).sqrt();
    let sigma = if raw <= exact_tol {
        0.0
    } else {
        consistency_factor(h as f64 / n as f64, 1)? * small_sample_correction(n, p) * raw
    };
    let mut weights = vec![0.0; n];
    for &i in &best.subset {
        weights[i] = 1.0;
    }
    let mut diagnostics = Diagnostics::new();
    diagnostics.insert("objective".into(), best.obj);
    diagnostics.insert("h".into(), h as f64);
    diagnostics.insert("raw_scale".into(), raw);
    diagnostics.insert("elemental_singular".into(), n_singular as f64);
    diagnostics.insert("h_subsets_enumerated".into(), f64::from(u8::from(enumerated)));
    Ok(FitResult {
        method: Method::Lts,
        beta: best.beta.iter().copied().collect(),
        sigma,
        outlier_flags: weights.iter().map(|&w| w == 0.0).collect(),
        weights,
        diagnostics,
    })
}

/// Reweighted LTS: rows whose scaled LTS residual exceeds the Bonferroni
/// cutoff get weight 0 and least squares is refitted on the rest.
pub fn lts_reweight(data: &Dataset, base: &FitResult, test: &TestConfig) -> Result<FitResult> {
    let (n, p) = (data.n(), data.p());
    if base.sigma <= 0.0 {
        return Err(Error::failure(Method::Ltsr, "base LTS fit has zero scale"));
    }
    let z = test.cutoff(n);
    let r = data.residuals(&base.beta_vec());
    let flags: Vec<bool> = r.iter().map(|v| v.abs() / base.sigma > z).collect();
    let keep: Vec<usize> = (0..n).filter(|&i| !flags[i]).collect();
    let k = keep.len();
    if k <= p {
        return Err(Error::failure(
            Method::Ltsr,
            format!("only {k} rows retained for {p} coefficients"),
        ));
    }
    let fit = lstsq_rows(data, &keep).map_err(|e| Error::failure(Method::Ltsr, e.to_string()))?;
    let mut sigma = (fit.rss / (k - p) as f64).sqrt();
    if k < n {
        sigma *= truncated_normal_factor(z);
    }
    let mut diagnostics = Diagnostics::new();
    diagnostics.insert("cutoff".into(), z);
    diagnostics.insert("retained".into(), k as f64);
    diagnostics.insert("base_sigma".into(), base.sigma);
    Ok(FitResult {
        method: Method::Ltsr,
        beta: fit.beta.iter().copied().collect(),
        sigma,
        weights: flags.iter().map(|&f| if f { 0.0 } else { 1.0 }).collect(),
        outlier_flags: flags,
        diagnostics,
    })
}

/// LTS followed by reweighting at `cfg.reweight_alpha` (default 0.01).
pub fn ltsr_fit(data: &Dataset, cfg: &LtsConfig) -> Result<FitResult> {
    let base = lts_fit(data, cfg)?;
    let test = TestConfig::new(cfg.reweight_alpha.unwrap_or(0.01))?;
    lts_reweight(data, &base, &test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ols_fit;
    use crate::rng::{for_each_combination, RngStream};
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normal_data(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = RngStream::new(seed, 77).rng();
        let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
        let e = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &x * DVector::from_element(p, 1.0) + e;
        Dataset::new(y, x, None).unwrap()
    }

    /// Brute force over all h-subsets via the normal equations.
    fn exhaustive_lts(data: &Dataset, h: usize) -> (f64, Vec<usize>) {
        let mut best = (f64::INFINITY, Vec::new());
        for_each_combination(data.n(), h, |rows| {
            let x = data.select_rows(rows);
            let y = data.select_y(rows);
            let Some(chol) = (x.transpose() * &x).cholesky() else { return };
            let b = chol.solve(&(x.transpose() * &y));
            let rss = (&y - &x * b).norm_squared();
            if rss < best.0 {
                best = (rss, rows.to_vec());
            }
        });
        best
    }

    #[test]
    fn default_trim_size() {
        assert_eq!(default_h(75, 4), 39);
        assert_eq!(default_h(100, 6), 53);
        assert_eq!(default_h(8, 2), 5);
    }

    #[test]
    fn matches_exhaustive_small() {
        for seed in 0..10 {
            let d = normal_data(8, 2, seed);
            let h = default_h(8, 2);
            let (obj, rows) = exhaustive_lts(&d, h);
            // enumeration of h-subsets, then concentration from elemental starts
            for n_elemental in [1000, 40] {
                let mut cfg = LtsConfig::new(RngStream::new(seed, 1));
                cfg.subset.n_elemental = n_elemental;
                let fit = lts_fit(&d, &cfg).unwrap();
                assert_eq!(fit.diag("h_subsets_enumerated"), Some(f64::from(u8::from(n_elemental == 1000))));
                let got = fit.diag("objective").unwrap();
                assert!((got - obj).abs() <= 1e-9 * obj.max(1.0), "seed {seed}: {got} vs {obj}");
                let kept: Vec<usize> = (0..8).filter(|&i| !fit.outlier_flags[i]).collect();
                assert_eq!(kept, rows);
            }
        }
    }

    #[test]
    fn location_matches_sorted_windows() {
        // single-point starts miss the optimum here; enumeration does not
        let y = vec![6.742, 9.452, -0.2198, 0.7893, 1.4228, -0.6544, 0.9519, -0.2348, -1.3063, 0.4556];
        let d = Dataset::new(DVector::from_vec(y.clone()), DMatrix::from_element(10, 1, 1.0), None).unwrap();
        let h = default_h(10, 1);
        let mut sorted = y;
        sorted.sort_by(f64::total_cmp);
        let best = sorted
            .windows(h)
            .map(|w| {
                let m = w.iter().sum::<f64>() / h as f64;
                w.iter().map(|v| (v - m).powi(2)).sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        let fit = lts_fit(&d, &LtsConfig::new(RngStream::new(0, 1))).unwrap();
        assert!((fit.diag("objective").unwrap() - best).abs() < 1e-12);
    }

    #[test]
    fn flags_are_the_trimmed_rows() {
        let d = normal_data(40, 3, 3);
        let fit = lts_fit(&d, &LtsConfig::new(RngStream::new(3, 1))).unwrap();
        assert_eq!(fit.n_flagged(), 40 - default_h(40, 3));
        for (f, w) in fit.outlier_flags.iter().zip(&fit.weights) {
            assert_eq!(*f, *w == 0.0);
        }
        // beta is OLS on the retained rows
        let kept: Vec<usize> = (0..40).filter(|&i| !fit.outlier_flags[i]).collect();
        let ols = lstsq_rows(&d, &kept).unwrap().beta;
        assert!((ols - fit.beta_vec()).amax() < 1e-10);
    }

    #[test]
    fn exact_fit_recovered() {
        // 30 rows on y = 1 + 2x, 10 scattered
        let mut rng = RngStream::new(5, 0).rng();
        let xs: Vec<f64> = (0..40).map(|_| rng.random::<f64>() * 10.0).collect();
        let y: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| if i < 30 { 1.0 + 2.0 * x } else { 50.0 + rng.random::<f64>() * 20.0 })
            .collect();
        let carriers: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let d = Dataset::with_intercept(y, &carriers, None).unwrap();
        let fit = lts_fit(&d, &LtsConfig::new(RngStream::new(5, 1))).unwrap();
        assert_eq!(fit.sigma, 0.0);
        assert!((fit.beta[0] - 1.0).abs() < 1e-8 && (fit.beta[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn reweight_without_outliers_is_ols() {
        let d = normal_data(60, 3, 8);
        let base = lts_fit(&d, &LtsConfig::new(RngStream::new(8, 1))).unwrap();
        let rw = lts_reweight(&d, &base, &TestConfig::default()).unwrap();
        let ols = ols_fit(&d).unwrap();
        assert_eq!(rw.n_flagged(), 0);
        assert!((rw.beta_vec() - ols.beta_vec()).amax() < 1e-12);
        assert!((rw.sigma - ols.sigma).abs() < 1e-12);
    }

    #[test]
    fn reweight_flags_planted_outliers() {
        let mut d = normal_data(100, 2, 9);
        let mut y = d.y().clone();
        for i in 0..10 {
            y[i * 7] += 20.0 * if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        d = d.transformed(y, d.x().clone()).unwrap();
        let fit = ltsr_fit(&d, &LtsConfig::new(RngStream::new(9, 1))).unwrap();
        let flagged: Vec<usize> = (0..100).filter(|&i| fit.outlier_flags[i]).collect();
        assert_eq!(flagged, (0..10).map(|i| i * 7).collect::<Vec<_>>());
        assert!(fit.weights.iter().zip(&fit.outlier_flags).all(|(w, f)| (*w == 0.0) == *f));
    }

    #[test]
    fn reweight_rejects_zero_scale() {
        let d = normal_data(20, 2, 1);
        let mut base = lts_fit(&d, &LtsConfig::new(RngStream::new(1, 1))).unwrap();
        base.sigma = 0.0;
        assert!(lts_reweight(&d, &base, &TestConfig::default()).is_err());
    }

    #[test]
    fn corrected_scale_is_median_unbiased_small_n() {
        // fresh seeds, not the ones the constants were fitted on
        let mut sig: Vec<f64> = (0..1000)
            .into_par_iter()
            .map(|s| {
                let d = normal_data(30, 2, 50_000 + s);
                lts_fit(&d, &LtsConfig::new(RngStream::new(s, 2))).unwrap().sigma
            })
            .collect();
        sig.sort_by(f64::total_cmp);
        let med = 0.5 * (sig[499] + sig[500]);
        assert!((med - 1.0).abs() < 0.03, "median {med}");
    }
}
