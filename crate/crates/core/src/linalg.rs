//! Least squares by Householder QR, leverages, and the OLS estimator.

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, Diagnostics, FitResult, Method};
use crate::error::{Error, Result};

/// Reciprocal condition numbers below this are treated as singular.
pub const RCOND_MIN: f64 = 1e-12;

/// A solved least-squares problem, keeping the triangular factor for
/// leverage computations.
#[derive(Debug, Clone)]
pub struct LsFit {
    pub beta: DVector<f64>,
    pub rss: f64,
    r: DMatrix<f64>,
}

impl LsFit {
    /// `x' (X'X)^{-1} x` for the design this fit was computed on.
    pub fn leverage(&self, x_row: &[f64]) -> f64 {
        let b = DVector::from_column_slice(x_row);
        match self.r.tr_solve_upper_triangular(&b) {
            Some(z) => z.norm_squared(),
            None => f64::INFINITY,
        }
    }

    /// Leverages of the given rows of `x`, by forward substitution with R'.
    pub fn leverages(&self, x: &DMatrix<f64>, rows: &[usize]) -> Vec<f64> {
        let p = self.r.ncols();
        let mut z = vec![0.0; p];
        rows.iter()
            .map(|&i| {
                let mut h = 0.0;
                for j in 0..p {
                    let mut v = x[(i, j)];
                    for k in 0..j {
                        v -= self.r[(k, j)] * z[k];
                    }
                    z[j] = v / self.r[(j, j)];
                    h += z[j] * z[j];
                }
                h
            })
            .collect()
    }

    pub fn r_factor(&self) -> &DMatrix<f64> {
        &self.r
    }
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Reciprocal 1-norm condition number of an upper triangular factor.
pub fn rcond_upper(r: &DMatrix<f64>) -> f64 {
    let p = r.ncols();
    if (0..p).any(|i| r[(i, i)] == 0.0 || !r[(i, i)].is_finite()) {
        return 0.0;
    }
    match r.solve_upper_triangular(&DMatrix::identity(p, p)) {
        Some(inv) => {
            let c = norm1(r) * norm1(&inv);
            if c.is_finite() && c > 0.0 {
                1.0 / c
            } else {
                0.0
            }
        }
        None => 0.0,
    }
}

pub fn numerical_rank(x: &DMatrix<f64>) -> usize {
    let sv = x.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > smax * RCOND_MIN).count()
}

/// Solve `min ||y - X b||` with `X` of full column rank.
pub fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LsFit> {
    let (n, p) = x.shape();
    let mut aug = DMatrix::zeros(n, p + 1);
    aug.columns_mut(0, p).copy_from(x);
    aug.column_mut(p).copy_from(y);
    solve_augmented(aug)
}

/// Least squares from the Householder QR of `[X | y]`: the leading block of
/// the triangular factor is R, its last column holds `Q'y`, and the corner
/// entry is the root residual sum of squares.
fn solve_augmented(aug: DMatrix<f64>) -> Result<LsFit> {
    let (n, q) = aug.shape();
    let p = q - 1;
    if n < p {
        return Err(Error::SingularDesign { rank: n, cols: p });
    }
    let full = aug.qr().r();
    let r = full.view((0, 0), (p, p)).into_owned();
    if rcond_upper(&r) < RCOND_MIN {
        return Err(Error::SingularDesign {
            rank: numerical_rank(&r),
            cols: p,
        });
    }
    let head = full.view((0, p), (p, 1)).column(0).into_owned();
    let beta = r
        .solve_upper_triangular(&head)
        .ok_or_else(|| Error::SingularDesign { rank: numerical_rank(&r), cols: p })?;
    let rss = if n > p { full[(p, p)].powi(2) } else { 0.0 };
    Ok(LsFit { beta, rss, r })
}

/// Column-major `[X | y]` restricted to `rows`.
fn gather(data: &Dataset, rows: &[usize]) -> DMatrix<f64> {
    let p = data.p();
    let m = rows.len();
    let mut buf = Vec::with_capacity(m * (p + 1));
    let mut push = |col: &[f64]| buf.extend(rows.iter().map(|&i| col[i]));
    for j in 0..p {
        push(data.x().column(j).as_slice());
    }
    push(data.y().as_slice());
    DMatrix::from_vec(m, p + 1, buf)
}

/// Least squares restricted to `rows` of the dataset.
pub fn lstsq_rows(data: &Dataset, rows: &[usize]) -> Result<LsFit> {
    solve_augmented(gather(data, rows))
}

/// Weighted least squares; rows with zero weight drop out.
pub fn wlstsq(data: &Dataset, weights: &[f64]) -> Result<DVector<f64>> {
    let (rows, roots): (Vec<usize>, Vec<f64>) = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, &w)| (i, w.sqrt()))
        .unzip();
    let p = data.p();
    let mut buf = Vec::with_capacity(rows.len() * (p + 1));
    let mut push = |col: &[f64]| buf.extend(rows.iter().zip(&roots).map(|(&i, &s)| s * col[i]));
    for j in 0..p {
        push(data.x().column(j).as_slice());
    }
    push(data.y().as_slice());
    Ok(solve_augmented(DMatrix::from_vec(rows.len(), p + 1, buf))?.beta)
}

/// Ordinary least squares on the whole dataset.
pub fn ols_fit(data: &Dataset) -> Result<FitResult> {
    let fit = lstsq(data.x(), data.y())?;
    let (n, p) = (data.n(), data.p());
    let sigma = if n > p { (fit.rss / (n - p) as f64).sqrt() } else { 0.0 };
    Ok(FitResult {
        method: Method::Ols,
        beta: fit.beta.iter().copied().collect(),
        sigma,
        outlier_flags: vec![false; n],
        weights: vec![1.0; n],
        diagnostics: Diagnostics::new(),
    })
}

/// Leverage of `x_row` with respect to the design `x_subset`.
pub fn hat_diagonal(x_subset: &DMatrix<f64>, x_row: &[f64]) -> Result<f64> {
    let fit = lstsq(x_subset, &DVector::zeros(x_subset.nrows()))?;
    Ok(fit.leverage(x_row))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = RngStream::new(seed, 0).rng();
        DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) })
    }

    #[test]
    fn exact_interpolation() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 5.0]);
        let y = &x * DVector::from_column_slice(&[1.0, 2.0]);
        let d = Dataset::new(y, x, None).unwrap();
        let f = ols_fit(&d).unwrap();
        assert!((f.beta[0] - 1.0).abs() < 1e-12 && (f.beta[1] - 2.0).abs() < 1e-12);
        assert!(f.sigma < 1e-12);
        assert!(f.outlier_flags.iter().all(|&b| !b));
    }

    #[test]
    fn saturated_fit_has_zero_residuals() {
        let x = random_matrix(3, 3, 1);
        let y = DVector::from_column_slice(&[0.3, -1.0, 2.0]);
        let d = Dataset::new(y, x, None).unwrap();
        let f = ols_fit(&d).unwrap();
        let r = d.residuals(&f.beta_vec());
        assert!(r.amax() < 1e-12);
        assert_eq!(f.sigma, 0.0);
    }

    #[test]
    fn matches_normal_equations_oracle() {
        // independent route: Cholesky on X'X
        let x = random_matrix(50, 3, 2);
        let mut rng = RngStream::new(3, 0).rng();
        let y = DVector::from_fn(50, |_, _| rng.sample::<f64, _>(StandardNormal));
        let d = Dataset::new(y.clone(), x.clone(), None).unwrap();
        let f = ols_fit(&d).unwrap();
        let xtx = x.transpose() * &x;
        let oracle = xtx.cholesky().unwrap().solve(&(x.transpose() * &y));
        for j in 0..3 {
            assert!((f.beta[j] - oracle[j]).abs() <= 1e-10 * oracle[j].abs().max(1.0));
        }
    }

    #[test]
    fn rank_deficiency_reports_rank() {
        let mut x = random_matrix(10, 3, 4);
        for i in 0..10 {
            x[(i, 2)] = 2.0 * x[(i, 1)];
        }
        let d = Dataset::new(DVector::zeros(10), x, None).unwrap();
        match ols_fit(&d) {
            Err(Error::SingularDesign { rank, cols }) => {
                assert_eq!(rank, 2);
                assert_eq!(cols, 3);
            }
            other => panic!("expected singular design, got {other:?}"),
        }
    }

    #[test]
    fn hat_diagonal_cases() {
        let x = DMatrix::<f64>::identity(2, 2);
        assert!((hat_diagonal(&x, &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(hat_diagonal(&x, &[0.0, 0.0]).unwrap(), 0.0);

        let xs = random_matrix(5, 2, 5);
        let row = [1.0, 0.7];
        let inv = (xs.transpose() * &xs).try_inverse().unwrap();
        let v = DVector::from_column_slice(&row);
        let oracle = (v.transpose() * inv * &v)[0];
        assert!((hat_diagonal(&xs, &row).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn leverages_sum_to_p() {
        let x = random_matrix(12, 4, 6);
        let fit = lstsq(&x, &DVector::zeros(12)).unwrap();
        let tr: f64 = (0..12)
            .map(|i| fit.leverage(x.row(i).transpose().as_slice()))
            .sum();
        assert!((tr - 4.0).abs() < 1e-10);
        let rows: Vec<usize> = (0..12).collect();
        let batch: f64 = fit.leverages(&x, &rows).iter().sum();
        assert!((batch - 4.0).abs() < 1e-10);
    }

    #[test]
    fn ols_affine_equivariance() {
        let x = random_matrix(30, 3, 7);
        let mut rng = RngStream::new(8, 0).rng();
        let y = DVector::from_fn(30, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let d = Dataset::new(y.clone(), x.clone(), None).unwrap();
        let b = ols_fit(&d).unwrap().beta_vec();
        let t = DVector::from_column_slice(&[0.5, -1.0, 3.0]);
        let s = -2.5;
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -2.0, 0.0, 2.0, 0.5, 0.0, -1.0, 1.5]);
        let y2 = &y * s + &x * &t;
        let x2 = &x * &a;
        let d2 = Dataset::new(y2, x2, None).unwrap();
        let b2 = ols_fit(&d2).unwrap().beta_vec();
        let expected = a.try_inverse().unwrap() * (&b * s + &t);
        assert!((b2 - &expected).amax() <= 1e-10 * expected.amax());
    }
}
