//! Bias, variance, dispersion, power and size summaries of simulated fits.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FitResult, Method, Source, TrueModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfoSource {
    AnalyticUniform,
    Empirical,
}

/// `E[x x']` for carrier vectors with a leading one.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationMatrix {
    pub matrix: DMatrix<f64>,
    pub source: InfoSource,
}

impl InformationMatrix {
    /// Closed form for independent uniform carriers on the model's region.
    pub fn analytic_uniform(model: &TrueModel) -> Self {
        let q = model.n_carriers();
        let mean: Vec<f64> = std::iter::once(1.0).chain(model.mu_x()).collect();
        let mut m = DMatrix::from_fn(q + 1, q + 1, |i, j| mean[i] * mean[j]);
        for (j, &(a, b)) in model.region.iter().enumerate() {
            m[(j + 1, j + 1)] = (a * a + a * b + b * b) / 3.0;
        }
        Self {
            matrix: m,
            source: InfoSource::AnalyticUniform,
        }
    }

    /// `(1/n) sum x x'` over the M1 rows (all rows when unlabelled).
    pub fn empirical(data: &Dataset) -> Result<Self> {
        let rows: Vec<usize> = match data.source() {
            Some(s) => (0..data.n()).filter(|&i| s[i] == Source::M1).collect(),
            None => (0..data.n()).collect(),
        };
        if rows.is_empty() {
            return Err(Error::InvalidInput("no M1 rows for the information matrix".into()));
        }
        let x = data.select_rows(&rows);
        Ok(Self {
            matrix: x.transpose() * &x / rows.len() as f64,
            source: InfoSource::Empirical,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// `{(b - beta)' I (b - beta)}^{1/2}`.
pub fn bias_norm(beta_hat: &[f64], beta_true: &[f64], info: &InformationMatrix) -> Result<f64> {
    let p = info.dim();
    if beta_hat.len() != p || beta_true.len() != p {
        return Err(Error::InvalidInput(format!(
            "coefficient lengths {} and {} against a {p} x {p} information matrix",
            beta_hat.len(),
            beta_true.len()
        )));
    }
    let d = DVector::from_iterator(p, beta_hat.iter().zip(beta_true).map(|(a, b)| a - b));
    Ok(d.dot(&(&info.matrix * &d)).max(0.0).sqrt())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Componentwise summaries of replicated coefficient estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefStats {
    pub mean: Vec<f64>,
    pub sq_bias: Vec<f64>,
    /// Sample variance (divisor `R - 1`).
    pub variance: Vec<f64>,
    /// Median absolute deviation from the median, unscaled.
    pub mad: Vec<f64>,
    /// Standard error of each mean.
    pub mean_se: Vec<f64>,
    pub replicates: usize,
}

/// Squared bias, variance and MAD of `estimates` (one vector per
/// replicate) about `truth`. Sums run in replicate order.
pub fn accumulate(estimates: &[Vec<f64>], truth: &[f64]) -> Result<CoefStats> {
    let r = estimates.len();
    if r < 2 {
        return Err(Error::InvalidInput(format!("{r} replicates; at least 2 are needed")));
    }
    let p = truth.len();
    if estimates.iter().any(|e| e.len() != p) {
        return Err(Error::InvalidInput("estimate length does not match the truth".into()));
    }
    let rf = r as f64;
    let mut out = CoefStats {
        mean: vec![0.0; p],
        sq_bias: vec![0.0; p],
        variance: vec![0.0; p],
        mad: vec![0.0; p],
        mean_se: vec![0.0; p],
        replicates: r,
    };
    let mut col = vec![0.0; r];
    for j in 0..p {
        for (c, e) in col.iter_mut().zip(estimates) {
            *c = e[j];
        }
        let mean = col.iter().sum::<f64>() / rf;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (rf - 1.0);
        out.mean[j] = mean;
        out.sq_bias[j] = (mean - truth[j]).powi(2);
        out.variance[j] = var;
        out.mean_se[j] = (var / rf).sqrt();
        let med = median(&mut col);
        let mut dev: Vec<f64> = col.iter().map(|v| (v - med).abs()).collect();
        out.mad[j] = median(&mut dev);
    }
    Ok(out)
}

/// Fraction of M2 rows the fit flags.
pub fn power_fraction(fit: &FitResult, data: &Dataset) -> Result<f64> {
    let (hits, n2) = power_count(fit, data)?;
    Ok(hits as f64 / n2 as f64)
}

/// `(flagged M2 rows, M2 rows)`.
pub fn power_count(fit: &FitResult, data: &Dataset) -> Result<(usize, usize)> {
    let Some(source) = data.source() else { return Err(Error::UndefinedPower) };
    let n2 = data.n2();
    if n2 == 0 {
        return Err(Error::UndefinedPower);
    }
    if fit.outlier_flags.len() != source.len() {
        return Err(Error::InvalidInput("flags and data differ in length".into()));
    }
    let hits = fit
        .outlier_flags
        .iter()
        .zip(source)
        .filter(|(&f, &s)| f && s == Source::M2)
        .count();
    Ok((hits, n2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeEstimate {
    pub size: f64,
    /// Binomial standard error.
    pub se: f64,
    pub replicates: usize,
}

/// Fraction of replicates declaring at least one outlier.
pub fn size_estimate(any_flag: &[bool]) -> Result<SizeEstimate> {
    if any_flag.is_empty() {
        return Err(Error::InvalidInput("no replicates".into()));
    }
    let r = any_flag.len() as f64;
    let size = any_flag.iter().filter(|&&f| f).count() as f64 / r;
    Ok(SizeEstimate {
        size,
        se: (size * (1.0 - size) / r).sqrt(),
        replicates: any_flag.len(),
    })
}

/// Summary of one `(lambda, method)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaCell {
    pub lambda: f64,
    pub method: Method,
    pub stats: CoefStats,
    /// Mean fraction of M2 rows flagged.
    pub power: f64,
    pub power_se: f64,
    /// Mean number of M2 rows flagged.
    pub power_count: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeCell {
    pub n: usize,
    pub p: usize,
    pub method: Method,
    pub estimate: SizeEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    SqBias,
    Variance,
    Mad,
    /// Squared bias plus variance.
    Mse,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub cells: Vec<LambdaCell>,
    pub sizes: Vec<SizeCell>,
}

impl MetricsTable {
    pub fn lambdas(&self) -> Vec<f64> {
        let set: BTreeSet<u64> = self.cells.iter().map(|c| order_key(c.lambda)).collect();
        set.into_iter().map(from_order_key).collect()
    }

    pub fn methods(&self) -> Vec<Method> {
        let set: BTreeSet<Method> = self.cells.iter().map(|c| c.method).collect();
        set.into_iter().collect()
    }

    pub fn cell(&self, lambda: f64, method: Method) -> Option<&LambdaCell> {
        self.cells.iter().find(|c| c.lambda == lambda && c.method == method)
    }

    pub fn size(&self, n: usize, method: Method) -> Option<&SizeCell> {
        self.sizes.iter().find(|c| c.n == n && c.method == method)
    }

    /// Running sums over ascending lambda of one quantity for one method
    /// and coefficient.
    pub fn partial_sums(&self, method: Method, quantity: Quantity, coef: usize) -> Result<Vec<(f64, f64)>> {
        let mut acc = 0.0;
        self.lambdas()
            .into_iter()
            .map(|l| {
                let c = self
                    .cell(l, method)
                    .ok_or(Error::IncompleteTable { lambda: l, method })?;
                acc += value(&c.stats, quantity, coef)?;
                Ok((l, acc))
            })
            .collect()
    }

    /// Quantity summed over the given coefficients of one cell.
    pub fn total(&self, lambda: f64, method: Method, quantity: Quantity, coefs: &[usize]) -> Result<f64> {
        let c = self.cell(lambda, method).ok_or(Error::IncompleteTable { lambda, method })?;
        coefs.iter().map(|&j| value(&c.stats, quantity, j)).sum()
    }

    /// Power averaged over the lambda grid.
    pub fn average_power(&self, method: Method) -> Result<f64> {
        let ls = self.lambdas();
        let mut s = 0.0;
        for &l in &ls {
            s += self.cell(l, method).ok_or(Error::IncompleteTable { lambda: l, method })?.power;
        }
        Ok(s / ls.len() as f64)
    }

    /// `lambda,method,coef,sq_bias,variance,mad,power,replicates`, one row
    /// per coefficient, cells in ascending `(lambda, method)` order.
    pub fn write_lambda_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["lambda", "method", "coef", "sq_bias", "variance", "mad", "power", "replicates"])?;
        let mut cells: Vec<&LambdaCell> = self.cells.iter().collect();
        cells.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.method.cmp(&b.method)));
        for c in cells {
            for j in 0..c.stats.sq_bias.len() {
                w.write_record([
                    fmt(c.lambda),
                    c.method.to_string(),
                    j.to_string(),
                    fmt(c.stats.sq_bias[j]),
                    fmt(c.stats.variance[j]),
                    fmt(c.stats.mad[j]),
                    fmt(c.power),
                    c.stats.replicates.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// `n,p,method,size,se,replicates`.
    pub fn write_size_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["n", "p", "method", "size", "se", "replicates"])?;
        let mut cells: Vec<&SizeCell> = self.sizes.iter().collect();
        cells.sort_by_key(|c| (c.p, c.n, c.method));
        for c in cells {
            w.write_record([
                c.n.to_string(),
                c.p.to_string(),
                c.method.to_string(),
                fmt(c.estimate.size),
                fmt(c.estimate.se),
                c.estimate.replicates.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn value(s: &CoefStats, q: Quantity, j: usize) -> Result<f64> {
    if j >= s.sq_bias.len() {
        return Err(Error::InvalidInput(format!("no coefficient {j}")));
    }
    Ok(match q {
        Quantity::SqBias => s.sq_bias[j],
        Quantity::Variance => s.variance[j],
        Quantity::Mad => s.mad[j],
        Quantity::Mse => s.sq_bias[j] + s.variance[j],
    })
}

/// Shortest string that parses back to the same float.
pub fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else {
        String::new()
    }
}

// Order-preserving map from floats to integers, for sorted sets.
fn order_key(v: f64) -> u64 {
    let b = v.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | 1 << 63
    }
}

fn from_order_key(k: u64) -> f64 {
    f64::from_bits(if k >> 63 == 1 { k & !(1 << 63) } else { !k })
}
