//! Datasets, regression models and fit results.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which population a simulated row was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    M1,
    M2,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::M1 => "M1",
            Source::M2 => "M2",
        })
    }
}

impl FromStr for Source {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "M1" | "m1" | "1" => Ok(Source::M1),
            "M2" | "m2" | "2" => Ok(Source::M2),
            other => Err(Error::InvalidInput(format!("unknown source label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Ols,
    Fs,
    Lts,
    Ltsr,
    S,
    Mm,
}

impl Method {
    /// The five very robust estimators, in reporting order.
    pub const ROBUST: [Method; 5] = [Method::Fs, Method::Lts, Method::Ltsr, Method::S, Method::Mm];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ols => "OLS",
            Method::Fs => "FS",
            Method::Lts => "LTS",
            Method::Ltsr => "LTSR",
            Method::S => "S",
            Method::Mm => "MM",
        }
    }

    /// FS, LTS and LTSr estimate from hard 0/1 trimmed subsets.
    pub fn is_hard_trimming(&self) -> bool {
        matches!(self, Method::Fs | Method::Lts | Method::Ltsr)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "OLS" => Ok(Method::Ols),
            "FS" => Ok(Method::Fs),
            "LTS" => Ok(Method::Lts),
            "LTSR" => Ok(Method::Ltsr),
            "S" => Ok(Method::S),
            "MM" => Ok(Method::Mm),
            other => Err(Error::InvalidInput(format!("unknown method {other:?}"))),
        }
    }
}

/// Response vector, carrier matrix (intercept as an explicit column of ones)
/// and optional per-row population labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    source: Option<Vec<Source>>,
    y_scale: f64,
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, source: Option<Vec<Source>>) -> Result<Self> {
        let (n, p) = x.shape();
        if y.len() != n {
            return Err(Error::InvalidInput(format!(
                "response has {} rows but carriers have {n}",
                y.len()
            )));
        }
        if p == 0 || n < p {
            return Err(Error::InvalidInput(format!("need n >= p >= 1, got n = {n}, p = {p}")));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite value in data".into()));
        }
        if let Some(s) = &source {
            if s.len() != n {
                return Err(Error::InvalidInput(format!(
                    "source labels have {} rows, expected {n}",
                    s.len()
                )));
            }
        }
        let y_scale = y.amax().max(f64::MIN_POSITIVE);
        Ok(Self { y, x, source, y_scale })
    }

    /// Build from carrier rows without the intercept; a column of ones is
    /// prepended.
    pub fn with_intercept(y: Vec<f64>, carriers: &[Vec<f64>], source: Option<Vec<Source>>) -> Result<Self> {
        let n = y.len();
        if carriers.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} carrier rows for {n} responses",
                carriers.len()
            )));
        }
        let k = carriers.first().map_or(0, Vec::len);
        if carriers.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidInput("ragged carrier rows".into()));
        }
        let x = DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { carriers[i][j - 1] });
        Self::new(DVector::from_vec(y), x, source)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn source(&self) -> Option<&[Source]> {
        self.source.as_deref()
    }

    /// Count of rows labelled M2 (zero when unlabelled).
    pub fn n2(&self) -> usize {
        self.source
            .as_ref()
            .map_or(0, |s| s.iter().filter(|&&l| l == Source::M2).count())
    }

    pub fn select_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        self.x.select_rows(rows)
    }

    pub fn select_y(&self, rows: &[usize]) -> DVector<f64> {
        DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]))
    }

    /// The first `n` rows; used by the nested-sample size study.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        let rows: Vec<usize> = (0..n.min(self.n())).collect();
        self.subset(&rows)
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            self.select_y(rows),
            self.select_rows(rows),
            self.source.as_ref().map(|s| rows.iter().map(|&i| s[i]).collect()),
        )
    }

    /// Append rows (e.g. contamination). `x_rows` include the intercept column.
    pub fn append(&self, y: &[f64], x_rows: &DMatrix<f64>, label: Source) -> Result<Self> {
        let (n, p) = self.x.shape();
        let k = y.len();
        if x_rows.nrows() != k || x_rows.ncols() != p {
            return Err(Error::InvalidInput("appended rows do not match the design".into()));
        }
        let x = DMatrix::from_fn(n + k, p, |i, j| if i < n { self.x[(i, j)] } else { x_rows[(i - n, j)] });
        let yy = DVector::from_fn(n + k, |i, _| if i < n { self.y[i] } else { y[i - n] });
        let source = {
            let mut s = self.source.clone().unwrap_or_else(|| vec![Source::M1; n]);
            s.extend(std::iter::repeat_n(label, k));
            Some(s)
        };
        Self::new(yy, x, source)
    }

    /// `max |y|`, floored at the smallest positive float; the reference for
    /// treating residuals as exactly zero.
    pub fn y_scale(&self) -> f64 {
        self.y_scale
    }

    pub fn residuals(&self, beta: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.residual_vec(beta.as_slice()))
    }

    /// `y - X beta` as a plain vector.
    pub fn residual_vec(&self, beta: &[f64]) -> Vec<f64> {
        let mut r = self.y.as_slice().to_vec();
        for (j, &b) in beta.iter().enumerate() {
            for (ri, &xij) in r.iter_mut().zip(self.x.column(j).as_slice()) {
                *ri -= b * xij;
            }
        }
        r
    }

    pub fn transformed(&self, y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        Self::new(y, x, self.source.clone())
    }

    /// Read the `y, x1..x{p-1}[, source]` CSV layout; an intercept column is
    /// added.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("y") {
            return Err(Error::InvalidInput("first CSV column must be `y`".into()));
        }
        let has_source = headers.iter().next_back() == Some("source");
        let n_carriers = headers.len() - 1 - usize::from(has_source);
        for (j, h) in headers.iter().skip(1).take(n_carriers).enumerate() {
            if h != format!("x{}", j + 1) {
                return Err(Error::InvalidInput(format!(
                    "column {} is {h:?}, expected \"x{}\"",
                    j + 2,
                    j + 1
                )));
            }
        }
        let mut y = Vec::new();
        let mut carriers = Vec::new();
        let mut source = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = line + 2;
            let parse = |j: usize| -> Result<f64> {
                let field = rec.get(j).unwrap_or("");
                field
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("row {row}, column {}: bad number {field:?}", j + 1)))
            };
            y.push(parse(0)?);
            carriers.push((1..=n_carriers).map(parse).collect::<Result<Vec<_>>>()?);
            if has_source {
                source.push(rec.get(n_carriers + 1).unwrap_or("").parse::<Source>()?);
            }
        }
        Self::with_intercept(y, &carriers, has_source.then_some(source))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["y".to_string()];
        header.extend((1..self.p()).map(|j| format!("x{j}")));
        if self.source.is_some() {
            header.push("source".into());
        }
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![self.y[i].to_string()];
            rec.extend((1..self.p()).map(|j| self.x[(i, j)].to_string()));
            if let Some(s) = &self.source {
                rec.push(s[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// The uncontaminated regression model `y = alpha + beta' x + eps` with
/// independent uniform carriers on a rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueModel {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub sigma_eps: f64,
    /// Per-carrier interval `[a, b]`.
    pub region: Vec<(f64, f64)>,
}

impl TrueModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_eps > 0.0) {
            return Err(Error::Domain("sigma_eps must be positive".into()));
        }
        if self.region.len() != self.beta.len() {
            return Err(Error::Domain(format!(
                "{} slopes but {} carrier intervals",
                self.beta.len(),
                self.region.len()
            )));
        }
        if self.region.iter().any(|&(a, b)| !(a < b)) {
            return Err(Error::Domain("carrier intervals need a < b".into()));
        }
        Ok(())
    }

    pub fn n_carriers(&self) -> usize {
        self.beta.len()
    }

    /// Full coefficient vector, intercept first.
    pub fn coefficients(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.beta.len() + 1,
            std::iter::once(self.alpha).chain(self.beta.iter().copied()),
        )
    }

    pub fn mu_x(&self) -> Vec<f64> {
        self.region.iter().map(|&(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn mean_response(&self, x: &[f64]) -> f64 {
        self.alpha + self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn in_region(&self, x: &[f64]) -> bool {
        self.region.iter().zip(x).all(|(&(a, b), &v)| a <= v && v <= b)
    }
}

pub type Diagnostics = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: Method,
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub outlier_flags: Vec<bool>,
    /// Final observation weights in `[0, 1]`.
    pub weights: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    pub fn beta_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }

    pub fn n_flagged(&self) -> usize {
        self.outlier_flags.iter().filter(|&&f| f).count()
    }

    pub fn diag(&self, key: &str) -> Option<f64> {
        self.diagnostics.get(key).copied()
    }
}
