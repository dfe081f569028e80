//! Contamination scenarios: a second normal population moved along a linear
//! path in its parameters, point contamination, and overlap between the two
//! populations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Source, TrueModel};
use crate::dist::{norm_cdf, norm_quantile};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Default number of equispaced points on a lambda range.
pub const DEFAULT_GRID_POINTS: usize = 41;

/// `points` equispaced values from `lo` to `hi` inclusive.
pub fn lambda_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![lo],
        _ => (0..points)
            .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Mean and covariance of the contaminating normal, response first.
#[derive(Debug, Clone, PartialEq)]
pub struct M2Spec {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl M2Spec {
    pub fn new(mu: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let k = mu.len();
        if sigma.shape() != (k, k) {
            return Err(Error::Domain(format!("covariance is {:?}, mean has {k} entries", sigma.shape())));
        }
        if (&sigma - sigma.transpose()).amax() > 1e-12 * sigma.amax().max(1.0) {
            return Err(Error::Domain("covariance is not symmetric".into()));
        }
        Ok(Self {
            mu: DVector::from_vec(mu),
            sigma,
        })
    }

    /// Point mass at `(y0, x0)`.
    pub fn point(y0: f64, x0: &[f64]) -> Self {
        let mu: Vec<f64> = std::iter::once(y0).chain(x0.iter().copied()).collect();
        let k = mu.len();
        Self {
            mu: DVector::from_vec(mu),
            sigma: DMatrix::zeros(k, k),
        }
    }

    /// `L` with `L L' = Sigma`; Cholesky when positive definite, otherwise
    /// from the eigendecomposition with round-off negatives clipped.
    pub fn factor(&self) -> Result<DMatrix<f64>> {
        if let Some(ch) = self.sigma.clone().cholesky() {
            return Ok(ch.l());
        }
        let eig = self.sigma.clone().symmetric_eigen();
        let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
        if eig.eigenvalues.iter().any(|&v| v < -1e-10 * scale) {
            return Err(Error::Domain("covariance is not positive semi-definite".into()));
        }
        let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
    }

    /// Mean of the response given carriers `x`.
    pub fn conditional_mean(&self, x: &[f64]) -> f64 {
        let k = self.mu.len();
        let s_xx = self.sigma.view((1, 1), (k - 1, k - 1)).into_owned();
        let s_yx: DVector<f64> = self.sigma.view((1, 0), (k - 1, 1)).column(0).into_owned();
        let dx = DVector::from_iterator(k - 1, x.iter().zip(self.mu.iter().skip(1)).map(|(a, m)| a - m));
        let w = match s_xx.clone().cholesky() {
            Some(ch) => ch.solve(&s_yx),
            None => s_xx.pseudo_inverse(1e-12).map(|inv| inv * &s_yx).unwrap_or_else(|_| DVector::zeros(k - 1)),
        };
        self.mu[0] + w.dot(&dx)
    }
}

/// The contaminating population along its path: the centre is
/// `lambda * theta2_0 + (1 - lambda) * theta2_1`, where `theta2_0` is the
/// M1 centre shifted by `d` in every carrier and `theta2_1` has every
/// coordinate equal to `mu2`. The covariance is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub d: f64,
    pub mu2: f64,
    /// Covariance rows, response first.
    pub sigma: Vec<Vec<f64>>,
    pub lambda_grid: Vec<f64>,
    pub n2: usize,
}

impl ContaminationSpec {
    pub fn validate(&self, model: &TrueModel) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(Error::InvalidInput("lambda_grid is empty".into()));
        }
        if self.lambda_grid.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidInput("lambda_grid has non-finite values".into()));
        }
        let k = model.n_carriers() + 1;
        if self.sigma.len() != k || self.sigma.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidInput(format!("sigma must be {k} x {k}")));
        }
        self.m2_at(model, self.lambda_grid[0])?.factor()?;
        Ok(())
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let k = self.sigma.len();
        DMatrix::from_fn(k, k, |i, j| self.sigma[i][j])
    }

    pub fn theta2_0(&self, model: &TrueModel) -> Vec<f64> {
        mu_of_lambda(model, self.d, self.mu2, 1.0)
    }

    pub fn theta2_1(&self, model: &TrueModel) -> Vec<f64> {
        mu_of_lambda(model, self.d, self.mu2, 0.0)
    }

    pub fn m2_at(&self, model: &TrueModel, lambda: f64) -> Result<M2Spec> {
        M2Spec::new(mu_of_lambda(model, self.d, self.mu2, lambda), self.covariance())
    }
}

/// Centre of the contaminating normal at `lambda`, response first.
pub fn mu_of_lambda(model: &TrueModel, d: f64, mu2: f64, lambda: f64) -> Vec<f64> {
    let shifted: Vec<f64> = model.mu_x().iter().map(|m| m + d).collect();
    std::iter::once(model.mean_response(&shifted))
        .chain(shifted)
        .map(|v| v * lambda + mu2 * (1.0 - lambda))
        .collect()
}

/// Centre of M1: the mean response at the centre of the design region.
pub fn m1_center(model: &TrueModel) -> Vec<f64> {
    let mx = model.mu_x();
    std::iter::once(model.mean_response(&mx)).chain(mx).collect()
}

/// `n` rows of independent uniform carriers on the model's region, without
/// the intercept column.
pub fn uniform_carriers(model: &TrueModel, n: usize, rng: &RngStream) -> DMatrix<f64> {
    let mut g = rng.rng();
    let region = &model.region;
    let mut x = DMatrix::zeros(n, region.len());
    for i in 0..n {
        for (j, &(a, b)) in region.iter().enumerate() {
            x[(i, j)] = a + (b - a) * g.random::<f64>();
        }
    }
    x
}

/// `n1` rows from the regression model followed by `n2` rows from the
/// contaminating normal. `fixed_x` supplies the M1 carriers (without the
/// intercept) so that one design can serve every lambda.
pub fn sample_mixture(
    model: &TrueModel,
    m2: &M2Spec,
    n1: usize,
    n2: usize,
    rng: &RngStream,
    fixed_x: Option<&DMatrix<f64>>,
) -> Result<Dataset> {
    model.validate()?;
    let q = model.n_carriers();
    if m2.mu.len() != q + 1 {
        return Err(Error::Domain(format!("M2 has dimension {}, model needs {}", m2.mu.len(), q + 1)));
    }
    let l = m2.factor()?;
    let owned;
    let x1 = match fixed_x {
        Some(x) => {
            if x.shape() != (n1, q) {
                return Err(Error::InvalidInput(format!("fixed carriers are {:?}, need ({n1}, {q})", x.shape())));
            }
            x
        }
        None => {
            owned = uniform_carriers(model, n1, &rng.child(&[0]));
            &owned
        }
    };
    let n = n1 + n2;
    let mut y = Vec::with_capacity(n);
    let mut x = DMatrix::zeros(n, q + 1);
    let mut g = rng.child(&[1]).rng();
    for i in 0..n1 {
        x[(i, 0)] = 1.0;
        let row: Vec<f64> = x1.row(i).iter().copied().collect();
        for (j, v) in row.iter().enumerate() {
            x[(i, j + 1)] = *v;
        }
        let e: f64 = g.sample(StandardNormal);
        y.push(model.mean_response(&row) + model.sigma_eps * e);
    }
    let mut g = rng.child(&[2]).rng();
    for i in n1..n {
        let z = DVector::from_fn(q + 1, |_, _| g.sample::<f64, _>(StandardNormal));
        let w = &m2.mu + &l * z;
        y.push(w[0]);
        x[(i, 0)] = 1.0;
        for j in 0..q {
            x[(i, j + 1)] = w[j + 1];
        }
    }
    let source = std::iter::repeat_n(Source::M1, n1).chain(std::iter::repeat_n(Source::M2, n2)).collect();
    Dataset::new(DVector::from_vec(y), x, Some(source))
}

/// Noise standard deviation of the point-contamination base data: about 95%
/// of responses fall in `[-0.5, 0.5]`.
pub fn point_base_sigma() -> f64 {
    0.5 / norm_quantile(0.975)
}

/// Base model of the point-contamination study: zero line, carriers on
/// `[0, 1]`.
pub fn point_base_model() -> TrueModel {
    TrueModel {
        alpha: 0.0,
        beta: vec![0.0],
        sigma_eps: point_base_sigma(),
        region: vec![(0.0, 1.0)],
    }
}

/// Append `k` identical rows `(y0, x0)` labelled M2. `x0` excludes the
/// intercept.
pub fn point_contaminate(data: &Dataset, x0: &[f64], y0: f64, k: usize) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::InvalidInput("point contamination needs k >= 1".into()));
    }
    if x0.len() + 1 != data.p() {
        return Err(Error::InvalidInput(format!("x0 has {} carriers, data has {}", x0.len(), data.p() - 1)));
    }
    let row: Vec<f64> = std::iter::once(1.0).chain(x0.iter().copied()).collect();
    let rows = DMatrix::from_fn(k, data.p(), |_, j| row[j]);
    data.append(&vec![y0; k], &rows, Source::M2)
}

/// Half-width of the overlap strip in units of the error SD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapConfig {
    pub strip_multiplier: f64,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        Self { strip_multiplier: 2.0 }
    }
}

impl OverlapConfig {
    pub fn new(strip_multiplier: f64) -> Result<Self> {
        if !(strip_multiplier > 0.0 && strip_multiplier.is_finite()) {
            return Err(Error::Domain(format!("strip multiplier {strip_multiplier} must be positive")));
        }
        Ok(Self { strip_multiplier })
    }

    /// The strip with two-sided normal tail probability `gamma`.
    pub fn from_gamma(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Domain(format!("gamma {gamma} outside (0, 1)")));
        }
        Self::new(norm_quantile(1.0 - gamma / 2.0))
    }

    pub fn gamma(&self) -> f64 {
        2.0 * (1.0 - norm_cdf(self.strip_multiplier))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub lambda: f64,
    pub empirical: f64,
    pub theoretical: f64,
    pub mahalanobis_sq: f64,
}

/// Fraction of M2 rows whose carriers lie in the design region and whose
/// conditional M2 mean lies in the strip around the true regression.
pub fn empirical_overlap(data: &Dataset, model: &TrueModel, m2: &M2Spec, cfg: &OverlapConfig) -> Result<f64> {
    let Some(source) = data.source() else { return Err(Error::UndefinedIndex) };
    let half = cfg.strip_multiplier * model.sigma_eps;
    let (mut inside, mut total) = (0usize, 0usize);
    for (i, s) in source.iter().enumerate() {
        if *s != Source::M2 {
            continue;
        }
        total += 1;
        let x: Vec<f64> = data.x().row(i).iter().skip(1).copied().collect();
        if model.in_region(&x) && (m2.conditional_mean(&x) - model.mean_response(&x)).abs() <= half {
            inside += 1;
        }
    }
    if total == 0 {
        return Err(Error::UndefinedIndex);
    }
    Ok(inside as f64 / total as f64)
}

/// Probability that `b'W` lies in `[c_lo, c_hi]` for `W ~ N(mu, sigma)`.
/// A degenerate `b'W` is an atom at `b'mu`.
pub fn strip_probability(b: &DVector<f64>, c_lo: f64, c_hi: f64, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    let (c_lo, c_hi) = if c_lo <= c_hi { (c_lo, c_hi) } else { (c_hi, c_lo) };
    let centre = b.dot(mu);
    let var = (b.transpose() * sigma * b)[0];
    if !(var > 0.0) {
        return f64::from(u8::from(c_lo <= centre && centre <= c_hi));
    }
    let s = var.sqrt();
    (norm_cdf((c_hi - centre) / s) - norm_cdf((c_lo - centre) / s)).clamp(0.0, 1.0)
}

/// Normal mass of M2 between the hyperplanes `y - beta'x = alpha +- k sigma`.
pub fn theoretical_overlap(model: &TrueModel, m2: &M2Spec, cfg: &OverlapConfig) -> f64 {
    let b = DVector::from_iterator(model.n_carriers() + 1, std::iter::once(1.0).chain(model.beta.iter().map(|v| -v)));
    let half = cfg.strip_multiplier * model.sigma_eps;
    strip_probability(&b, model.alpha - half, model.alpha + half, &m2.mu, &m2.sigma)
}

/// `(mu1 - mu2)' Sigma^{-1} (mu1 - mu2)`.
pub fn mahalanobis_sq(mu1: &[f64], mu2: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
    if mu1.len() != mu2.len() || sigma.shape() != (mu1.len(), mu1.len()) {
        return Err(Error::Domain("dimension mismatch".into()));
    }
    let ch = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("covariance is singular".into()))?;
    let diff = DVector::from_iterator(mu1.len(), mu1.iter().zip(mu2).map(|(a, b)| a - b));
    Ok(diff.dot(&ch.solve(&diff)))
}

/// Overlap and distance between the populations at `lambda`, with the
/// empirical index taken from one sample.
pub fn overlap_report(
    data: &Dataset,
    model: &TrueModel,
    contam: &ContaminationSpec,
    lambda: f64,
    cfg: &OverlapConfig,
) -> Result<OverlapReport> {
    let m2 = contam.m2_at(model, lambda)?;
    Ok(OverlapReport {
        lambda,
        empirical: empirical_overlap(data, model, &m2, cfg)?,
        theoretical: theoretical_overlap(model, &m2, cfg),
        mahalanobis_sq: mahalanobis_sq(&m1_center(model), m2.mu.as_slice(), &m2.sigma)?,
    })
}

/// A complete lambda experiment design: model, sample sizes and path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub model: TrueModel,
    pub n1: usize,
    pub contamination: ContaminationSpec,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.contamination.validate(&self.model)?;
        if self.n1 < self.model.n_carriers() + 2 {
            return Err(Error::InvalidInput(format!("n1 = {} is too small", self.n1)));
        }
        Ok(())
    }

    /// One slope, carriers on `[0, 10]`; the two centres meet at lambda 1.
    /// The grid has 15 points.
    pub fn example1() -> Self {
        Self {
            model: TrueModel {
                alpha: 10.0,
                beta: vec![3.0],
                sigma_eps: 10.0,
                region: vec![(0.0, 10.0)],
            },
            n1: 100,
            contamination: ContaminationSpec {
                d: 0.0,
                mu2: 10.0,
                sigma: vec![vec![20.0, 2.0], vec![2.0, 20.0]],
                // half-unit steps, so the grid passes through lambda = 1
                lambda_grid: lambda_grid(-3.0, 4.0, 15),
                n2: 30,
            },
        }
    }

    /// Displaced centres, so the contamination never coincides with M1.
    pub fn example2() -> Self {
        Self {
            model: TrueModel {
                alpha: 10.0,
                beta: vec![1.0],
                sigma_eps: 10.0,
                region: vec![(0.0, 2.0)],
            },
            n1: 100,
            contamination: ContaminationSpec {
                d: 2.0,
                mu2: 3.4,
                sigma: vec![vec![4.0, 0.0], vec![0.0, 0.1]],
                lambda_grid: lambda_grid(0.0, 8.0, DEFAULT_GRID_POINTS),
                n2: 20,
            },
        }
    }

    /// Five carriers on `(0, 2 sqrt 10)`, all slopes 5.
    pub fn example3() -> Self {
        let q = 5;
        let hi = 2.0 * 10f64.sqrt();
        let mut sigma = vec![vec![0.0; q + 1]; q + 1];
        sigma[0][0] = 100.0;
        for (j, row) in sigma.iter_mut().enumerate().skip(1) {
            row[j] = 1.0;
        }
        Self {
            model: TrueModel {
                alpha: 5.0,
                beta: vec![5.0; q],
                sigma_eps: 10.0,
                region: vec![(0.0, hi); q],
            },
            n1: 200,
            contamination: ContaminationSpec {
                d: 2.0,
                mu2: 3.0,
                sigma,
                lambda_grid: lambda_grid(-1.0, 2.6, DEFAULT_GRID_POINTS),
                n2: 60,
            },
        }
    }
}
