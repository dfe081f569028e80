//! Simulation experiments: the lambda sweep, the point-contamination grid
//! and the nested-sample size study.
//!
//! Every random draw is keyed by (replicate, cell, purpose) through
//! [`RngStream::child`], and results are gathered by index before being
//! summarised, so output does not depend on the number of threads.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biweight::{tuning_from_bdp, BiweightTuning};
use crate::data::{Dataset, Method, Source};
use crate::error::{Error, Result};
use crate::estimators::{lts_fit, lts_reweight, mm_estimate, outlier_test, s_estimate, LtsConfig, SubsetConfig, TestConfig};
use crate::forward_search::{fs_envelopes, fs_fit, EnvelopeSource, FsConfig, DEFAULT_ENVELOPE_SEED};
use crate::linalg::ols_fit;
use crate::metrics::{accumulate, fmt, size_estimate, LambdaCell, MetricsTable, Quantity, SizeCell};
use crate::rng::RngStream;
use crate::scenario::{
    empirical_overlap, m1_center, mahalanobis_sq, point_base_model, point_contaminate, sample_mixture,
    theoretical_overlap, uniform_carriers, M2Spec, OverlapConfig, OverlapReport, Scenario,
};

// Purpose tags for child streams.
const CARRIERS: u64 = 1;
const SAMPLE: u64 = 2;
const FIT: u64 = 3;

/// Tuning shared by every method in an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    pub n_elemental: usize,
    pub n_refine: usize,
    pub n_best: usize,
    /// Breakdown point of the S estimator.
    pub s_bdp: f64,
    /// Nominal efficiency of the MM estimator.
    pub mm_eff: f64,
    pub fs_init_subsets: usize,
    pub envelope_sims: usize,
    pub envelope_seed: u64,
    pub envelope_source: EnvelopeSource,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            n_elemental: 1000,
            n_refine: 2,
            n_best: 10,
            s_bdp: 0.5,
            mm_eff: 0.85,
            fs_init_subsets: 500,
            envelope_sims: 2000,
            envelope_seed: DEFAULT_ENVELOPE_SEED,
            envelope_source: EnvelopeSource::Simulated,
        }
    }
}

impl EstimatorSettings {
    fn subset(&self, rng: RngStream) -> SubsetConfig {
        SubsetConfig {
            n_elemental: self.n_elemental,
            n_refine: self.n_refine,
            n_best: self.n_best,
            rng,
        }
    }

    fn fs(&self, alpha: f64, rng: RngStream) -> FsConfig {
        let mut cfg = FsConfig::new(rng);
        cfg.alpha = alpha;
        cfg.init_subsets = self.fs_init_subsets;
        cfg.envelope_sims = self.envelope_sims;
        cfg.envelope_seed = self.envelope_seed;
        cfg.envelope_source = self.envelope_source;
        cfg
    }

    fn tuning(&self) -> Result<BiweightTuning> {
        tuning_from_bdp(self.s_bdp)
    }

    pub fn validate(&self) -> Result<()> {
        self.subset(RngStream::new(0, 0)).validate()?;
        self.tuning()?;
        if !(self.mm_eff > 0.0 && self.mm_eff < 1.0) {
            return Err(Error::InvalidInput(format!("mm_eff = {} outside (0, 1)", self.mm_eff)));
        }
        if self.fs_init_subsets == 0 {
            return Err(Error::InvalidInput("fs_init_subsets must be at least 1".into()));
        }
        if self.envelope_sims < 200 {
            return Err(Error::InvalidInput("envelope_sims must be at least 200".into()));
        }
        Ok(())
    }
}

/// One method's fit and outlier decision on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub method: Method,
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub flags: Vec<bool>,
    /// Flagged rows labelled M2.
    pub m2_flagged: usize,
}

/// Fit every requested method. LTS and LTSr share one LTS fit, S and MM
/// one S fit. Any failure fails the whole set.
pub fn fit_methods(
    data: &Dataset,
    methods: &[Method],
    alpha: f64,
    settings: &EstimatorSettings,
    rng: RngStream,
) -> Result<Vec<MethodOutcome>> {
    let test = TestConfig::new(alpha)?;
    let wants = |m: &[Method]| methods.iter().any(|x| m.contains(x));
    let lts = if wants(&[Method::Lts, Method::Ltsr]) {
        let cfg = LtsConfig {
            h: None,
            subset: settings.subset(rng.child(&[1])),
            reweight_alpha: Some(alpha),
        };
        Some(lts_fit(data, &cfg)?)
    } else {
        None
    };
    let s = if wants(&[Method::S, Method::Mm]) {
        Some(s_estimate(data, &settings.tuning()?, &settings.subset(rng.child(&[2])))?)
    } else {
        None
    };
    methods
        .iter()
        .map(|&m| {
            let fit = match m {
                Method::Ols => ols_fit(data)?,
                Method::Fs => fs_fit(data, &settings.fs(alpha, rng.child(&[3])))?.0,
                Method::Lts => lts.clone().expect("fitted above"),
                Method::Ltsr => lts_reweight(data, lts.as_ref().expect("fitted above"), &test)?,
                Method::S => s.clone().expect("fitted above"),
                Method::Mm => mm_estimate(data, s.as_ref().expect("fitted above"), settings.mm_eff)?,
            };
            let flags = outlier_test(data, &fit, &test);
            let m2_flagged = data.source().map_or(0, |s| {
                flags.iter().zip(s).filter(|(&f, &l)| f && l == Source::M2).count()
            });
            Ok(MethodOutcome {
                method: m,
                beta: fit.beta,
                sigma: fit.sigma,
                flags,
                m2_flagged,
            })
        })
        .collect()
}

/// Simulate the forward search envelopes for every sample size up front, so
/// the parallel replicates only read them.
pub fn prewarm_envelopes(methods: &[Method], sizes: &[usize], p: usize, alpha: f64, settings: &EstimatorSettings) -> Result<()> {
    if !methods.contains(&Method::Fs) {
        return Ok(());
    }
    let cfg = settings.fs(alpha, RngStream::new(0, 0));
    for &n in sizes {
        fs_envelopes(n, p, alpha, &cfg)?;
    }
    Ok(())
}

fn validate_common(methods: &[Method], replicates: usize, alpha: f64) -> Result<()> {
    if methods.is_empty() {
        return Err(Error::InvalidInput("methods is empty".into()));
    }
    if replicates == 0 {
        return Err(Error::InvalidInput("replicates must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha = {alpha} outside (0, 1)")));
    }
    Ok(())
}

fn default_methods() -> Vec<Method> {
    Method::ROBUST.to_vec()
}

fn default_alpha() -> f64 {
    0.01
}

fn default_strip() -> f64 {
    2.0
}

/// A recorded estimation failure; the replicate is dropped for every method
/// in that cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    /// Lambda, sample size, or grid index, by experiment.
    pub cell: String,
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub seed: u64,
    #[serde(default = "default_strip")]
    pub strip_multiplier: f64,
    #[serde(default)]
    pub estimators: EstimatorSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        validate_common(&self.methods, self.replicates, self.alpha)?;
        OverlapConfig::new(self.strip_multiplier)?;
        self.estimators.validate()
    }
}

/// One replicate's coefficients for the boxplot output.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub lambda: f64,
    pub method: Method,
    pub replicate: usize,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaResult {
    pub table: MetricsTable,
    pub overlap: Vec<OverlapReport>,
    pub estimates: Vec<EstimateRow>,
    pub failures: Vec<Failure>,
    pub attempted: usize,
}

struct Replicate {
    outcomes: Result<Vec<MethodOutcome>>,
    overlap: Option<f64>,
}

/// Summarise the outcomes of one cell; `reps[r]` is replicate `r`.
fn summarise_cell(
    lambda: f64,
    methods: &[Method],
    truth: &[f64],
    reps: &[(usize, &Vec<MethodOutcome>)],
    n2: usize,
    failures: usize,
) -> Result<Vec<LambdaCell>> {
    methods
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let est: Vec<Vec<f64>> = reps.iter().map(|(_, o)| o[k].beta.clone()).collect();
            let stats = accumulate(&est, truth)?;
            let (power, power_se, power_count) = if n2 > 0 {
                let counts: Vec<f64> = reps
                    .iter()
                    .map(|(_, o)| o[k].m2_flagged as f64)
                    .collect();
                let r = counts.len() as f64;
                let mean_count = counts.iter().sum::<f64>() / r;
                let fr: Vec<f64> = counts.iter().map(|c| c / n2 as f64).collect();
                let mean = mean_count / n2 as f64;
                let var = fr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0).max(1.0);
                (mean, (var / r).sqrt(), mean_count)
            } else {
                (f64::NAN, f64::NAN, f64::NAN)
            };
            Ok(LambdaCell {
                lambda,
                method: m,
                stats,
                power,
                power_se,
                power_count,
                failures,
            })
        })
        .collect()
}

/// The lambda sweep: every replicate draws its M1 carriers once and reuses
/// them at every lambda.
pub fn run_lambda_experiment(cfg: &ExperimentConfig) -> Result<LambdaResult> {
    cfg.validate()?;
    let sc = &cfg.scenario;
    let model = &sc.model;
    let contam = &sc.contamination;
    let grid = &contam.lambda_grid;
    let (n1, n2) = (sc.n1, contam.n2);
    let root = RngStream::new(cfg.seed, 0);
    let overlap_cfg = OverlapConfig::new(cfg.strip_multiplier)?;
    let truth: Vec<f64> = model.coefficients().iter().copied().collect();
    prewarm_envelopes(&cfg.methods, &[n1 + n2], truth.len(), cfg.alpha, &cfg.estimators)?;
    let m2s: Vec<M2Spec> = grid.iter().map(|&l| contam.m2_at(model, l)).collect::<Result<_>>()?;
    let carriers: Vec<DMatrix<f64>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| uniform_carriers(model, n1, &root.child(&[r as u64, CARRIERS])))
        .collect();

    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|k| (0..cfg.replicates).map(move |r| (k, r))).collect();
    let runs: Vec<Replicate> = jobs
        .par_iter()
        .map(|&(k, r)| {
            let key = [r as u64, k as u64];
            let data = match sample_mixture(model, &m2s[k], n1, n2, &root.child(&[key[0], key[1], SAMPLE]), Some(&carriers[r])) {
                Ok(d) => d,
                Err(e) => return Replicate { outcomes: Err(e), overlap: None },
            };
            let overlap = if n2 > 0 { empirical_overlap(&data, model, &m2s[k], &overlap_cfg).ok() } else { None };
            let outcomes = fit_methods(&data, &cfg.methods, cfg.alpha, &cfg.estimators, root.child(&[key[0], key[1], FIT]));
            Replicate { outcomes, overlap }
        })
        .collect();

    let mut table = MetricsTable::default();
    let mut overlap = Vec::with_capacity(grid.len());
    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    let m1 = m1_center(model);
    for (k, &lambda) in grid.iter().enumerate() {
        let cell = &runs[k * cfg.replicates..(k + 1) * cfg.replicates];
        let mut ok = Vec::new();
        for (r, rep) in cell.iter().enumerate() {
            match &rep.outcomes {
                Ok(o) => ok.push((r, o)),
                Err(e) => failures.push(Failure {
                    cell: fmt(lambda),
                    replicate: r,
                    message: e.to_string(),
                }),
            }
        }
        let n_fail = cfg.replicates - ok.len();
        if ok.len() >= 2 {
            table
                .cells
                .extend(summarise_cell(lambda, &cfg.methods, &truth, &ok, n2, n_fail)?);
        }
        for (r, o) in &ok {
            for out in o.iter() {
                estimates.push(EstimateRow {
                    lambda,
                    method: out.method,
                    replicate: *r,
                    beta: out.beta.clone(),
                });
            }
        }
        let emp: Vec<f64> = cell.iter().filter_map(|c| c.overlap).collect();
        overlap.push(OverlapReport {
            lambda,
            empirical: if emp.is_empty() { f64::NAN } else { emp.iter().sum::<f64>() / emp.len() as f64 },
            theoretical: theoretical_overlap(model, &m2s[k], &overlap_cfg),
            mahalanobis_sq: mahalanobis_sq(&m1, m2s[k].mu.as_slice(), &m2s[k].sigma).unwrap_or(f64::NAN),
        });
    }
    Ok(LambdaResult {
        table,
        overlap,
        estimates,
        failures,
        attempted: jobs.len(),
    })
}

fn default_n_base() -> usize {
    100
}

fn default_n_contam() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointGridConfig {
    /// Carrier positions of the contamination.
    pub x0_grid: Vec<f64>,
    /// Response values of the contamination.
    pub y0_grid: Vec<f64>,
    #[serde(default = "default_n_base")]
    pub n_base: usize,
    /// Identical contaminating rows added at each grid point.
    #[serde(default = "default_n_contam")]
    pub n_contam: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub seed: u64,
    #[serde(default)]
    pub estimators: EstimatorSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl PointGridConfig {
    pub fn validate(&self) -> Result<()> {
        validate_common(&self.methods, self.replicates, self.alpha)?;
        for (name, g) in [("x0_grid", &self.x0_grid), ("y0_grid", &self.y0_grid)] {
            if g.is_empty() {
                return Err(Error::InvalidInput(format!("{name} is empty")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} has non-finite values")));
            }
        }
        if self.n_base < 4 || self.n_contam == 0 {
            return Err(Error::InvalidInput("need n_base >= 4 and n_contam >= 1".into()));
        }
        self.estimators.validate()
    }
}

/// Summary at one contamination point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCell {
    pub x0: f64,
    pub y0: f64,
    /// `lambda` holds `x0`.
    pub cell: LambdaCell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointGridResult {
    pub cells: Vec<PointCell>,
    /// `(x0, y0, empirical, theoretical)` overlap at each point.
    pub overlap: Vec<(f64, f64, f64, f64)>,
    pub failures: Vec<Failure>,
    pub attempted: usize,
}

impl PointGridResult {
    fn find(&self, x0: f64, y0: f64, method: Method) -> Option<&LambdaCell> {
        self.cells
            .iter()
            .find(|c| c.x0 == x0 && c.y0 == y0 && c.cell.method == method)
            .map(|c| &c.cell)
    }

    /// Running sums of `quantity` for one coefficient along `x0` at fixed
    /// `y0` (or along `y0` at fixed `x0` when `along_x` is false).
    pub fn partial_sums(&self, fixed: f64, along_x: bool, method: Method, quantity: Quantity, coef: usize) -> Result<Vec<(f64, f64)>> {
        let mut axis: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| if along_x { c.y0 == fixed } else { c.x0 == fixed })
            .map(|c| if along_x { c.x0 } else { c.y0 })
            .collect();
        axis.sort_by(f64::total_cmp);
        axis.dedup();
        let mut acc = 0.0;
        axis.into_iter()
            .map(|v| {
                let (x0, y0) = if along_x { (v, fixed) } else { (fixed, v) };
                let c = self.find(x0, y0, method).ok_or(Error::IncompleteTable { lambda: v, method })?;
                let s = &c.stats;
                acc += match quantity {
                    Quantity::SqBias => s.sq_bias[coef],
                    Quantity::Variance => s.variance[coef],
                    Quantity::Mad => s.mad[coef],
                    Quantity::Mse => s.sq_bias[coef] + s.variance[coef],
                };
                Ok((v, acc))
            })
            .collect()
    }
}

/// Point contamination: each replicate draws one base sample on `[0, 1]`
/// and adds `n_contam` identical rows at every grid point in turn.
pub fn run_point_grid(cfg: &PointGridConfig) -> Result<PointGridResult> {
    cfg.validate()?;
    let model = point_base_model();
    let root = RngStream::new(cfg.seed, 1);
    let points: Vec<(f64, f64)> = cfg
        .y0_grid
        .iter()
        .flat_map(|&y0| cfg.x0_grid.iter().map(move |&x0| (x0, y0)))
        .collect();
    prewarm_envelopes(&cfg.methods, &[cfg.n_base + cfg.n_contam], 2, cfg.alpha, &cfg.estimators)?;
    let bases: Vec<Result<Dataset>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let m2 = M2Spec::point(0.0, &[0.5]);
            sample_mixture(&model, &m2, cfg.n_base, 0, &root.child(&[r as u64, SAMPLE]), None)
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|g| (0..cfg.replicates).map(move |r| (g, r))).collect();
    let runs: Vec<Result<Vec<MethodOutcome>>> = jobs
        .par_iter()
        .map(|&(g, r)| {
            let base = bases[r].as_ref().map_err(|e| Error::InvalidInput(e.to_string()))?;
            let (x0, y0) = points[g];
            let data = point_contaminate(base, &[x0], y0, cfg.n_contam)?;
            fit_methods(&data, &cfg.methods, cfg.alpha, &cfg.estimators, root.child(&[r as u64, g as u64, FIT]))
        })
        .collect();
    let truth = [0.0, 0.0];
    let overlap_cfg = OverlapConfig::default();
    let mut cells = Vec::new();
    let mut overlap = Vec::new();
    let mut failures = Vec::new();
    for (g, &(x0, y0)) in points.iter().enumerate() {
        let slice = &runs[g * cfg.replicates..(g + 1) * cfg.replicates];
        let mut ok = Vec::new();
        for (r, run) in slice.iter().enumerate() {
            match run {
                Ok(o) => ok.push((r, o)),
                Err(e) => failures.push(Failure {
                    cell: format!("{},{}", fmt(x0), fmt(y0)),
                    replicate: r,
                    message: e.to_string(),
                }),
            }
        }
        if ok.len() >= 2 {
            let n_fail = cfg.replicates - ok.len();
            for c in summarise_cell(x0, &cfg.methods, &truth, &ok, cfg.n_contam, n_fail)? {
                cells.push(PointCell { x0, y0, cell: c });
            }
        }
        let m2 = M2Spec::point(y0, &[x0]);
        let emp = match &bases[0] {
            Ok(b) => point_contaminate(b, &[x0], y0, cfg.n_contam)
                .and_then(|d| empirical_overlap(&d, &model, &m2, &overlap_cfg))
                .unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        };
        overlap.push((x0, y0, emp, theoretical_overlap(&model, &m2, &overlap_cfg)));
    }
    Ok(PointGridResult {
        cells,
        overlap,
        failures,
        attempted: jobs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeConfig {
    /// Number of coefficients, intercept included.
    pub p: usize,
    /// Ascending sample sizes; each analyses the first `n` rows of one
    /// sample of the largest size.
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub seed: u64,
    #[serde(default)]
    pub estimators: EstimatorSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl SizeConfig {
    pub fn validate(&self) -> Result<()> {
        validate_common(&self.methods, self.replicates, self.alpha)?;
        if self.p == 0 {
            return Err(Error::InvalidInput("p must be at least 1".into()));
        }
        if self.n_grid.is_empty() {
            return Err(Error::InvalidInput("n_grid is empty".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("n_grid must be strictly ascending".into()));
        }
        if self.n_grid[0] < 2 * self.p + 2 {
            return Err(Error::InvalidInput(format!("n = {} is too small for p = {}", self.n_grid[0], self.p)));
        }
        self.estimators.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeResult {
    pub table: MetricsTable,
    pub failures: Vec<Failure>,
    pub attempted: usize,
}

/// Null data for the size study: standard normal carriers and errors, all
/// coefficients one.
pub fn size_sample(n: usize, p: usize, rng: &RngStream) -> Result<Dataset> {
    let mut g = rng.rng();
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { g.sample(StandardNormal) });
    let e = DVector::from_fn(n, |_, _| g.sample::<f64, _>(StandardNormal));
    let y = &x * DVector::from_element(p, 1.0) + e;
    Dataset::new(y, x, None)
}

/// Empirical size of every method's outlier test on clean data.
pub fn run_size_experiment(cfg: &SizeConfig) -> Result<SizeResult> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed, 2);
    let n_max = *cfg.n_grid.last().expect("validated");
    prewarm_envelopes(&cfg.methods, &cfg.n_grid, cfg.p, cfg.alpha, &cfg.estimators)?;
    let runs: Vec<Vec<Result<Vec<bool>>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let full = match size_sample(n_max, cfg.p, &root.child(&[r as u64, SAMPLE])) {
                Ok(d) => d,
                Err(e) => return cfg.n_grid.iter().map(|_| Err(Error::InvalidInput(e.to_string()))).collect(),
            };
            cfg.n_grid
                .iter()
                .enumerate()
                .map(|(k, &n)| {
                    let data = full.prefix(n)?;
                    let out = fit_methods(&data, &cfg.methods, cfg.alpha, &cfg.estimators, root.child(&[r as u64, k as u64, FIT]))?;
                    Ok(out.iter().map(|o| o.flags.iter().any(|&f| f)).collect())
                })
                .collect()
        })
        .collect();
    let mut table = MetricsTable::default();
    let mut failures = Vec::new();
    for (k, &n) in cfg.n_grid.iter().enumerate() {
        let mut ok: Vec<&Vec<bool>> = Vec::new();
        for (r, run) in runs.iter().enumerate() {
            match &run[k] {
                Ok(v) => ok.push(v),
                Err(e) => failures.push(Failure {
                    cell: n.to_string(),
                    replicate: r,
                    message: e.to_string(),
                }),
            }
        }
        if ok.is_empty() {
            continue;
        }
        for (j, &m) in cfg.methods.iter().enumerate() {
            let any: Vec<bool> = ok.iter().map(|v| v[j]).collect();
            table.sizes.push(SizeCell {
                n,
                p: cfg.p,
                method: m,
                estimate: size_estimate(&any)?,
            });
        }
    }
    Ok(SizeResult {
        table,
        failures,
        attempted: cfg.replicates * cfg.n_grid.len(),
    })
}

/// Overlap and distance along a scenario's lambda grid, with the empirical
/// index averaged over `replicates` samples.
pub fn overlap_curve(scenario: &Scenario, replicates: usize, strip_multiplier: f64, seed: u64) -> Result<Vec<OverlapReport>> {
    scenario.validate()?;
    if replicates == 0 {
        return Err(Error::InvalidInput("replicates must be at least 1".into()));
    }
    if scenario.contamination.n2 == 0 {
        return Err(Error::UndefinedIndex);
    }
    let cfg = OverlapConfig::new(strip_multiplier)?;
    let model = &scenario.model;
    let contam = &scenario.contamination;
    let root = RngStream::new(seed, 3);
    let m1 = m1_center(model);
    contam.lambda_grid
        .iter()
        .enumerate()
        .map(|(k, &lambda)| {
            let m2 = contam.m2_at(model, lambda)?;
            let emp: Vec<f64> = (0..replicates)
                .into_par_iter()
                .map(|r| {
                    let x = uniform_carriers(model, scenario.n1, &root.child(&[r as u64, CARRIERS]));
                    let d = sample_mixture(model, &m2, scenario.n1, contam.n2, &root.child(&[r as u64, k as u64, SAMPLE]), Some(&x))?;
                    empirical_overlap(&d, model, &m2, &cfg)
                })
                .collect::<Result<_>>()?;
            Ok(OverlapReport {
                lambda,
                empirical: emp.iter().sum::<f64>() / replicates as f64,
                theoretical: theoretical_overlap(model, &m2, &cfg),
                mahalanobis_sq: mahalanobis_sq(&m1, m2.mu.as_slice(), &m2.sigma)?,
            })
        })
        .collect()
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub attempted: usize,
    pub failures: usize,
    pub failure_rate: f64,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C, attempted: usize, failures: usize) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: serde_json::to_value(config)?,
            attempted,
            failures,
            failure_rate: if attempted > 0 { failures as f64 / attempted as f64 } else { 0.0 },
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `lambda,empirical,theoretical,mahal_sq`.
pub fn write_overlap_csv(reports: &[OverlapReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lambda", "empirical", "theoretical", "mahal_sq"])?;
    for r in reports {
        w.write_record([fmt(r.lambda), fmt(r.empirical), fmt(r.theoretical), fmt(r.mahalanobis_sq)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_failures(failures: &[Failure], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell", "replicate", "message"])?;
    for f in failures {
        w.write_record([f.cell.clone(), f.replicate.to_string(), f.message.clone()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write `metrics.csv`, `overlap.csv`, `estimates.csv`, `failures.csv` and
/// `manifest.json` into `dir`.
pub fn write_lambda_outputs(cfg: &ExperimentConfig, res: &LambdaResult, dir: &Path) -> Result<Manifest> {
    create_dir(dir)?;
    res.table.write_lambda_csv(&dir.join("metrics.csv"))?;
    write_overlap_csv(&res.overlap, &dir.join("overlap.csv"))?;
    let path = dir.join("estimates.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["lambda", "method", "replicate", "coef", "estimate"])?;
    for e in &res.estimates {
        for (j, b) in e.beta.iter().enumerate() {
            w.write_record([fmt(e.lambda), e.method.to_string(), e.replicate.to_string(), j.to_string(), fmt(*b)])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_failures(&res.failures, &dir.join("failures.csv"))?;
    let m = Manifest::new("simulate", cfg.seed, cfg, res.attempted, res.failures.len())?;
    m.write(&dir.join("manifest.json"))?;
    Ok(m)
}

/// Write `point_grid.csv`
/// (`x0,y0,method,coef,sq_bias,variance,mad,power,replicates`),
/// `point_overlap.csv`, `failures.csv` and `manifest.json`.
pub fn write_point_outputs(cfg: &PointGridConfig, res: &PointGridResult, dir: &Path) -> Result<Manifest> {
    create_dir(dir)?;
    let path = dir.join("point_grid.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["x0", "y0", "method", "coef", "sq_bias", "variance", "mad", "power", "replicates"])?;
    for c in &res.cells {
        let s = &c.cell.stats;
        for j in 0..s.sq_bias.len() {
            w.write_record([
                fmt(c.x0),
                fmt(c.y0),
                c.cell.method.to_string(),
                j.to_string(),
                fmt(s.sq_bias[j]),
                fmt(s.variance[j]),
                fmt(s.mad[j]),
                fmt(c.cell.power),
                s.replicates.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let path = dir.join("point_overlap.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["x0", "y0", "empirical", "theoretical"])?;
    for &(x0, y0, e, t) in &res.overlap {
        w.write_record([fmt(x0), fmt(y0), fmt(e), fmt(t)])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_failures(&res.failures, &dir.join("failures.csv"))?;
    let m = Manifest::new("point-grid", cfg.seed, cfg, res.attempted, res.failures.len())?;
    m.write(&dir.join("manifest.json"))?;
    Ok(m)
}

/// Write `size.csv`, `failures.csv` and `manifest.json`.
pub fn write_size_outputs(cfg: &SizeConfig, res: &SizeResult, dir: &Path) -> Result<Manifest> {
    create_dir(dir)?;
    res.table.write_size_csv(&dir.join("size.csv"))?;
    write_failures(&res.failures, &dir.join("failures.csv"))?;
    let m = Manifest::new("size", cfg.seed, cfg, res.attempted, res.failures.len())?;
    m.write(&dir.join("manifest.json"))?;
    Ok(m)
}
