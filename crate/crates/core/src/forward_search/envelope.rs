use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{first_monitored, fs_trajectory, monitoring_start, FsConfig};
use crate::data::Dataset;
use crate::dist::{beta_quantile, norm_pdf, norm_quantile, t_quantile};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeSource {
    /// Simulate on first use, then reuse from memory or the disk cache.
    Simulated,
    /// Only use an envelope already in the disk cache.
    Stored,
}

/// Null distribution of the minimum deletion residual for one `(n, p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub n: usize,
    pub p: usize,
    pub sims: usize,
    pub init_subsets: usize,
    pub seed: u64,
    /// Subset size of the first entry of each per-step vector.
    pub m_first: usize,
    pub m_mon: usize,
    pub log_mean: Vec<f64>,
    pub log_sd: Vec<f64>,
    /// Pointwise 1%, 50% and 99% quantiles of the statistic.
    pub lo: Vec<f64>,
    pub median: Vec<f64>,
    pub hi: Vec<f64>,
    /// Per simulation, the largest standardised log statistic over the
    /// monitored steps; sorted.
    pub max_z: Vec<f64>,
    pub failures: usize,
}

impl Envelope {
    fn k(&self, m: usize) -> Option<usize> {
        m.checked_sub(self.m_first).filter(|&k| k < self.log_mean.len())
    }

    /// Standardised log statistic at step `m`.
    pub fn z(&self, m: usize, r: f64) -> f64 {
        match self.k(m) {
            Some(k) => (r.ln() - self.log_mean[k]) / self.log_sd[k],
            None => f64::NAN,
        }
    }

    /// Samplewise threshold on the standardised statistic for size `alpha`.
    pub fn threshold(&self, alpha: f64) -> f64 {
        quantile(&self.max_z, 1.0 - alpha)
    }

    /// Pointwise `(1%, 99%)` band at step `m`.
    pub fn band(&self, m: usize) -> (f64, f64) {
        match self.k(m) {
            Some(k) => (self.lo[k], self.hi[k]),
            None => (f64::NAN, f64::NAN),
        }
    }
}

/// Type-7 quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Key {
    n: usize,
    p: usize,
    sims: usize,
    init_subsets: usize,
    seed: u64,
}

impl Key {
    fn file_name(&self) -> String {
        format!(
            "fs-envelope-n{}-p{}-R{}-i{}-s{}.json",
            self.n, self.p, self.sims, self.init_subsets, self.seed
        )
    }
}

fn memory() -> &'static RwLock<HashMap<Key, Arc<Envelope>>> {
    static CACHE: OnceLock<RwLock<HashMap<Key, Arc<Envelope>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Drop every envelope held in memory.
pub fn clear_envelope_cache() {
    memory().write().unwrap().clear();
}

/// Disk cache directory, from `ROBUSTBENCH_CACHE` when set.
pub fn cache_dir() -> Option<PathBuf> {
    std::env::var_os("ROBUSTBENCH_CACHE")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

fn load(key: &Key) -> Option<Envelope> {
    let path = cache_dir()?.join(key.file_name());
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn store(key: &Key, env: &Envelope) -> Result<()> {
    let Some(dir) = cache_dir() else { return Ok(()) };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(key.file_name());
    let tmp = dir.join(format!("{}.{}.tmp", key.file_name(), std::process::id()));
    std::fs::write(&tmp, serde_json::to_string(env)?).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

/// Null envelopes for samples of `n` rows and `p` coefficients, simulated
/// from `cfg.envelope_sims` clean searches and cached by `(n, p)` and the
/// simulation settings. `alpha` only selects the threshold later, so one
/// envelope serves every test size.
pub fn fs_envelopes(n: usize, p: usize, alpha: f64, cfg: &FsConfig) -> Result<Arc<Envelope>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("test size {alpha} outside (0, 1)")));
    }
    if cfg.envelope_sims < 200 {
        return Err(Error::InvalidInput(format!(
            "{} envelope simulations is too few; at least 200 are needed",
            cfg.envelope_sims
        )));
    }
    if n < p + 3 {
        return Err(Error::InvalidInput(format!("no envelope for n = {n}, p = {p}")));
    }
    let key = Key {
        n,
        p,
        sims: cfg.envelope_sims,
        init_subsets: cfg.init_subsets,
        seed: cfg.envelope_seed,
    };
    if let Some(env) = memory().read().unwrap().get(&key) {
        return Ok(env.clone());
    }
    let env = match load(&key) {
        Some(env) => env,
        None if cfg.envelope_source == EnvelopeSource::Stored => {
            return Err(Error::InvalidInput(format!(
                "no stored envelope {} in the cache directory",
                key.file_name()
            )))
        }
        None => {
            let env = simulate(&key)?;
            store(&key, &env)?;
            env
        }
    };
    let env = Arc::new(env);
    memory().write().unwrap().entry(key).or_insert_with(|| env.clone());
    Ok(env)
}

fn null_statistics(key: &Key, sim: usize) -> Option<Vec<f64>> {
    let (n, p) = (key.n, key.p);
    let stream = RngStream::new(key.seed, (n as u64) << 32 | p as u64).child(&[sim as u64]);
    let mut rng = stream.rng();
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
    let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let data = Dataset::new(y, x, None).ok()?;
    let mut cfg = FsConfig::new(stream.child(&[1]));
    cfg.init_subsets = key.init_subsets;
    let traj = fs_trajectory(&data, &cfg).ok()?;
    let first = first_monitored(p);
    Some((first..n).map(|m| traj.statistic(m).unwrap_or(f64::NAN)).collect())
}

fn simulate(key: &Key) -> Result<Envelope> {
    let (n, p) = (key.n, key.p);
    let runs: Vec<Option<Vec<f64>>> = (0..key.sims)
        .into_par_iter()
        .map(|sim| null_statistics(key, sim))
        .collect();
    let failures = runs.iter().filter(|r| r.is_none()).count();
    let runs: Vec<Vec<f64>> = runs
        .into_iter()
        .flatten()
        .filter(|r| r.iter().all(|v| v.is_finite() && *v > 0.0))
        .collect();
    if runs.len() < 200 {
        return Err(Error::NumericSolver(format!(
            "only {} usable null searches for n = {n}, p = {p}",
            runs.len()
        )));
    }
    let m_first = first_monitored(p);
    let steps = n - m_first;
    let r = runs.len() as f64;
    let mut log_mean = vec![0.0; steps];
    let mut log_sd = vec![0.0; steps];
    let (mut lo, mut median, mut hi) = (vec![0.0; steps], vec![0.0; steps], vec![0.0; steps]);
    let mut col = vec![0.0; runs.len()];
    for k in 0..steps {
        for (c, run) in col.iter_mut().zip(&runs) {
            *c = run[k];
        }
        let mean = col.iter().map(|v| v.ln()).sum::<f64>() / r;
        let var = col.iter().map(|v| (v.ln() - mean).powi(2)).sum::<f64>() / (r - 1.0);
        log_mean[k] = mean;
        log_sd[k] = var.sqrt();
        col.sort_by(f64::total_cmp);
        lo[k] = quantile(&col, 0.01);
        median[k] = quantile(&col, 0.5);
        hi[k] = quantile(&col, 0.99);
    }
    let m_mon = monitoring_start(n, p);
    let mut max_z: Vec<f64> = runs
        .iter()
        .map(|run| {
            (m_mon..n)
                .map(|m| (run[m - m_first].ln() - log_mean[m - m_first]) / log_sd[m - m_first])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    max_z.sort_by(f64::total_cmp);
    Ok(Envelope {
        n,
        p,
        sims: key.sims,
        init_subsets: key.init_subsets,
        seed: key.seed,
        m_first,
        m_mon,
        log_mean,
        log_sd,
        lo,
        median,
        hi,
        max_z,
        failures,
    })
}

/// Order-statistic approximation to the `gamma` quantile of the minimum
/// deletion residual at steps `p + 1 .. n`: the `(m+1)`th order statistic of
/// `n` folded t variables on `m - p` degrees of freedom, inflated for the
/// scale being estimated from the `m` central rows.
pub fn analytic_envelope(n: usize, p: usize, gamma: f64) -> Vec<(usize, f64)> {
    (first_monitored(p)..n)
        .map(|m| {
            let k = (m + 1) as f64;
            let u = beta_quantile(gamma, k, n as f64 - k + 1.0);
            let t = t_quantile(0.5 * (1.0 + u), (m - p) as f64);
            let q = norm_quantile((n + m) as f64 / (2 * n) as f64);
            let shrink = 1.0 - 2.0 * n as f64 / m as f64 * q * norm_pdf(q);
            (m, t / shrink.sqrt())
        })
        .collect()
}
