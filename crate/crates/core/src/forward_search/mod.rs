//! The forward search: least squares on subsets grown one row at a time,
//! monitored by the minimum deletion residual of the rows outside.

mod duplicates;
mod envelope;

pub use duplicates::{duplicate_groups, handle_duplicate_collapse, Collapse};
pub use envelope::{analytic_envelope, cache_dir, clear_envelope_cache, fs_envelopes, Envelope, EnvelopeSource};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Diagnostics, FitResult, Method};
use crate::dist::t_quantile;
use crate::error::{Error, Result};
use crate::estimators::{consistency_factor, elemental_subsets, SubsetConfig};
use crate::linalg::{lstsq_rows, LsFit};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsConfig {
    /// Samplewise size of the outlier test.
    pub alpha: f64,
    /// Initial subset size; `None` starts from `p` rows.
    pub m0: Option<usize>,
    /// Elemental subsets tried when choosing the starting subset.
    pub init_subsets: usize,
    pub envelope_source: EnvelopeSource,
    /// Null trajectories simulated per envelope.
    pub envelope_sims: usize,
    /// Root seed of the envelope simulations, so every fit of the same
    /// `(n, p)` shares one envelope.
    pub envelope_seed: u64,
    pub rng: RngStream,
}

pub const DEFAULT_ENVELOPE_SEED: u64 = 0x00f5_e1e9_0a5e;

impl FsConfig {
    pub fn new(rng: RngStream) -> Self {
        Self {
            alpha: 0.01,
            m0: None,
            init_subsets: 500,
            envelope_source: EnvelopeSource::Simulated,
            envelope_sims: 2000,
            envelope_seed: DEFAULT_ENVELOPE_SEED,
            rng,
        }
    }

    fn validate(&self, n: usize, p: usize) -> Result<usize> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain(format!("test size {} outside (0, 1)", self.alpha)));
        }
        if self.init_subsets == 0 {
            return Err(Error::InvalidInput("init_subsets must be at least 1".into()));
        }
        let m0 = self.m0.unwrap_or(p);
        if m0 < p || m0 >= n {
            return Err(Error::InvalidInput(format!("m0 = {m0} outside [{p}, {n})")));
        }
        Ok(m0)
    }
}

/// First subset size at which the monitoring statistic is defined.
pub fn first_monitored(p: usize) -> usize {
    p + 1
}

/// Start of the part of the search where signals are sought: about half the
/// data, the largest clean fraction a 50% breakdown procedure must handle.
pub fn monitoring_start(n: usize, p: usize) -> usize {
    ((n + p + 1) / 2).max(p + 2).min(n - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsTrajectory {
    pub n: usize,
    pub p: usize,
    /// Subset sizes `m0..n`; the statistic exists from `p + 1` on.
    pub m_grid: Vec<usize>,
    /// Minimum absolute deletion residual among rows outside the subset of
    /// size `m`, NaN where undefined.
    pub min_del_res: Vec<f64>,
    /// Sorted subset of size `m` for every `m` in `m_grid`.
    pub subsets: Vec<Vec<usize>>,
    /// Pointwise 1% and 99% null envelopes, when computed.
    pub envelopes: Option<Vec<(f64, f64)>>,
    /// Rows held back by duplicate handling.
    pub deferred: Vec<usize>,
}

impl FsTrajectory {
    fn index(&self, m: usize) -> Option<usize> {
        m.checked_sub(self.m_grid[0]).filter(|&k| k < self.m_grid.len())
    }

    pub fn subset(&self, m: usize) -> Option<&[usize]> {
        if m == self.n {
            return None;
        }
        self.index(m).map(|k| self.subsets[k].as_slice())
    }

    pub fn statistic(&self, m: usize) -> Option<f64> {
        self.index(m).map(|k| self.min_del_res[k]).filter(|v| v.is_finite())
    }

    /// Rows entering and leaving between the subsets of size `m` and `m+1`.
    pub fn transition(&self, m: usize) -> (Vec<usize>, Vec<usize>) {
        let Some(k) = self.index(m) else { return (vec![], vec![]) };
        let cur = &self.subsets[k];
        let all: Vec<usize>;
        let next: &Vec<usize> = if k + 1 < self.subsets.len() {
            &self.subsets[k + 1]
        } else {
            all = (0..self.n).collect();
            &all
        };
        let entered = next.iter().copied().filter(|i| cur.binary_search(i).is_err()).collect();
        let left = cur.iter().copied().filter(|i| next.binary_search(i).is_err()).collect();
        (entered, left)
    }

    /// `m,min_del_res,env_lo,env_hi,entered,left`; row lists are
    /// space-separated zero-based indices.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let join = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
        let fmt = |v: f64| if v.is_finite() { v.to_string() } else { String::new() };
        let io = |e| Error::io(path, e);
        writeln!(w, "m,min_del_res,env_lo,env_hi,entered,left").map_err(io)?;
        for (k, &m) in self.m_grid.iter().enumerate() {
            let (lo, hi) = self
                .envelopes
                .as_ref()
                .map_or((f64::NAN, f64::NAN), |e| e[k]);
            let (entered, left) = self.transition(m);
            writeln!(
                w,
                "{m},{},{},{},{},{}",
                fmt(self.min_del_res[k]),
                fmt(lo),
                fmt(hi),
                join(&entered),
                join(&left)
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Absolute deletion residual `|e_i| / (s sqrt(1 + h_i))` of row `i`
/// against a least squares fit on `subset`.
pub fn deletion_residual(data: &Dataset, subset: &[usize], row: usize) -> Result<f64> {
    let p = data.p();
    if subset.contains(&row) {
        return Err(Error::InvalidInput(format!("row {row} is inside the subset")));
    }
    if subset.len() <= p {
        return Err(Error::InvalidInput("subset too small to estimate the scale".into()));
    }
    let fit = lstsq_rows(data, subset)?;
    let s = (fit.rss / (subset.len() - p) as f64).sqrt();
    Ok(studentised(data, &fit, s, row))
}

fn studentised(data: &Dataset, fit: &LsFit, s: f64, row: usize) -> f64 {
    let x_row: Vec<f64> = data.x().row(row).iter().copied().collect();
    let e = data.y()[row] - x_row.iter().zip(fit.beta.iter()).map(|(a, b)| a * b).sum::<f64>();
    let h = fit.leverage(&x_row);
    e.abs() / (s * (1.0 + h).sqrt())
}

/// One step of the search: fit on `subset` (size `m`) and return the `m + 1`
/// rows with the smallest squared residuals, sorted.
pub fn fs_step(data: &Dataset, subset: &[usize]) -> Result<Vec<usize>> {
    let fit = lstsq_rows(data, subset)?;
    let r = data.residual_vec(fit.beta.as_slice());
    let r2: Vec<f64> = r.iter().map(|v| v * v).collect();
    Ok(next_subset(&r2, subset.len() + 1, &[]))
}

/// Rows with the `k` smallest squared residuals, drawing on deferred rows
/// only once every other row is in.
fn next_subset(r2: &[f64], k: usize, deferred: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..r2.len()).collect();
    let held = |i: &usize| deferred.binary_search(i).is_ok();
    order.sort_by(|&a, &b| {
        held(&a)
            .cmp(&held(&b))
            .then(r2[a].total_cmp(&r2[b]))
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Least median of squares start: the elemental fit with the smallest
/// median squared residual. Returns its residuals.
fn lms_start(data: &Dataset, init_subsets: usize, rng: RngStream) -> Result<Vec<f64>> {
    let (n, p) = (data.n(), data.p());
    let cfg = SubsetConfig {
        n_elemental: init_subsets,
        n_refine: 1,
        n_best: 1,
        rng,
    };
    let starts = elemental_subsets(n, p, &cfg);
    let half = n / 2;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut r2 = vec![0.0; n];
    for rows in starts.iter() {
        let Ok(fit) = lstsq_rows(data, rows) else { continue };
        let r = data.residual_vec(fit.beta.as_slice());
        for (a, b) in r2.iter_mut().zip(&r) {
            *a = b * b;
        }
        let (_, med, _) = r2.select_nth_unstable_by(half, f64::total_cmp);
        let med = *med;
        if best.as_ref().is_none_or(|b| med < b.0) {
            best = Some((med, r.iter().map(|v| v * v).collect()));
        }
    }
    best.map(|b| b.1)
        .ok_or_else(|| Error::failure(Method::Fs, format!("all {} starting subsets singular", starts.len())))
}

fn degenerate(fit: &std::result::Result<LsFit, Error>, m: usize, p: usize, tol: f64) -> bool {
    match fit {
        Err(_) => true,
        Ok(f) => m > p && (f.rss / (m - p) as f64).sqrt() <= tol,
    }
}

/// Run the search from the configured start to the full sample.
pub fn fs_trajectory(data: &Dataset, cfg: &FsConfig) -> Result<FsTrajectory> {
    let (n, p) = (data.n(), data.p());
    let m0 = cfg.validate(n, p)?;
    let mut order_r2 = lms_start(data, cfg.init_subsets, cfg.rng)?;
    let tol = 1e-9 * data.y_scale();
    let mut groups: Option<Vec<Vec<usize>>> = None;
    let mut deferred: Vec<usize> = Vec::new();
    let mut subset = next_subset(&order_r2, m0, &deferred);
    let mut m_grid = Vec::with_capacity(n - m0);
    let mut stats = Vec::with_capacity(n - m0);
    let mut subsets = Vec::with_capacity(n - m0);

    for m in m0..n {
        let mut fit = lstsq_rows(data, &subset);
        let mut attempts = 0;
        while degenerate(&fit, m, p, tol) {
            let g = groups.get_or_insert_with(|| duplicate_groups(data));
            let c = duplicates::collapse_with(g, &subset);
            attempts += 1;
            if c.deferred.is_empty() || attempts > g.len() + 1 {
                let why = match &fit {
                    Err(e) => e.to_string(),
                    Ok(_) => "zero residual variance".into(),
                };
                return Err(Error::failure(Method::Fs, format!("degenerate subset at m = {m}: {why}")));
            }
            deferred.extend(c.deferred);
            deferred.sort_unstable();
            deferred.dedup();
            subset = next_subset(&order_r2, m, &deferred);
            fit = lstsq_rows(data, &subset);
        }
        let fit = fit.expect("checked above");
        let r = data.residual_vec(fit.beta.as_slice());
        let stat = if m > p {
            let s = (fit.rss / (m - p) as f64).sqrt();
            let mut inside = vec![false; n];
            for &i in &subset {
                inside[i] = true;
            }
            let outside: Vec<usize> = (0..n).filter(|&i| !inside[i]).collect();
            let h = fit.leverages(data.x(), &outside);
            outside
                .iter()
                .zip(&h)
                .map(|(&i, &hi)| r[i].abs() / (s * (1.0 + hi).sqrt()))
                .fold(f64::INFINITY, f64::min)
        } else {
            f64::NAN
        };
        for (a, b) in order_r2.iter_mut().zip(&r) {
            *a = b * b;
        }
        let next = next_subset(&order_r2, m + 1, &deferred);
        m_grid.push(m);
        stats.push(stat);
        subsets.push(std::mem::replace(&mut subset, next));
    }
    Ok(FsTrajectory {
        n,
        p,
        m_grid,
        min_del_res: stats,
        subsets,
        envelopes: None,
        deferred,
    })
}

/// Bound for the minimum deletion residual at the last step of a search on
/// `m + 1` rows: a Bonferroni bound on the largest of `m + 1` t variables.
pub fn final_step_bound(m: usize, p: usize, alpha: f64) -> f64 {
    t_quantile(1.0 - alpha / (2.0 * (m + 1) as f64), (m - p) as f64)
}

/// Where the search signals and stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsDecision {
    pub signal: Option<usize>,
    /// Size of the final clean subset.
    pub m_star: usize,
}

/// Signal: the first monitored step whose standardised log statistic exceeds
/// the simulated samplewise threshold. Stop: from one step before the signal,
/// the first step whose statistic is extreme even for the final step of a
/// sample that size; failing that, the signal step itself.
pub fn decide(traj: &FsTrajectory, env: &Envelope, alpha: f64) -> FsDecision {
    let (n, p) = (traj.n, traj.p);
    let threshold = env.threshold(alpha);
    let start = env.m_mon;
    let signal = (start..n).find(|&m| match traj.statistic(m) {
        Some(r) => env.z(m, r) > threshold,
        None => false,
    });
    let Some(ms) = signal else {
        return FsDecision { signal: None, m_star: n };
    };
    let from = ms.saturating_sub(1).max(start);
    let m_star = (from..n)
        .find(|&m| traj.statistic(m).is_some_and(|r| r > final_step_bound(m, p, alpha)))
        .unwrap_or(ms);
    FsDecision {
        signal: Some(ms),
        m_star,
    }
}

/// Forward search estimate: OLS on the final clean subset, with the scale
/// corrected for the trimming, and the rows outside it flagged.
pub fn fs_fit(data: &Dataset, cfg: &FsConfig) -> Result<(FitResult, FsTrajectory)> {
    let (n, p) = (data.n(), data.p());
    if n < p + 3 {
        return Err(Error::InvalidInput(format!("forward search needs n >= p + 3, got n = {n}, p = {p}")));
    }
    let env = fs_envelopes(n, p, cfg.alpha, cfg)?;
    let mut traj = fs_trajectory(data, cfg)?;
    traj.envelopes = Some(traj.m_grid.iter().map(|&m| env.band(m)).collect());
    let decision = decide(&traj, &env, cfg.alpha);
    let m_star = decision.m_star;
    let rows: Vec<usize> = match traj.subset(m_star) {
        Some(s) => s.to_vec(),
        None => (0..n).collect(),
    };
    let fit = lstsq_rows(data, &rows).map_err(|e| Error::failure(Method::Fs, e.to_string()))?;
    let mut sigma = (fit.rss / (m_star - p) as f64).sqrt();
    if m_star < n {
        sigma *= consistency_factor(m_star as f64 / n as f64, 1)?;
    }
    let mut weights = vec![0.0; n];
    for &i in &rows {
        weights[i] = 1.0;
    }
    let mut diagnostics = Diagnostics::new();
    diagnostics.insert("m_star".into(), m_star as f64);
    diagnostics.insert("signal".into(), decision.signal.map_or(f64::NAN, |m| m as f64));
    diagnostics.insert("threshold".into(), env.threshold(cfg.alpha));
    diagnostics.insert("deferred".into(), traj.deferred.len() as f64);
    let result = FitResult {
        method: Method::Fs,
        beta: fit.beta.iter().copied().collect(),
        sigma,
        outlier_flags: weights.iter().map(|&w| w == 0.0).collect(),
        weights,
        diagnostics,
    };
    Ok((result, traj))
}
