use nalgebra::DVector;
use rayon::prelude::*;

use super::subsets::{clean_residuals, elemental_fit, elemental_subsets};
use super::SubsetConfig;
use crate::biweight::{mscale, mscale_start, rho, tuning_from_efficiency, weight, BiweightTuning};
use crate::data::{Dataset, Diagnostics, FitResult, Method};
use crate::error::{Error, Result};
use crate::linalg::{lstsq_rows, wlstsq};

const MAX_IRWLS: usize = 1000;

fn mean_rho(r: &[f64], s: f64, c: f64) -> f64 {
    r.iter().map(|&v| rho(v / s, c)).sum::<f64>() / r.len() as f64
}

fn biweights(r: &[f64], s: f64, c: f64) -> Vec<f64> {
    r.iter().map(|&v| weight(v / s, c)).collect()
}

#[derive(Debug, Clone)]
struct SCandidate {
    beta: DVector<f64>,
    scale: f64,
}

/// A few IRWLS steps with one-step scale updates from an elemental start.
fn refine_start(data: &Dataset, beta: DVector<f64>, tuning: &BiweightTuning, steps: usize) -> Option<SCandidate> {
    let mut r = clean_residuals(data, &beta);
    let mut s = mscale_start(&r);
    if s == 0.0 {
        s = mscale(&r, tuning, 0.0).ok()?;
    }
    let mut beta = beta;
    for _ in 0..steps {
        if s == 0.0 {
            break;
        }
        beta = wlstsq(data, &biweights(&r, s, tuning.c)).ok()?;
        r = clean_residuals(data, &beta);
        s *= (mean_rho(&r, s, tuning.c) / tuning.k).sqrt();
    }
    Some(SCandidate { beta, scale: s })
}

/// IRWLS with the full M-scale recomputed each step, to convergence.
fn converge(data: &Dataset, start: SCandidate, tuning: &BiweightTuning) -> Option<SCandidate> {
    let mut beta = start.beta;
    let mut r = clean_residuals(data, &beta);
    let mut s = mscale(&r, tuning, start.scale).ok()?;
    for _ in 0..MAX_IRWLS {
        if s == 0.0 {
            break;
        }
        let next = wlstsq(data, &biweights(&r, s, tuning.c)).ok()?;
        let r_next = clean_residuals(data, &next);
        let s_next = mscale(&r_next, tuning, s).ok()?;
        if s_next > s * (1.0 + 1e-10) {
            // the step did not reduce the scale; keep the current point
            break;
        }
        let change = (&next - &beta).norm() / next.norm().max(f64::MIN_POSITIVE);
        let done = change < 1e-13;
        beta = next;
        r = r_next;
        s = s_next;
        if done {
            break;
        }
    }
    Some(SCandidate { beta, scale: s })
}

/// S-estimate: the coefficients minimising the biweight M-scale of the
/// residuals, by elemental starts refined with IRWLS.
pub fn s_estimate(data: &Dataset, tuning: &BiweightTuning, cfg: &SubsetConfig) -> Result<FitResult> {
    cfg.validate()?;
    let (n, p) = (data.n(), data.p());
    let starts = elemental_subsets(n, p, cfg);
    let cands: Vec<Option<SCandidate>> = (0..starts.len())
        .into_par_iter()
        .with_min_len(32)
        .map(|i| refine_start(data, elemental_fit(data, starts.get(i))?, tuning, cfg.n_refine))
        .collect();
    let n_singular = cands.iter().filter(|c| c.is_none()).count();

    // Keep the n_best smallest scales. A candidate whose residuals give
    // mean rho >= K at the current worst kept scale cannot beat it, which
    // spares the full M-scale solve.
    let mut best: Vec<(f64, usize, DVector<f64>)> = Vec::with_capacity(cfg.n_best + 1);
    for (i, c) in cands.into_iter().enumerate() {
        let Some(c) = c else { continue };
        let r = clean_residuals(data, &c.beta);
        if best.len() == cfg.n_best {
            let worst = best[best.len() - 1].0;
            if worst == 0.0 || (worst > 0.0 && mean_rho(&r, worst, tuning.c) >= tuning.k) {
                continue;
            }
        }
        let Ok(s) = mscale(&r, tuning, c.scale) else { continue };
        let pos = best.partition_point(|b| b.0 <= s);
        best.insert(pos, (s, i, c.beta));
        best.truncate(cfg.n_best);
    }
    if best.is_empty() {
        return Err(Error::failure(
            Method::S,
            format!("all {} elemental subsets gave singular fits", starts.len()),
        ));
    }

    let mut winner: Option<SCandidate> = None;
    for (s, _, beta) in best {
        let Some(c) = converge(data, SCandidate { beta, scale: s }, tuning) else { continue };
        if winner.as_ref().is_none_or(|w| c.scale < w.scale) {
            winner = Some(c);
        }
    }
    let mut w = winner.ok_or_else(|| Error::failure(Method::S, "no candidate survived refinement"))?;

    let r = clean_residuals(data, &w.beta);
    let weights = if w.scale == 0.0 {
        // exact fit: polish on the rows lying on the hyperplane
        let on: Vec<usize> = (0..n).filter(|&i| r[i] == 0.0).collect();
        if let Ok(f) = lstsq_rows(data, &on) {
            w.beta = f.beta;
        }
        r.iter().map(|&v| if v == 0.0 { 1.0 } else { 0.0 }).collect()
    } else {
        biweights(&r, w.scale, tuning.c)
    };
    let mut diagnostics = Diagnostics::new();
    diagnostics.insert("c".into(), tuning.c);
    diagnostics.insert("k".into(), tuning.k);
    diagnostics.insert("elemental_singular".into(), n_singular as f64);
    Ok(FitResult {
        method: Method::S,
        beta: w.beta.iter().copied().collect(),
        sigma: w.scale,
        outlier_flags: weights.iter().map(|&v: &f64| v == 0.0).collect(),
        weights,
        diagnostics,
    })
}

/// IRWLS for the biweight M-objective at fixed scale. Returns the final
/// coefficients and the objective before each step and after the last.
pub(crate) fn mm_irwls(data: &Dataset, beta0: DVector<f64>, sigma: f64, c: f64) -> Result<(DVector<f64>, Vec<f64>)> {
    let objective = |b: &DVector<f64>| data.residuals(b).iter().map(|&v| rho(v / sigma, c)).sum::<f64>();
    let mut beta = beta0;
    let mut objs = vec![objective(&beta)];
    for _ in 0..MAX_IRWLS {
        let r: Vec<f64> = data.residuals(&beta).iter().copied().collect();
        let next = wlstsq(data, &biweights(&r, sigma, c)).map_err(|e| Error::failure(Method::Mm, e.to_string()))?;
        let change = (&next - &beta).norm() / next.norm().max(f64::MIN_POSITIVE);
        beta = next;
        objs.push(objective(&beta));
        if change < 1e-12 {
            break;
        }
    }
    Ok((beta, objs))
}

/// MM-estimate: biweight M-regression at efficiency `eff`, with the scale
/// held at the S-estimate and iterations started from the S coefficients.
pub fn mm_estimate(data: &Dataset, s_fit: &FitResult, eff: f64) -> Result<FitResult> {
    if s_fit.sigma == 0.0 {
        let mut out = s_fit.clone();
        out.method = Method::Mm;
        out.diagnostics.insert("degenerate_scale".into(), 1.0);
        return Ok(out);
    }
    let tuning = tuning_from_efficiency(eff)?;
    let sigma = s_fit.sigma;
    let (beta, objs) = mm_irwls(data, s_fit.beta_vec(), sigma, tuning.c)?;
    let r: Vec<f64> = data.residuals(&beta).iter().copied().collect();
    let weights = biweights(&r, sigma, tuning.c);
    let mut diagnostics = Diagnostics::new();
    diagnostics.insert("c".into(), tuning.c);
    diagnostics.insert("iterations".into(), (objs.len() - 1) as f64);
    diagnostics.insert("objective_start".into(), objs[0]);
    diagnostics.insert("objective".into(), objs[objs.len() - 1]);
    Ok(FitResult {
        method: Method::Mm,
        beta: beta.iter().copied().collect(),
        sigma,
        outlier_flags: weights.iter().map(|&v| v == 0.0).collect(),
        weights,
        diagnostics,
    })
}
