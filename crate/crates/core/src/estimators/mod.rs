//! High-breakdown regression: LTS and its reweighted form, S and MM.

mod consistency;
mod lts;
mod s;
mod subsets;

pub use consistency::{consistency_factor, small_sample_correction, truncated_normal_factor};
pub use lts::{default_h, lts_fit, lts_objective, lts_reweight, ltsr_fit};
pub use s::{mm_estimate, s_estimate};
pub use subsets::{elemental_subsets, ElementalSet};
pub use test::{bonferroni_flags, outlier_test};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Random elemental-subset search settings shared by LTS, S and the forward
/// search initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetConfig {
    pub n_elemental: usize,
    /// Concentration (or IRWLS) steps applied to every candidate.
    pub n_refine: usize,
    /// Candidates carried forward and iterated to convergence.
    pub n_best: usize,
    pub rng: RngStream,
}

impl SubsetConfig {
    pub fn new(rng: RngStream) -> Self {
        Self {
            n_elemental: 1000,
            n_refine: 2,
            n_best: 10,
            rng,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_elemental == 0 || self.n_refine == 0 || self.n_best == 0 {
            return Err(Error::InvalidInput("subset counts must all be at least 1".into()));
        }
        if self.n_best > self.n_elemental {
            return Err(Error::InvalidInput(format!(
                "n_best = {} exceeds n_elemental = {}",
                self.n_best, self.n_elemental
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LtsConfig {
    /// Trim size; `None` uses `floor(n/2) + floor((p+1)/2)`.
    pub h: Option<usize>,
    pub subset: SubsetConfig,
    /// Samplewise size of the reweighting test, when reweighting is wanted.
    pub reweight_alpha: Option<f64>,
}

impl LtsConfig {
    pub fn new(rng: RngStream) -> Self {
        Self {
            h: None,
            subset: SubsetConfig::new(rng),
            reweight_alpha: None,
        }
    }
}

/// Bonferronised outlier test: each of `n` observations is tested at
/// `alpha / n`, for samplewise size about `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub alpha: f64,
}

impl TestConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("test size {alpha} outside (0, 1)")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha_star(&self, n: usize) -> f64 {
        self.alpha / n as f64
    }

    /// Two-sided standard normal cutoff at level `alpha / n`.
    pub fn cutoff(&self, n: usize) -> f64 {
        crate::dist::bonferroni_cutoff(self.alpha, n)
    }
}

impl Default for TestConfig {
    fn default() -> Self {
        Self { alpha: 0.01 }
    }
}
