use nalgebra::DVector;

use super::SubsetConfig;
use crate::data::Dataset;
use crate::linalg::lstsq_rows;
use crate::rng::{binomial, for_each_combination, SubsetSampler};

/// A batch of `k`-row subsets stored contiguously.
#[derive(Debug, Clone)]
pub struct ElementalSet {
    k: usize,
    rows: Vec<usize>,
    /// True when every `k`-subset was enumerated rather than sampled.
    pub exhaustive: bool,
}

impl ElementalSet {
    pub fn len(&self) -> usize {
        self.rows.len() / self.k.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.rows[i * self.k..(i + 1) * self.k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.rows.chunks_exact(self.k)
    }
}

/// All `p`-subsets when there are at most `n_elemental` of them, otherwise
/// `n_elemental` random ones drawn from the config stream.
pub fn elemental_subsets(n: usize, p: usize, cfg: &SubsetConfig) -> ElementalSet {
    let total = binomial(n, p);
    let mut rows = Vec::new();
    if total <= cfg.n_elemental as u64 {
        rows.reserve(total as usize * p);
        for_each_combination(n, p, |c| rows.extend_from_slice(c));
        return ElementalSet { k: p, rows, exhaustive: true };
    }
    rows.reserve(cfg.n_elemental * p);
    let mut rng = cfg.rng.rng();
    let mut sampler = SubsetSampler::new(n, p);
    for _ in 0..cfg.n_elemental {
        rows.extend_from_slice(sampler.draw(&mut rng));
    }
    ElementalSet { k: p, rows, exhaustive: false }
}

/// Exact fit through the rows of an elemental subset, `None` if singular.
pub(crate) fn elemental_fit(data: &Dataset, rows: &[usize]) -> Option<DVector<f64>> {
    lstsq_rows(data, rows).ok().map(|f| f.beta)
}

/// Indices of the `h` smallest values, in ascending index order.
pub(crate) fn smallest_h(values: &[f64], h: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if h < values.len() {
        // ties broken by index so the choice is deterministic
        idx.select_nth_unstable_by(h - 1, |&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        idx.truncate(h);
    }
    idx.sort_unstable();
    idx
}

/// Residuals `|y - X b|` zeroed below a relative tolerance, so that exact
/// fits register as exact.
pub(crate) fn clean_residuals(data: &Dataset, beta: &DVector<f64>) -> Vec<f64> {
    let tol = 1e-10 * data.y_scale();
    let mut r = data.residual_vec(beta.as_slice());
    for v in &mut r {
        if v.abs() <= tol {
            *v = 0.0;
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn enumerates_when_small() {
        let mut cfg = SubsetConfig::new(RngStream::new(1, 0));
        let e = elemental_subsets(6, 2, &cfg);
        assert!(e.exhaustive);
        assert_eq!(e.len(), 15);
        assert_eq!(e.get(0), &[0, 1]);
        assert_eq!(e.get(14), &[4, 5]);
        cfg.n_elemental = 10;
        let e = elemental_subsets(6, 2, &cfg);
        assert!(!e.exhaustive);
        assert_eq!(e.len(), 10);
        for s in e.iter() {
            assert!(s[0] != s[1] && s.iter().all(|&i| i < 6));
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let cfg = SubsetConfig::new(RngStream::new(9, 3));
        let a = elemental_subsets(100, 4, &cfg);
        let b = elemental_subsets(100, 4, &cfg);
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn smallest_h_breaks_ties_by_index() {
        let v = [3.0, 1.0, 1.0, 0.5, 1.0];
        assert_eq!(smallest_h(&v, 3), vec![1, 2, 3]);
        assert_eq!(smallest_h(&v, 5), vec![0, 1, 2, 3, 4]);
    }
}
