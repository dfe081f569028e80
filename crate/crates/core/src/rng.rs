//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a [`RngStream`]: a root seed plus
//! a 64-bit stream id. Both are fed to ChaCha8, whose output is specified
//! bit-for-bit, so a stream produces identical draws on every platform and
//! under every thread schedule. Child streams are derived by mixing integer
//! tags into the stream id with splitmix64 (not `std::hash`, whose output is
//! not guaranteed stable between releases).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Derive an independent stream for a (replicate, cell, purpose, ...) key.
    pub fn child(&self, tags: &[u64]) -> Self {
        let mut id = splitmix64(self.stream_id ^ 0x5851_f42d_4c95_7f2d);
        for &t in tags {
            id = splitmix64(id ^ splitmix64(t.wrapping_add(0x2545_f491_4f6c_dd1d)));
        }
        Self {
            seed: self.seed,
            stream_id: id,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Draws random `k`-subsets of `0..n` by partial Fisher–Yates shuffles of a
/// reused permutation buffer.
pub struct SubsetSampler {
    perm: Vec<usize>,
    k: usize,
}

impl SubsetSampler {
    pub fn new(n: usize, k: usize) -> Self {
        assert!(k <= n, "subset size {k} exceeds population {n}");
        Self {
            perm: (0..n).collect(),
            k,
        }
    }

    /// The next subset; valid until the following call.
    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[usize] {
        let n = self.perm.len();
        for i in 0..self.k {
            let j = rng.random_range(i..n);
            self.perm.swap(i, j);
        }
        &self.perm[..self.k]
    }
}

/// Number of `k`-subsets of an `n`-set, saturating at `u64::MAX`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Visit every `k`-subset of `0..n` in lexicographic order.
pub fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        // rightmost position that can still advance
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
