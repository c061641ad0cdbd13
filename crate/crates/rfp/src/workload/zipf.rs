//! Exact Zipf sampling over a precomputed CDF.
//!
//! Rank `k` in `[1, n]` is drawn with probability proportional to
//! `k^-theta`. The whole normalized CDF is materialized once and sampling is
//! a uniform draw plus a binary search, so the distribution is exact (no
//! rejection approximation) and the sampling path costs one RNG draw and
//! integer comparisons only.

use rand::Rng;

#[derive(Debug, Clone)]
pub struct ZipfTable {
    theta: f64,
    cdf: Vec<f64>,
}

impl ZipfTable {
    pub fn new(theta: f64, n: u64) -> Self {
        assert!(n >= 1, "zipf needs at least one rank");
        assert!(theta > 0.0, "zipf exponent must be positive");
        let mut cdf = Vec::with_capacity(n as usize);
        let mut acc = 0.0f64;
        for k in 1..=n {
            acc += (k as f64).powf(-theta);
            cdf.push(acc);
        }
        let total = acc;
        for c in &mut cdf {
            *c /= total;
        }
        ZipfTable { theta, cdf }
    }

    pub fn n(&self) -> u64 {
        self.cdf.len() as u64
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Rank in `[1, n]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        let idx = self.cdf.partition_point(|&c| c < u);
        (idx.min(self.cdf.len() - 1) + 1) as u64
    }

    /// Analytic probability of a rank.
    pub fn probability(&self, rank: u64) -> f64 {
        assert!(rank >= 1 && rank <= self.n());
        let i = rank as usize - 1;
        if i == 0 {
            self.cdf[0]
        } else {
            self.cdf[i] - self.cdf[i - 1]
        }
    }

    /// Absolute deviation of the table's total mass from one.
    pub fn normalization_error(&self) -> f64 {
        (self.cdf.last().copied().unwrap_or(0.0) - 1.0).abs()
    }
}
