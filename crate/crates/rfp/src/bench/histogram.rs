//! Log-bucketed latency histogram: 2% relative bucket width from 100 ns to
//! 100 ms, plus an underflow bucket at the bottom and an overflow bucket at
//! the top.

use thiserror::Error;

const LOW_NS: f64 = 100.0;
const HIGH_NS: f64 = 100.0e6;
const WIDTH: f64 = 1.02;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HistogramError {
    #[error("histogram is empty")]
    Empty,
    #[error("quantile must be in (0, 1]")]
    BadQuantile,
}

#[derive(Debug, Clone)]
pub struct LatencyHistogram {
    /// Upper edge of bucket `i`; the final entry is the overflow bucket.
    edges: Vec<f64>,
    counts: Vec<u64>,
    total: u64,
}

impl Default for LatencyHistogram {
    fn default() -> Self {
        Self::new()
    }
}

impl LatencyHistogram {
    pub fn new() -> Self {
        let mut edges = vec![LOW_NS];
        while *edges.last().unwrap() < HIGH_NS {
            edges.push(edges.last().unwrap() * WIDTH);
        }
        edges.push(f64::MAX); // overflow
        let counts = vec![0; edges.len()];
        LatencyHistogram { edges, counts, total: 0 }
    }

    pub fn record(&mut self, latency_ns: u64) {
        let idx = self.edges.partition_point(|&e| e < latency_ns as f64);
        let last = self.counts.len() - 1;
        self.counts[idx.min(last)] += 1;
        self.total += 1;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn merge(&mut self, other: &LatencyHistogram) {
        debug_assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }

    /// Upper edge (ns) of the smallest bucket whose cumulative mass reaches
    /// quantile `q`.
    pub fn percentile(&self, q: f64) -> Result<f64, HistogramError> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(HistogramError::BadQuantile);
        }
        if self.total == 0 {
            return Err(HistogramError::Empty);
        }
        let threshold = q * self.total as f64;
        let mut cumulative = 0u64;
        for (count, &edge) in self.counts.iter().zip(&self.edges) {
            cumulative += count;
            if cumulative as f64 >= threshold {
                return Ok(edge);
            }
        }
        // Reachable only via the overflow bucket.
        Ok(*self.edges.last().unwrap())
    }

    /// `(upper_edge_ns, count)` for every non-empty bucket.
    pub fn nonzero_buckets(&self) -> Vec<(f64, u64)> {
        self.edges
            .iter()
            .zip(&self.counts)
            .filter(|(_, &c)| c > 0)
            .map(|(&e, &c)| (e, c))
            .collect()
    }
}

/// Percentile over an exported bucket list (as embedded in reports).
pub fn percentile_of_buckets(buckets: &[(f64, u64)], q: f64) -> Result<f64, HistogramError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(HistogramError::BadQuantile);
    }
    let total: u64 = buckets.iter().map(|&(_, c)| c).sum();
    if total == 0 {
        return Err(HistogramError::Empty);
    }
    let threshold = q * total as f64;
    let mut cumulative = 0u64;
    for &(edge, count) in buckets {
        cumulative += count;
        if cumulative as f64 >= threshold {
            return Ok(edge);
        }
    }
    Ok(buckets.last().unwrap().0)
}
