//! Latency histograms.
//!
//! Buckets are 1 µs wide below 1 ms, then double in width up to about 65 s,
//! with one overflow bucket past that. Percentiles resolve to a bucket's upper
//! edge clamped to the observed maximum; count, mean, min and max are exact.

use serde::{Deserialize, Serialize};

use crate::txn::OpKind;

const LINEAR_LIMIT_US: u64 = 1_000;
const DOUBLINGS: usize = 16;
const BUCKETS: usize = LINEAR_LIMIT_US as usize + DOUBLINGS + 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    buckets: Vec<u64>,
    count: u64,
    sum_us: u128,
    min_us: u64,
    max_us: u64,
}

impl Default for Histogram {
    fn default() -> Self {
        Self {
            buckets: vec![0; BUCKETS],
            count: 0,
            sum_us: 0,
            min_us: u64::MAX,
            max_us: 0,
        }
    }
}

fn bucket_of(us: u64) -> usize {
    if us < LINEAR_LIMIT_US {
        return us as usize;
    }
    let doublings = (us / LINEAR_LIMIT_US).ilog2() as usize;
    LINEAR_LIMIT_US as usize + doublings.min(DOUBLINGS)
}

// Largest value a bucket can hold.
fn bucket_ceiling(bucket: usize) -> u64 {
    if bucket < LINEAR_LIMIT_US as usize {
        return bucket as u64;
    }
    let k = bucket - LINEAR_LIMIT_US as usize;
    if k >= DOUBLINGS {
        return u64::MAX;
    }
    (LINEAR_LIMIT_US << (k + 1)) - 1
}

impl Histogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, us: u64) {
        self.buckets[bucket_of(us)] += 1;
        self.count += 1;
        self.sum_us += u128::from(us);
        self.min_us = self.min_us.min(us);
        self.max_us = self.max_us.max(us);
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.buckets.iter_mut().zip(&other.buckets) {
            *a += b;
        }
        self.count += other.count;
        self.sum_us += other.sum_us;
        self.min_us = self.min_us.min(other.min_us);
        self.max_us = self.max_us.max(other.max_us);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum_us as f64 / self.count as f64
        }
    }

    pub fn min(&self) -> u64 {
        if self.count == 0 {
            0
        } else {
            self.min_us
        }
    }

    pub fn max(&self) -> u64 {
        self.max_us
    }

    /// `q` in `[0, 1]`.
    pub fn percentile(&self, q: f64) -> u64 {
        if self.count == 0 {
            return 0;
        }
        let rank = ((q.clamp(0.0, 1.0) * self.count as f64).ceil() as u64).max(1);
        let mut seen = 0;
        for (bucket, &n) in self.buckets.iter().enumerate() {
            seen += n;
            if seen >= rank {
                return bucket_ceiling(bucket).clamp(self.min_us, self.max_us);
            }
        }
        self.max_us
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub mean_us: f64,
    pub min_us: u64,
    pub max_us: u64,
    pub p95_us: u64,
    pub p99_us: u64,
}

impl LatencyStats {
    pub fn mean_ms(&self) -> f64 {
        self.mean_us / 1_000.0
    }
}

impl From<&Histogram> for LatencyStats {
    fn from(h: &Histogram) -> Self {
        Self {
            count: h.count(),
            mean_us: h.mean(),
            min_us: h.min(),
            max_us: h.max(),
            p95_us: h.percentile(0.95),
            p99_us: h.percentile(0.99),
        }
    }
}

/// One histogram per reported operation class. Inserts are not a run-phase
/// class and are ignored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LatencyRecorder {
    pub read: Histogram,
    pub update: Histogram,
    pub rmw: Histogram,
}

impl LatencyRecorder {
    pub fn record(&mut self, kind: OpKind, us: u64) {
        match kind {
            OpKind::Read => self.read.record(us),
            OpKind::Update => self.update.record(us),
            OpKind::ReadModifyWrite => self.rmw.record(us),
            OpKind::Insert => {}
        }
    }

    pub fn merge(&mut self, other: &LatencyRecorder) {
        self.read.merge(&other.read);
        self.update.merge(&other.update);
        self.rmw.merge(&other.rmw);
    }
}
