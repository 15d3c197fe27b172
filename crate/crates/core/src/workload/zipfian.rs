use rand::Rng;

/// YCSB's default skew.
pub const DEFAULT_THETA: f64 = 0.99;

/// Zipfian key chooser over `[0, n)` with `P(i) = (i + 1)^-theta / zetan`.
///
/// Sampling inverts the cumulative distribution exactly: a uniform draw is
/// scaled by `zetan` and located in the prefix sums by binary search. This
/// costs `8 * n` bytes of table, which is small at benchmark record counts,
/// and unlike the Gray et al. closed-form approximation it is exact for every
/// rank, not only the first two.
#[derive(Debug, Clone)]
pub struct Zipfian {
    theta: f64,
    zetan: f64,
    // cumulative[i] = sum_{j <= i} (j + 1)^-theta
    cumulative: Vec<f64>,
}

impl Zipfian {
    /// # Panics
    /// If `n == 0` or `theta` is negative or not finite.
    pub fn new(n: u64, theta: f64) -> Self {
        assert!(n >= 1, "zipfian needs at least one item");
        assert!(theta.is_finite() && theta >= 0.0, "invalid theta {theta}");
        let mut acc = 0.0;
        let cumulative: Vec<f64> = (1..=n)
            .map(|i| {
                acc += (i as f64).powf(-theta);
                acc
            })
            .collect();
        Self {
            theta,
            zetan: acc,
            cumulative,
        }
    }

    pub fn items(&self) -> u64 {
        self.cumulative.len() as u64
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Generalized harmonic number `sum_{i=1..n} i^-theta`.
    pub fn zetan(&self) -> f64 {
        self.zetan
    }

    pub fn probability(&self, index: u64) -> f64 {
        if index >= self.items() {
            return 0.0;
        }
        ((index + 1) as f64).powf(-self.theta) / self.zetan
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let target = rng.random::<f64>() * self.zetan;
        let idx = self.cumulative.partition_point(|&c| c <= target);
        idx.min(self.cumulative.len() - 1) as u64
    }
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R, n: u64) -> u64 {
    assert!(n >= 1, "uniform needs at least one item");
    rng.random_range(0..n)
}
