//! Monotonic time sources. Everything that measures latency or checks an
//! execution deadline goes through [`Clock`] so tests can script time.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use parking_lot::Mutex;

/// A monotonic clock reporting time elapsed since its own epoch.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
}

#[derive(Debug, Clone, Copy)]
pub struct SystemClock {
    epoch: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            epoch: Instant::now(),
        }
    }

    /// Maps a clock reading back onto the process monotonic timeline, for
    /// APIs (such as lock waits) that take an `Instant`.
    pub fn instant_at(&self, at: Duration) -> Instant {
        self.epoch + at
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.epoch.elapsed()
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock {
    nanos: AtomicU64,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, by: Duration) {
        self.nanos.fetch_add(by.as_nanos() as u64, Ordering::SeqCst);
    }

    pub fn set(&self, to: Duration) {
        self.nanos.store(to.as_nanos() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::SeqCst))
    }
}

/// Returns a fixed sequence of readings, one per call, then repeats the last.
#[derive(Debug)]
pub struct ScriptedClock {
    readings: Mutex<VecDeque<Duration>>,
    last: Mutex<Duration>,
}

impl ScriptedClock {
    pub fn new(readings: impl IntoIterator<Item = Duration>) -> Self {
        Self {
            readings: Mutex::new(readings.into_iter().collect()),
            last: Mutex::new(Duration::ZERO),
        }
    }

    pub fn remaining(&self) -> usize {
        self.readings.lock().len()
    }
}

impl Clock for ScriptedClock {
    fn now(&self) -> Duration {
        let mut last = self.last.lock();
        if let Some(next) = self.readings.lock().pop_front() {
            *last = next;
        }
        *last
    }
}
