//! Exclusive per-document lock table.
//!
//! Each key has at most one holder. Acquirers that find the key held queue up
//! behind it and are served strictly in arrival order; a release hands the
//! lock directly to the head of the queue so a late arrival can never barge
//! past an earlier waiter. Waiting is bounded by a caller-supplied deadline,
//! after which the waiter leaves the queue empty-handed.
//!
//! Entries are dropped from the table as soon as a key has neither holder nor
//! waiters, so an idle manager reports `len() == 0`.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TxnId(pub u64);

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "txn-{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentLock {
    pub key: String,
    pub holder: TxnId,
    pub acquired_at: Instant,
    pub deadline: Instant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockOutcome {
    Granted,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LockError {
    #[error("{txn} already holds the lock on {key:?}")]
    ReentrantAcquire { txn: TxnId, key: String },
    #[error("{txn} does not hold the lock on {key:?}")]
    NotHolder { txn: TxnId, key: String },
}

struct Waiter {
    txn: TxnId,
    wake: Arc<Condvar>,
}

#[derive(Default)]
struct KeyState {
    holder: Option<DocumentLock>,
    waiters: VecDeque<Waiter>,
}

pub struct LockManager {
    table: Mutex<HashMap<String, KeyState>>,
    lock_timeout: Duration,
}

impl LockManager {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(100);

    pub fn new(lock_timeout: Duration) -> Self {
        Self {
            table: Mutex::new(HashMap::new()),
            lock_timeout,
        }
    }

    pub fn lock_timeout(&self) -> Duration {
        self.lock_timeout
    }

    /// Blocks until `txn` holds `key` or `wait_deadline` passes.
    pub fn acquire(
        &self,
        txn: TxnId,
        key: &str,
        wait_deadline: Instant,
    ) -> Result<LockOutcome, LockError> {
        let mut table = self.table.lock();
        let state = table.entry(key.to_string()).or_default();
        if state.holder.as_ref().is_some_and(|h| h.holder == txn) {
            return Err(LockError::ReentrantAcquire {
                txn,
                key: key.to_string(),
            });
        }
        if state.holder.is_none() && state.waiters.is_empty() {
            state.holder = Some(self.grant(txn, key));
            return Ok(LockOutcome::Granted);
        }

        let wake = Arc::new(Condvar::new());
        state.waiters.push_back(Waiter {
            txn,
            wake: Arc::clone(&wake),
        });
        loop {
            let timed_out = wake.wait_until(&mut table, wait_deadline).timed_out();
            let state = table.get_mut(key).expect("key state outlives its waiters");
            if state.holder.as_ref().is_some_and(|h| h.holder == txn) {
                return Ok(LockOutcome::Granted);
            }
            if timed_out || Instant::now() >= wait_deadline {
                state.waiters.retain(|w| w.txn != txn);
                if state.holder.is_none() && state.waiters.is_empty() {
                    table.remove(key);
                }
                return Ok(LockOutcome::TimedOut);
            }
        }
    }

    /// Non-blocking acquire; grants only if the key is free and nobody waits.
    pub fn try_acquire(&self, txn: TxnId, key: &str) -> Result<LockOutcome, LockError> {
        self.acquire(txn, key, Instant::now())
    }

    pub fn release(&self, txn: TxnId, key: &str) -> Result<(), LockError> {
        let mut table = self.table.lock();
        let state = match table.get_mut(key) {
            Some(s) if s.holder.as_ref().is_some_and(|h| h.holder == txn) => s,
            _ => {
                return Err(LockError::NotHolder {
                    txn,
                    key: key.to_string(),
                })
            }
        };
        match state.waiters.pop_front() {
            Some(next) => {
                state.holder = Some(self.grant(next.txn, key));
                next.wake.notify_one();
            }
            None => {
                table.remove(key);
            }
        }
        Ok(())
    }

    /// Advisory: the answer may be stale by the time the caller acts on it.
    pub fn is_locked(&self, key: &str) -> bool {
        self.table
            .lock()
            .get(key)
            .is_some_and(|s| s.holder.is_some())
    }

    pub fn holder(&self, key: &str) -> Option<DocumentLock> {
        self.table.lock().get(key).and_then(|s| s.holder.clone())
    }

    pub fn waiting(&self, key: &str) -> usize {
        self.table.lock().get(key).map_or(0, |s| s.waiters.len())
    }

    /// Number of keys with a holder or a waiter.
    pub fn len(&self) -> usize {
        self.table.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn grant(&self, txn: TxnId, key: &str) -> DocumentLock {
        let now = Instant::now();
        DocumentLock {
            key: key.to_string(),
            holder: txn,
            acquired_at: now,
            deadline: now + self.lock_timeout,
        }
    }
}

impl Default for LockManager {
    fn default() -> Self {
        Self::new(Self::DEFAULT_TIMEOUT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Barrier;
    use std::thread;

    fn far() -> Instant {
        Instant::now() + Duration::from_secs(30)
    }

    #[test]
    fn uncontended_grant_and_release() {
        let locks = LockManager::default();
        assert!(!locks.is_locked("k"));
        assert_eq!(
            locks.acquire(TxnId(1), "k", far()),
            Ok(LockOutcome::Granted)
        );
        assert!(locks.is_locked("k"));
        let held = locks.holder("k").unwrap();
        assert_eq!(held.holder, TxnId(1));
        assert_eq!(
            held.deadline,
            held.acquired_at + LockManager::DEFAULT_TIMEOUT
        );
        locks.release(TxnId(1), "k").unwrap();
        assert!(!locks.is_locked("k"));
        assert!(locks.is_empty());
        assert_eq!(
            locks.acquire(TxnId(2), "k", far()),
            Ok(LockOutcome::Granted)
        );
    }

    #[test]
    fn reentrant_acquire_is_an_error() {
        let locks = LockManager::default();
        locks.acquire(TxnId(1), "k", far()).unwrap();
        assert!(matches!(
            locks.acquire(TxnId(1), "k", far()),
            Err(LockError::ReentrantAcquire { .. })
        ));
    }

    #[test]
    fn release_without_holding() {
        let locks = LockManager::default();
        assert!(matches!(
            locks.release(TxnId(1), "k"),
            Err(LockError::NotHolder { .. })
        ));
        locks.acquire(TxnId(1), "k", far()).unwrap();
        assert!(matches!(
            locks.release(TxnId(2), "k"),
            Err(LockError::NotHolder { .. })
        ));
    }

    #[test]
    fn try_acquire_on_held_key_times_out_and_leaves_no_trace() {
        let locks = LockManager::default();
        locks.acquire(TxnId(1), "k", far()).unwrap();
        assert_eq!(locks.try_acquire(TxnId(2), "k"), Ok(LockOutcome::TimedOut));
        assert_eq!(locks.waiting("k"), 0);
        assert_eq!(locks.holder("k").unwrap().holder, TxnId(1));
    }

    #[test]
    fn blocked_waiter_times_out_near_deadline() {
        let locks = LockManager::default();
        locks.acquire(TxnId(1), "k", far()).unwrap();
        let start = Instant::now();
        let outcome = locks
            .acquire(TxnId(2), "k", start + Duration::from_millis(100))
            .unwrap();
        let waited = start.elapsed();
        assert_eq!(outcome, LockOutcome::TimedOut);
        assert!(waited >= Duration::from_millis(100), "{waited:?}");
        assert!(waited < Duration::from_millis(150), "{waited:?}");
        assert_eq!(locks.waiting("k"), 0);
        locks.release(TxnId(1), "k").unwrap();
        assert!(locks.is_empty());
    }

    #[test]
    fn waiters_are_granted_in_arrival_order() {
        let locks = Arc::new(LockManager::default());
        locks.acquire(TxnId(0), "k", far()).unwrap();
        let order = Arc::new(Mutex::new(Vec::new()));
        let mut handles = Vec::new();
        for id in 1..=2u64 {
            let (mine, order) = (Arc::clone(&locks), Arc::clone(&order));
            handles.push(thread::spawn(move || {
                assert_eq!(
                    mine.acquire(TxnId(id), "k", far()),
                    Ok(LockOutcome::Granted)
                );
                order.lock().push(id);
                mine.release(TxnId(id), "k").unwrap();
            }));
            // enqueue strictly one after the other
            while locks.waiting("k") < id as usize {
                thread::yield_now();
            }
        }
        locks.release(TxnId(0), "k").unwrap();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(*order.lock(), vec![1, 2]);
        assert!(locks.is_empty());
    }

    #[test]
    fn mutual_exclusion_under_stress() {
        let locks = Arc::new(LockManager::default());
        let inside = Arc::new(AtomicUsize::new(0));
        let max_seen = Arc::new(AtomicUsize::new(0));
        let grants = Arc::new(AtomicUsize::new(0));
        let barrier = Arc::new(Barrier::new(8));
        let handles: Vec<_> = (0..8u64)
            .map(|t| {
                let (locks, inside, max_seen, grants, barrier) = (
                    Arc::clone(&locks),
                    Arc::clone(&inside),
                    Arc::clone(&max_seen),
                    Arc::clone(&grants),
                    Arc::clone(&barrier),
                );
                thread::spawn(move || {
                    barrier.wait();
                    for _ in 0..300 {
                        let txn = TxnId(t);
                        assert_eq!(locks.acquire(txn, "hot", far()), Ok(LockOutcome::Granted));
                        let now = inside.fetch_add(1, Ordering::SeqCst) + 1;
                        max_seen.fetch_max(now, Ordering::SeqCst);
                        grants.fetch_add(1, Ordering::SeqCst);
                        inside.fetch_sub(1, Ordering::SeqCst);
                        locks.release(txn, "hot").unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(max_seen.load(Ordering::SeqCst), 1);
        assert_eq!(grants.load(Ordering::SeqCst), 2400);
        assert!(locks.is_empty());
    }
}
