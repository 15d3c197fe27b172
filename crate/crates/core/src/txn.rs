//! Transaction lifecycle over the store and the lock table.
//!
//! A transaction moves through four stages:
//!
//! 1. **management** ([`TransactionManager::begin`]): the operation list is
//!    validated and given a fresh id and an execution deadline of
//!    `begin + lock_timeout`;
//! 2. **bifurcation** ([`TransactionManager::classify`]): read-only
//!    transactions are separated from write transactions;
//! 3. **readiness** ([`TransactionManager::assess_readiness`]): a write
//!    transaction takes exclusive locks on its whole write set in ascending
//!    key order, or aborts if any lock cannot be had before the wait deadline.
//!    Read-only transactions take no locks;
//! 4. **execution** ([`TransactionManager::execute`]): pre-images of the write
//!    set are captured, operations applied in order, then the transaction
//!    commits, or, if the execution deadline passes or an operation fails, every
//!    pre-image is restored and the locks are released.
//!
//! Because the write set is declared up front and locked in sorted order, the
//! waits-for graph is acyclic and no deadlock can form; the lock timeout stays
//! as a bound on waiting.
//!
//! [`TransactionManager::run_baseline`] executes the same operations with none
//! of the above, for comparison.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::lockmgr::{LockError, LockManager, LockOutcome, TxnId};
use crate::store::{FieldMap, Snapshot, Store, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Read,
    Update,
    Insert,
    ReadModifyWrite,
}

impl OpKind {
    pub fn mutates(self) -> bool {
        !matches!(self, OpKind::Read)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Read => "read",
            OpKind::Update => "update",
            OpKind::Insert => "insert",
            OpKind::ReadModifyWrite => "rmw",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Pure field transformation applied by a read-modify-write.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transform {
    /// Replace one field with a fixed value.
    ReplaceField { field: String, value: Vec<u8> },
    /// Append bytes to one field (creating it if missing).
    AppendMarker { field: String, marker: Vec<u8> },
}

impl Transform {
    pub fn apply(&self, fields: &FieldMap) -> FieldMap {
        let mut out = fields.clone();
        match self {
            Transform::ReplaceField { field, value } => {
                out.insert(field.clone(), value.clone());
            }
            Transform::AppendMarker { field, marker } => {
                out.entry(field.clone())
                    .or_default()
                    .extend_from_slice(marker);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperationSpec {
    pub kind: OpKind,
    pub key: String,
    pub changes: Option<FieldMap>,
    pub transform: Option<Transform>,
}

impl OperationSpec {
    pub fn read(key: impl Into<String>) -> Self {
        Self {
            kind: OpKind::Read,
            key: key.into(),
            changes: None,
            transform: None,
        }
    }

    pub fn update(key: impl Into<String>, changes: FieldMap) -> Self {
        Self {
            kind: OpKind::Update,
            key: key.into(),
            changes: Some(changes),
            transform: None,
        }
    }

    pub fn insert(key: impl Into<String>, fields: FieldMap) -> Self {
        Self {
            kind: OpKind::Insert,
            key: key.into(),
            changes: Some(fields),
            transform: None,
        }
    }

    pub fn read_modify_write(key: impl Into<String>, transform: Transform) -> Self {
        Self {
            kind: OpKind::ReadModifyWrite,
            key: key.into(),
            changes: None,
            transform: Some(transform),
        }
    }

    fn validate(&self) -> Result<(), &'static str> {
        match self.kind {
            OpKind::Read if self.changes.is_some() || self.transform.is_some() => {
                Err("read carries no payload")
            }
            OpKind::Update | OpKind::Insert
                if self.changes.as_ref().is_none_or(FieldMap::is_empty) =>
            {
                Err("update/insert needs non-empty changes")
            }
            OpKind::ReadModifyWrite if self.transform.is_none() => Err("rmw needs a transform"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxnKind {
    ReadOnly,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxnState {
    Pending,
    Ready,
    Running,
    Committed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum PreImage {
    Present(Snapshot),
    Absent(String),
}

#[derive(Debug)]
pub struct Transaction {
    id: TxnId,
    kind: Option<TxnKind>,
    ops: Vec<OperationSpec>,
    state: TxnState,
    pre_images: Vec<PreImage>,
    locked_keys: Vec<String>,
    begun_at: Duration,
    deadline: Duration,
}

impl Transaction {
    pub fn id(&self) -> TxnId {
        self.id
    }

    pub fn kind(&self) -> Option<TxnKind> {
        self.kind
    }

    pub fn ops(&self) -> &[OperationSpec] {
        &self.ops
    }

    pub fn state(&self) -> TxnState {
        self.state
    }

    pub fn locked_keys(&self) -> &[String] {
        &self.locked_keys
    }

    pub fn pre_image_count(&self) -> usize {
        self.pre_images.len()
    }

    /// Execution deadline, on the manager's clock.
    pub fn deadline(&self) -> Duration {
        self.deadline
    }

    /// Keys touched by mutating operations, ascending and deduplicated.
    pub fn write_set(&self) -> Vec<String> {
        self.ops
            .iter()
            .filter(|op| op.kind.mutates())
            .map(|op| op.key.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Committed,
    AbortedTimeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readiness {
    Ready,
    AbortedTimeout,
}

/// What one operation saw and wrote; feeds the audit log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpObservation {
    pub kind: OpKind,
    pub key: String,
    pub observed_version: Option<u64>,
    pub written_version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitResult {
    pub txn: TxnId,
    pub outcome: Outcome,
    pub latency: Duration,
    /// Empty unless the transaction committed.
    pub observations: Vec<OpObservation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxnError {
    #[error("transaction has no operations")]
    EmptyTransaction,
    #[error("operation {index} is malformed: {reason}")]
    InvalidOperation { index: usize, reason: &'static str },
    #[error("{txn} is {found:?}, expected {expected:?}")]
    WrongState {
        txn: TxnId,
        expected: TxnState,
        found: TxnState,
    },
    #[error("{0} has not been classified")]
    Unclassified(TxnId),
    #[error("{txn} aborted: {source}")]
    Store {
        txn: TxnId,
        #[source]
        source: StoreError,
    },
    #[error(transparent)]
    Lock(#[from] LockError),
}

impl TxnError {
    pub fn is_not_found(&self) -> bool {
        matches!(
            self,
            TxnError::Store {
                source: StoreError::NotFound(_),
                ..
            }
        )
    }
}

pub type Result<T, E = TxnError> = std::result::Result<T, E>;

/// Called after each operation a write transaction applies, with the
/// transaction id and the operation index. Used to inject faults in tests.
pub type StepHook = Arc<dyn Fn(TxnId, usize) + Send + Sync>;

pub struct TransactionManager {
    store: Arc<Store>,
    locks: Arc<LockManager>,
    clock: Arc<dyn Clock>,
    next_id: AtomicU64,
    step_hook: Option<StepHook>,
}

impl TransactionManager {
    pub fn new(store: Arc<Store>, locks: Arc<LockManager>) -> Self {
        Self {
            store,
            locks,
            clock: Arc::new(SystemClock::new()),
            next_id: AtomicU64::new(1),
            step_hook: None,
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_step_hook(mut self, hook: StepHook) -> Self {
        self.step_hook = Some(hook);
        self
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn locks(&self) -> &Arc<LockManager> {
        &self.locks
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    fn fresh_id(&self) -> TxnId {
        TxnId(self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    /// Stage 1.
    pub fn begin(&self, ops: Vec<OperationSpec>) -> Result<Transaction> {
        if ops.is_empty() {
            return Err(TxnError::EmptyTransaction);
        }
        for (index, op) in ops.iter().enumerate() {
            op.validate()
                .map_err(|reason| TxnError::InvalidOperation { index, reason })?;
        }
        let begun_at = self.clock.now();
        Ok(Transaction {
            id: self.fresh_id(),
            kind: None,
            ops,
            state: TxnState::Pending,
            pre_images: Vec::new(),
            locked_keys: Vec::new(),
            begun_at,
            deadline: begun_at + self.locks.lock_timeout(),
        })
    }

    /// Stage 2.
    pub fn classify(&self, txn: &mut Transaction) -> Result<TxnKind> {
        expect_state(txn, TxnState::Pending)?;
        let kind = if txn.ops.iter().all(|op| op.kind == OpKind::Read) {
            TxnKind::ReadOnly
        } else {
            TxnKind::Write
        };
        txn.kind = Some(kind);
        Ok(kind)
    }

    /// Stage 3.
    pub fn assess_readiness(
        &self,
        txn: &mut Transaction,
        wait_deadline: Instant,
    ) -> Result<Readiness> {
        expect_state(txn, TxnState::Pending)?;
        let kind = txn.kind.ok_or(TxnError::Unclassified(txn.id))?;
        if kind == TxnKind::Write {
            for key in txn.write_set() {
                match self.locks.acquire(txn.id, &key, wait_deadline) {
                    Ok(LockOutcome::Granted) => txn.locked_keys.push(key),
                    Ok(LockOutcome::TimedOut) => {
                        self.release_all(txn);
                        txn.state = TxnState::Aborted;
                        return Ok(Readiness::AbortedTimeout);
                    }
                    Err(e) => {
                        self.release_all(txn);
                        txn.state = TxnState::Aborted;
                        return Err(e.into());
                    }
                }
            }
        }
        txn.state = TxnState::Ready;
        Ok(Readiness::Ready)
    }

    /// Stage 4.
    pub fn execute(&self, txn: &mut Transaction) -> Result<CommitResult> {
        expect_state(txn, TxnState::Ready)?;
        txn.state = TxnState::Running;
        match txn.kind {
            Some(TxnKind::ReadOnly) => self.execute_reads(txn),
            Some(TxnKind::Write) => self.execute_writes(txn),
            None => Err(TxnError::Unclassified(txn.id)),
        }
    }

    /// All four stages in sequence. The lock wait is bounded by the same
    /// budget as execution: `begin + lock_timeout`.
    pub fn run(&self, ops: Vec<OperationSpec>) -> Result<CommitResult> {
        let mut txn = self.begin(ops)?;
        self.classify(&mut txn)?;
        let budget = txn.deadline.saturating_sub(self.clock.now());
        match self.assess_readiness(&mut txn, Instant::now() + budget)? {
            Readiness::Ready => self.execute(&mut txn),
            Readiness::AbortedTimeout => Ok(CommitResult {
                txn: txn.id,
                outcome: Outcome::AbortedTimeout,
                latency: self.elapsed(&txn),
                observations: Vec::new(),
            }),
        }
    }

    /// Rolls back and unlocks a transaction that is ready or running.
    pub fn abort(&self, txn: &mut Transaction) -> Result<()> {
        if !matches!(txn.state, TxnState::Ready | TxnState::Running) {
            return Err(TxnError::WrongState {
                txn: txn.id,
                expected: TxnState::Running,
                found: txn.state,
            });
        }
        self.rollback(txn);
        Ok(())
    }

    /// The same operations with no locking, readiness, or rollback. Each
    /// store call is still atomic on its own.
    pub fn run_baseline(&self, ops: &[OperationSpec]) -> Result<CommitResult> {
        if ops.is_empty() {
            return Err(TxnError::EmptyTransaction);
        }
        let id = self.fresh_id();
        let begun_at = self.clock.now();
        let mut observations = Vec::with_capacity(ops.len());
        for (index, op) in ops.iter().enumerate() {
            op.validate()
                .map_err(|reason| TxnError::InvalidOperation { index, reason })?;
            let seen = self
                .apply(op)
                .map_err(|source| TxnError::Store { txn: id, source })?;
            observations.push(seen);
        }
        Ok(CommitResult {
            txn: id,
            outcome: Outcome::Committed,
            latency: self.clock.now().saturating_sub(begun_at),
            observations,
        })
    }

    fn execute_reads(&self, txn: &mut Transaction) -> Result<CommitResult> {
        let mut observations = Vec::with_capacity(txn.ops.len());
        for op in &txn.ops {
            match self.apply(op) {
                Ok(seen) => observations.push(seen),
                Err(source) => {
                    txn.state = TxnState::Aborted;
                    return Err(TxnError::Store {
                        txn: txn.id,
                        source,
                    });
                }
            }
        }
        txn.state = TxnState::Committed;
        Ok(CommitResult {
            txn: txn.id,
            outcome: Outcome::Committed,
            latency: self.elapsed(txn),
            observations,
        })
    }

    fn execute_writes(&self, txn: &mut Transaction) -> Result<CommitResult> {
        for key in txn.write_set() {
            let pre = match self.store.snapshot(&key) {
                Ok(snap) => PreImage::Present(snap),
                Err(StoreError::NotFound(_)) => PreImage::Absent(key),
                Err(source) => {
                    self.rollback(txn);
                    return Err(TxnError::Store {
                        txn: txn.id,
                        source,
                    });
                }
            };
            txn.pre_images.push(pre);
        }

        let mut observations = Vec::with_capacity(txn.ops.len());
        for index in 0..txn.ops.len() {
            if self.clock.now() > txn.deadline {
                self.rollback(txn);
                return Ok(CommitResult {
                    txn: txn.id,
                    outcome: Outcome::AbortedTimeout,
                    latency: self.elapsed(txn),
                    observations: Vec::new(),
                });
            }
            match self.apply(&txn.ops[index]) {
                Ok(seen) => observations.push(seen),
                Err(source) => {
                    self.rollback(txn);
                    return Err(TxnError::Store {
                        txn: txn.id,
                        source,
                    });
                }
            }
            if let Some(hook) = &self.step_hook {
                hook(txn.id, index);
            }
        }

        self.commit(txn);
        Ok(CommitResult {
            txn: txn.id,
            outcome: Outcome::Committed,
            latency: self.elapsed(txn),
            observations,
        })
    }

    fn apply(&self, op: &OperationSpec) -> Result<OpObservation, StoreError> {
        let key = op.key.as_str();
        let (observed_version, written_version) = match op.kind {
            OpKind::Read => (Some(self.store.read(key)?.version), None),
            OpKind::Update => {
                let changes = op.changes.as_ref().expect("validated");
                (None, Some(self.store.update(key, changes)?))
            }
            OpKind::Insert => {
                let fields = op.changes.clone().expect("validated");
                self.store.insert(key, fields)?;
                (None, Some(0))
            }
            OpKind::ReadModifyWrite => {
                let doc = self.store.read(key)?;
                let transform = op.transform.as_ref().expect("validated");
                // The read and the write-back are two separate store requests.
                // Give up the CPU between them, as a client waiting on a
                // round trip would, so single-core hosts see interleavings too.
                std::thread::yield_now();
                let written =
                    self.store
                        .write_back(key, transform.apply(&doc.fields), doc.version)?;
                (Some(doc.version), Some(written))
            }
        };
        Ok(OpObservation {
            kind: op.kind,
            key: op.key.clone(),
            observed_version,
            written_version,
        })
    }

    fn commit(&self, txn: &mut Transaction) {
        txn.pre_images.clear();
        self.release_all(txn);
        txn.state = TxnState::Committed;
    }

    fn rollback(&self, txn: &mut Transaction) {
        for pre in txn.pre_images.drain(..).rev() {
            match pre {
                PreImage::Present(snap) => {
                    self.store
                        .restore(&snap)
                        .expect("locked document cannot disappear");
                }
                PreImage::Absent(key) => {
                    // only present if this transaction inserted it
                    let _ = self.store.remove(&key);
                }
            }
        }
        self.release_all(txn);
        txn.state = TxnState::Aborted;
    }

    fn release_all(&self, txn: &mut Transaction) {
        for key in txn.locked_keys.drain(..) {
            self.locks
                .release(txn.id, &key)
                .expect("transaction holds its locked keys");
        }
    }

    fn elapsed(&self, txn: &Transaction) -> Duration {
        self.clock.now().saturating_sub(txn.begun_at)
    }

    /// Process-monotonic instant matching `txn`'s execution deadline.
    pub fn deadline_instant(&self, txn: &Transaction) -> Instant {
        Instant::now() + txn.deadline.saturating_sub(self.clock.now())
    }
}

fn expect_state(txn: &Transaction, expected: TxnState) -> Result<()> {
    if txn.state != expected {
        return Err(TxnError::WrongState {
            txn: txn.id,
            expected,
            found: txn.state,
        });
    }
    Ok(())
}
