//! Document store with a four-stage transaction model (management,
//! read/write bifurcation, readiness assessment, locked execution with
//! timeout abort and rollback) and a YCSB-style benchmark harness that
//! compares it against unguarded access.

pub mod audit;
pub mod clock;
pub mod harness;
pub mod lockmgr;
pub mod metrics;
pub mod report;
pub mod store;
pub mod txn;
pub mod workload;

pub use lockmgr::{LockManager, LockOutcome, TxnId};
pub use store::{Document, FieldMap, Snapshot, Store};
pub use txn::{CommitResult, OpKind, OperationSpec, Outcome, TransactionManager, Transform};
