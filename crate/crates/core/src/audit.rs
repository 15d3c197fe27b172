//! Offline consistency checks over a merged operation log.
//!
//! Every committed write to a document bumps its version by exactly one when
//! writers are properly isolated, so per key the versions written by
//! committed updates and read-modify-writes must be exactly `1..=n` and the
//! final stored version must be `n`. A lost update shows up as a repeated
//! version (two writers both built on the same state) and a final version
//! short of the number of committed writes. Aborted operations are rolled
//! back and take no part in the chain.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lockmgr::TxnId;
use crate::txn::OpKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogOutcome {
    Committed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpLogEntry {
    pub txn_id: TxnId,
    pub worker_id: usize,
    pub kind: OpKind,
    pub key: String,
    pub observed_version: Option<u64>,
    pub written_version: Option<u64>,
    pub outcome: LogOutcome,
    pub issue_us: u64,
    pub finish_us: u64,
}

impl OpLogEntry {
    fn in_chain(&self) -> bool {
        self.outcome == LogOutcome::Committed
            && matches!(self.kind, OpKind::Update | OpKind::ReadModifyWrite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    LostUpdatesDetected,
    NotAudited,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Consistent => "consistent",
            Verdict::LostUpdatesDetected => "lost_updates_detected",
            Verdict::NotAudited => "not_audited",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    DuplicateVersion(u64),
    MissingVersion(u64),
    /// Written version above the number of committed writes to the key.
    UnexpectedVersion(u64),
    FinalVersionMismatch {
        expected: u64,
        actual: Option<u64>,
    },
    NonAtomicRmw {
        observed: u64,
        written: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub key: String,
    pub kind: ViolationKind,
    pub txns: Vec<TxnId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditVerdict {
    pub violations: Vec<Violation>,
}

impl AuditVerdict {
    pub fn verdict(&self) -> Verdict {
        if self.violations.is_empty() {
            Verdict::Consistent
        } else {
            Verdict::LostUpdatesDetected
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn merge(mut self, other: AuditVerdict) -> AuditVerdict {
        self.violations.extend(other.violations);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("committed {kind} by {txn} on {key:?} lacks a recorded version")]
    IncompleteLog {
        txn: TxnId,
        kind: OpKind,
        key: String,
    },
}

fn incomplete(e: &OpLogEntry) -> AuditError {
    AuditError::IncompleteLog {
        txn: e.txn_id,
        kind: e.kind,
        key: e.key.clone(),
    }
}

/// Checks that committed writes form the chain `1..=n` per key and that the
/// store ended at `n`. Keys in `final_versions` that no one wrote must still
/// be at version 0.
pub fn check_version_chain(
    log: &[OpLogEntry],
    final_versions: &BTreeMap<String, u64>,
) -> Result<AuditVerdict, AuditError> {
    let mut chains: BTreeMap<&str, BTreeMap<u64, Vec<TxnId>>> = BTreeMap::new();
    for e in log.iter().filter(|e| e.in_chain()) {
        let written = e.written_version.ok_or_else(|| incomplete(e))?;
        chains
            .entry(e.key.as_str())
            .or_default()
            .entry(written)
            .or_default()
            .push(e.txn_id);
    }

    let mut violations = Vec::new();
    for (&key, versions) in &chains {
        let n: u64 = versions.values().map(|t| t.len() as u64).sum();
        for (&v, txns) in versions {
            if txns.len() > 1 {
                violations.push(Violation {
                    key: key.to_string(),
                    kind: ViolationKind::DuplicateVersion(v),
                    txns: txns.clone(),
                });
            }
            if v == 0 || v > n {
                violations.push(Violation {
                    key: key.to_string(),
                    kind: ViolationKind::UnexpectedVersion(v),
                    txns: txns.clone(),
                });
            }
        }
        for v in (1..=n).filter(|v| !versions.contains_key(v)) {
            violations.push(Violation {
                key: key.to_string(),
                kind: ViolationKind::MissingVersion(v),
                txns: Vec::new(),
            });
        }
        let actual = final_versions.get(key).copied();
        if actual != Some(n) {
            violations.push(Violation {
                key: key.to_string(),
                kind: ViolationKind::FinalVersionMismatch {
                    expected: n,
                    actual,
                },
                txns: versions.values().flatten().copied().collect(),
            });
        }
    }
    for (key, &actual) in final_versions {
        if actual != 0 && !chains.contains_key(key.as_str()) {
            violations.push(Violation {
                key: key.clone(),
                kind: ViolationKind::FinalVersionMismatch {
                    expected: 0,
                    actual: Some(actual),
                },
                txns: Vec::new(),
            });
        }
    }
    Ok(AuditVerdict { violations })
}

/// Every committed read-modify-write must have written exactly the version
/// after the one it read.
pub fn check_rmw_atomicity(log: &[OpLogEntry]) -> Result<AuditVerdict, AuditError> {
    let mut violations = Vec::new();
    for e in log
        .iter()
        .filter(|e| e.kind == OpKind::ReadModifyWrite && e.outcome == LogOutcome::Committed)
    {
        let (observed, written) = match (e.observed_version, e.written_version) {
            (Some(o), Some(w)) => (o, w),
            _ => return Err(incomplete(e)),
        };
        if written != observed + 1 {
            violations.push(Violation {
                key: e.key.clone(),
                kind: ViolationKind::NonAtomicRmw { observed, written },
                txns: vec![e.txn_id],
            });
        }
    }
    Ok(AuditVerdict { violations })
}

/// Both checks.
pub fn audit(
    log: &[OpLogEntry],
    final_versions: &BTreeMap<String, u64>,
) -> Result<AuditVerdict, AuditError> {
    Ok(check_version_chain(log, final_versions)?.merge(check_rmw_atomicity(log)?))
}

pub const LOG_CSV_HEADER: &str =
    "txn_id,worker_id,kind,key,observed_version,written_version,outcome,issue_us,finish_us";

pub fn write_log_csv<W: Write>(log: &[OpLogEntry], mut w: W) -> io::Result<()> {
    fn opt(v: Option<u64>) -> String {
        v.map(|v| v.to_string()).unwrap_or_default()
    }
    writeln!(w, "{LOG_CSV_HEADER}")?;
    for e in log {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            e.txn_id.0,
            e.worker_id,
            e.kind,
            e.key,
            opt(e.observed_version),
            opt(e.written_version),
            match e.outcome {
                LogOutcome::Committed => "committed",
                LogOutcome::Aborted => "aborted",
            },
            e.issue_us,
            e.finish_us,
        )?;
    }
    w.flush()
}
