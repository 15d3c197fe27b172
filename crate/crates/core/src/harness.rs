//! Two-phase benchmark driver.
//!
//! The load phase fills an empty store with `record_count` synthesized
//! records. The run phase spawns `clients` worker threads that rendezvous on a
//! barrier and then each issue their share of `operation_count` operations,
//! one transaction per operation, either through the full locking lifecycle
//! or straight against the store (baseline). Workers keep private latency
//! histograms and op logs which are merged after join.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{self, AuditError, LogOutcome, OpLogEntry, Verdict};
use crate::clock::{Clock, SystemClock};
use crate::lockmgr::LockManager;
use crate::metrics::LatencyRecorder;
use crate::report::{self, ConfigEcho, RunReport};
use crate::store::Store;
use crate::txn::{CommitResult, OperationSpec, Outcome, TransactionManager, TxnError};
use crate::workload::{BuiltinWorkload, OpGenerator, WorkloadError, WorkloadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Locking,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Baseline, Mode::Locking];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Locking => "locking",
        })
    }
}

impl FromStr for Mode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(Mode::Baseline),
            "locking" => Ok(Mode::Locking),
            other => Err(HarnessError::InvalidConfig(format!(
                "unknown mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("store is not empty; reset before loading")]
    StoreNotEmpty,
    #[error("store has not been loaded")]
    NotLoaded,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("writing {path}: {source}")]
    ReportWrite {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("worker {worker} failed: {source}")]
    Worker {
        worker: usize,
        #[source]
        source: TxnError,
    },
    #[error(transparent)]
    Audit(#[from] AuditError),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub workload: WorkloadSpec,
    pub clients: usize,
    pub mode: Mode,
    pub lock_timeout: Duration,
    /// Seeds record synthesis and every worker's op stream.
    pub seed: u64,
    /// Give every client the full `operation_count` instead of a share.
    pub ops_per_client: bool,
    /// Retry budget per aborted operation. Off by default.
    pub max_retries: u32,
    pub audit: bool,
    pub report_path: Option<PathBuf>,
    pub audit_log_path: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(workload: WorkloadSpec, clients: usize, mode: Mode) -> Self {
        let seed = workload.seed;
        Self {
            workload,
            clients,
            mode,
            lock_timeout: LockManager::DEFAULT_TIMEOUT,
            seed,
            ops_per_client: false,
            max_retries: 0,
            audit: false,
            report_path: None,
            audit_log_path: None,
        }
    }

    /// Workload F, 15 clients, 10 records, 10,000 operations: every key is hot.
    pub fn hot_key_stress(mode: Mode, seed: u64) -> Self {
        let mut workload = BuiltinWorkload::F.spec();
        workload.record_count = 10;
        workload.operation_count = 10_000;
        let mut config = Self::new(workload, 15, mode).with_seed(seed);
        config.audit = true;
        config
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The workload with the run seed applied.
    pub fn effective_workload(&self) -> WorkloadSpec {
        WorkloadSpec {
            seed: self.seed,
            ..self.workload.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(HarnessError::InvalidConfig(
                "clients must be at least 1".into(),
            ));
        }
        if self.lock_timeout.is_zero() {
            return Err(HarnessError::InvalidConfig(
                "lock timeout must be positive".into(),
            ));
        }
        self.workload.validate()?;
        Ok(())
    }

    /// Operations assigned to each worker; the first takes the remainder.
    pub fn ops_per_worker(&self) -> Vec<u64> {
        let total = self.workload.operation_count;
        let clients = self.clients as u64;
        if self.ops_per_client {
            return vec![total; self.clients];
        }
        let base = total / clients;
        let mut shares = vec![base; self.clients];
        shares[0] += total % clients;
        shares
    }

    pub fn total_ops(&self) -> u64 {
        self.ops_per_worker().iter().sum()
    }
}

#[derive(Default)]
struct WorkerStats {
    latencies: LatencyRecorder,
    committed: u64,
    aborted: u64,
    log: Vec<OpLogEntry>,
}

/// Store plus the clock used for run-phase measurements.
pub struct Bench {
    store: Arc<Store>,
    clock: Arc<dyn Clock>,
}

impl Default for Bench {
    fn default() -> Self {
        Self::new()
    }
}

impl Bench {
    pub fn new() -> Self {
        Self::with_clock(Arc::new(SystemClock::new()))
    }

    pub fn with_clock(clock: Arc<dyn Clock>) -> Self {
        Self {
            store: Arc::new(Store::new()),
            clock,
        }
    }

    pub fn with_store(store: Store) -> Self {
        Self {
            store: Arc::new(store),
            clock: Arc::new(SystemClock::new()),
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn reset(&self) {
        self.store.clear();
    }

    pub fn load_phase(&self, config: &RunConfig) -> Result<()> {
        if !self.store.is_empty() {
            return Err(HarnessError::StoreNotEmpty);
        }
        let workload = config.effective_workload();
        workload.validate()?;
        for index in 0..workload.record_count {
            let (key, fields) = workload.build_record(index)?;
            self.store
                .insert(&key, fields)
                .expect("record keys are distinct and the store was empty");
        }
        Ok(())
    }

    pub fn run_phase(&self, config: &RunConfig) -> Result<RunReport> {
        config.validate()?;
        if self.store.is_empty() {
            return Err(HarnessError::NotLoaded);
        }
        let workload = config.effective_workload();
        let mgr = TransactionManager::new(
            Arc::clone(&self.store),
            Arc::new(LockManager::new(config.lock_timeout)),
        );
        let shares = config.ops_per_worker();
        let barrier = Barrier::new(config.clients + 1);

        let (started, results) = thread::scope(|s| {
            let handles: Vec<_> = shares
                .iter()
                .enumerate()
                .map(|(worker, &ops)| {
                    let (mgr, barrier, workload) = (&mgr, &barrier, &workload);
                    s.spawn(move || {
                        barrier.wait();
                        self.drive_worker(mgr, config, workload, worker, ops)
                    })
                })
                .collect();
            let started = self.clock.now();
            barrier.wait();
            let results: Vec<_> = handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect();
            (started, results)
        });
        let wall = self.clock.now().saturating_sub(started);

        let mut merged = WorkerStats::default();
        for result in results {
            let stats = result?;
            merged.latencies.merge(&stats.latencies);
            merged.committed += stats.committed;
            merged.aborted += stats.aborted;
            merged.log.extend(stats.log);
        }

        let (verdict, detail) = if config.audit {
            let detail = audit::audit(&merged.log, &self.store.versions())?;
            (detail.verdict(), Some(detail))
        } else {
            (Verdict::NotAudited, None)
        };

        let report = RunReport::new(
            ConfigEcho::from(config),
            wall,
            &merged.latencies,
            merged.committed,
            merged.aborted,
            verdict,
        )
        .with_audit_detail(detail);

        if let Some(path) = &config.report_path {
            write_file(path, |f| report::write_json(&report, f))?;
        }
        if let Some(path) = &config.audit_log_path {
            write_file(path, |f| audit::write_log_csv(&merged.log, f))?;
        }
        Ok(report)
    }

    fn drive_worker(
        &self,
        mgr: &TransactionManager,
        config: &RunConfig,
        workload: &WorkloadSpec,
        worker: usize,
        ops: u64,
    ) -> Result<WorkerStats> {
        let mut generator = OpGenerator::new(workload, worker as u64);
        let mut stats = WorkerStats::default();
        for _ in 0..ops {
            let op = generator.next_op();
            let issued = self.clock.now();
            let result = self
                .dispatch(mgr, config, &op)
                .map_err(|source| HarnessError::Worker { worker, source })?;
            let finished = self.clock.now();
            let latency_us = finished.saturating_sub(issued).as_micros() as u64;
            let committed = result.outcome == Outcome::Committed;
            if committed {
                stats.committed += 1;
                stats.latencies.record(op.kind, latency_us);
            } else {
                stats.aborted += 1;
            }
            if config.audit {
                let seen = result.observations.first();
                stats.log.push(OpLogEntry {
                    txn_id: result.txn,
                    worker_id: worker,
                    kind: op.kind,
                    key: op.key.clone(),
                    observed_version: seen.and_then(|o| o.observed_version),
                    written_version: seen.and_then(|o| o.written_version),
                    outcome: if committed {
                        LogOutcome::Committed
                    } else {
                        LogOutcome::Aborted
                    },
                    issue_us: issued.as_micros() as u64,
                    finish_us: finished.as_micros() as u64,
                });
            }
        }
        Ok(stats)
    }

    fn dispatch(
        &self,
        mgr: &TransactionManager,
        config: &RunConfig,
        op: &OperationSpec,
    ) -> Result<CommitResult, TxnError> {
        match config.mode {
            Mode::Baseline => mgr.run_baseline(std::slice::from_ref(op)),
            Mode::Locking => {
                let mut attempt = 0;
                loop {
                    let result = mgr.run(vec![op.clone()])?;
                    if result.outcome == Outcome::Committed || attempt >= config.max_retries {
                        return Ok(result);
                    }
                    attempt += 1;
                }
            }
        }
    }
}

/// The cross product of workloads, client counts and modes.
#[derive(Debug, Clone)]
pub struct MatrixConfig {
    pub workloads: Vec<BuiltinWorkload>,
    pub clients: Vec<usize>,
    pub modes: Vec<Mode>,
    pub record_count: u64,
    pub operation_count: u64,
    pub seed: u64,
    pub lock_timeout: Duration,
    pub ops_per_client: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            workloads: BuiltinWorkload::ALL.to_vec(),
            clients: vec![1, 5, 10, 15],
            modes: Mode::ALL.to_vec(),
            record_count: 10_000,
            operation_count: 10_000,
            seed: 0,
            lock_timeout: LockManager::DEFAULT_TIMEOUT,
            ops_per_client: false,
            out_dir: None,
        }
    }
}

impl MatrixConfig {
    pub fn cells(&self) -> Vec<RunConfig> {
        let mut cells = Vec::new();
        for &w in &self.workloads {
            for &clients in &self.clients {
                for &mode in &self.modes {
                    let mut workload = w.spec();
                    workload.record_count = self.record_count;
                    workload.operation_count = self.operation_count;
                    let mut config = RunConfig::new(workload, clients, mode).with_seed(self.seed);
                    config.lock_timeout = self.lock_timeout;
                    config.ops_per_client = self.ops_per_client;
                    config.audit = true;
                    config.report_path = self
                        .out_dir
                        .as_ref()
                        .map(|dir| dir.join(format!("{w}_{clients}_{mode}.json")));
                    cells.push(config);
                }
            }
        }
        cells
    }
}

#[derive(Debug)]
pub struct MatrixCell {
    pub workload: String,
    pub clients: usize,
    pub mode: Mode,
    pub result: Result<RunReport, String>,
}

impl Bench {
    /// Runs every cell on a freshly reset and reloaded store. A failing cell
    /// is recorded and the matrix moves on.
    pub fn run_matrix(&self, matrix: &MatrixConfig) -> Result<Vec<MatrixCell>> {
        if let Some(dir) = &matrix.out_dir {
            fs::create_dir_all(dir).map_err(|source| HarnessError::ReportWrite {
                path: dir.clone(),
                source,
            })?;
        }
        let cells: Vec<MatrixCell> = matrix
            .cells()
            .into_iter()
            .map(|config| {
                self.reset();
                let result = self
                    .load_phase(&config)
                    .and_then(|()| self.run_phase(&config))
                    .map_err(|e| e.to_string());
                MatrixCell {
                    workload: config.workload.name.clone(),
                    clients: config.clients,
                    mode: config.mode,
                    result,
                }
            })
            .collect();
        if let Some(dir) = &matrix.out_dir {
            write_file(&dir.join("matrix.json"), |f| {
                report::write_matrix_json(&cells, f)
            })?;
            write_file(&dir.join("summary.csv"), |f| {
                report::write_summary_csv(&cells, f)
            })?;
            let rows = report::comparison_rows(&cells);
            write_file(&dir.join("comparison.csv"), |f| {
                report::write_comparison_csv(&rows, f)
            })?;
        }
        Ok(cells)
    }
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut std::io::BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<()> {
    let wrap = |source| HarnessError::ReportWrite {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(wrap)?;
    let mut w = std::io::BufWriter::new(file);
    body(&mut w).map_err(wrap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ScriptedClock;
    use crate::workload::Distribution;

    fn small(workload: BuiltinWorkload, records: u64, ops: u64) -> WorkloadSpec {
        let mut spec = workload.spec();
        spec.record_count = records;
        spec.operation_count = ops;
        spec.field_count = 3;
        spec.field_length = 8;
        spec
    }

    #[test]
    fn load_phase_fills_an_empty_store_once() {
        let bench = Bench::new();
        let config = RunConfig::new(small(BuiltinWorkload::A, 1, 1), 1, Mode::Locking);
        bench.load_phase(&config).unwrap();
        assert_eq!(bench.store().len(), 1);
        assert!(bench.store().contains("user0000000000"));
        assert!(matches!(
            bench.load_phase(&config),
            Err(HarnessError::StoreNotEmpty)
        ));
    }

    #[test]
    fn run_requires_load() {
        let bench = Bench::new();
        let config = RunConfig::new(small(BuiltinWorkload::A, 10, 10), 1, Mode::Locking);
        assert!(matches!(
            bench.run_phase(&config),
            Err(HarnessError::NotLoaded)
        ));
    }

    #[test]
    fn invalid_configs_rejected() {
        let bench = Bench::new();
        let mut config = RunConfig::new(small(BuiltinWorkload::A, 10, 10), 0, Mode::Locking);
        bench.load_phase(&config).unwrap();
        assert!(matches!(
            bench.run_phase(&config),
            Err(HarnessError::InvalidConfig(_))
        ));
        config.clients = 1;
        config.lock_timeout = Duration::ZERO;
        assert!(matches!(
            bench.run_phase(&config),
            Err(HarnessError::InvalidConfig(_))
        ));
        assert!("optimistic".parse::<Mode>().is_err());
    }

    #[test]
    fn shares_split_with_remainder_to_first_worker() {
        let mut config = RunConfig::new(small(BuiltinWorkload::A, 10, 10_003), 5, Mode::Locking);
        assert_eq!(config.ops_per_worker(), vec![2003, 2000, 2000, 2000, 2000]);
        config.ops_per_client = true;
        assert_eq!(config.total_ops(), 50_015);
    }

    #[test]
    fn scripted_clock_gives_exact_throughput() {
        // start at 0; four ops issue/finish at (0,1) (1,2) (2,3) (3,4); end at 4
        let readings = [0, 0, 1, 1, 2, 2, 3, 3, 4, 4].map(Duration::from_secs);
        let bench = Bench::with_clock(Arc::new(ScriptedClock::new(readings)));
        let config = RunConfig::new(small(BuiltinWorkload::A, 4, 4), 1, Mode::Locking);
        bench.load_phase(&config).unwrap();
        let report = bench.run_phase(&config).unwrap();
        assert_eq!(report.wall_time_s, 4.0);
        assert_eq!(report.committed, 4);
        assert_eq!(report.throughput_ops_s, 1.0);
        let lat = &report.latency;
        assert_eq!(lat.read.count + lat.update.count, 4);
        for stats in [&lat.read, &lat.update] {
            if stats.count > 0 {
                assert_eq!(stats.mean_us, 1_000_000.0);
            }
        }
    }

    #[test]
    fn baseline_never_aborts_and_conserves_ops() {
        let bench = Bench::new();
        let config = RunConfig::new(small(BuiltinWorkload::F, 20, 2_000), 4, Mode::Baseline);
        bench.load_phase(&config).unwrap();
        let report = bench.run_phase(&config).unwrap();
        assert_eq!(report.aborted, 0);
        assert_eq!(report.committed, 2_000);
        assert_eq!(report.audit_verdict, Verdict::NotAudited);
    }

    #[test]
    fn reports_and_audit_log_written() {
        let dir = tempfile::tempdir().unwrap();
        let bench = Bench::new();
        let mut config = RunConfig::new(small(BuiltinWorkload::F, 10, 300), 3, Mode::Locking);
        config.audit = true;
        config.report_path = Some(dir.path().join("r.json"));
        config.audit_log_path = Some(dir.path().join("log.csv"));
        bench.load_phase(&config).unwrap();
        let report = bench.run_phase(&config).unwrap();
        assert_eq!(report.audit_verdict, Verdict::Consistent);
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
        assert_eq!(json["committed"], report.committed);
        let log = fs::read_to_string(dir.path().join("log.csv")).unwrap();
        assert_eq!(log.lines().count(), 301);

        config.report_path = Some(dir.path().join("missing-dir").join("r.json"));
        assert!(matches!(
            bench.run_phase(&config),
            Err(HarnessError::ReportWrite { .. })
        ));
    }

    #[test]
    fn uniform_workload_runs() {
        let bench = Bench::new();
        let mut spec = small(BuiltinWorkload::B, 50, 500);
        spec.distribution = Distribution::Uniform;
        let mut config = RunConfig::new(spec, 2, Mode::Locking);
        config.audit = true;
        bench.load_phase(&config).unwrap();
        let report = bench.run_phase(&config).unwrap();
        assert_eq!(report.committed + report.aborted, 500);
        assert_eq!(report.audit_verdict, Verdict::Consistent);
    }

    #[test]
    fn matrix_cell_failures_do_not_stop_the_matrix() {
        let bench = Bench::new();
        let matrix = MatrixConfig {
            workloads: vec![BuiltinWorkload::A],
            clients: vec![0, 2],
            modes: vec![Mode::Locking],
            record_count: 20,
            operation_count: 100,
            ..MatrixConfig::default()
        };
        let cells = bench.run_matrix(&matrix).unwrap();
        assert_eq!(cells.len(), 2);
        assert!(cells[0].result.is_err());
        assert!(cells[1].result.is_ok());
    }
}
