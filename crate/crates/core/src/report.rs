//! Run reports: JSON per run, CSV summary per matrix, and a baseline vs
//! locking comparison per (workload, clients) cell.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::audit::{AuditVerdict, Verdict};
use crate::harness::{MatrixCell, Mode, RunConfig};
use crate::metrics::{LatencyRecorder, LatencyStats};
use crate::workload::WorkloadSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub workload: WorkloadSpec,
    pub clients: usize,
    pub mode: Mode,
    pub lock_timeout_ms: u64,
    pub seed: u64,
    pub ops_per_client: bool,
    pub max_retries: u32,
    pub audit: bool,
}

impl From<&RunConfig> for ConfigEcho {
    fn from(c: &RunConfig) -> Self {
        Self {
            workload: c.effective_workload(),
            clients: c.clients,
            mode: c.mode,
            lock_timeout_ms: c.lock_timeout.as_millis() as u64,
            seed: c.seed,
            ops_per_client: c.ops_per_client,
            max_retries: c.max_retries,
            audit: c.audit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub read: LatencyStats,
    pub update: LatencyStats,
    pub rmw: LatencyStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ConfigEcho,
    pub wall_time_s: f64,
    pub throughput_ops_s: f64,
    pub latency: LatencyReport,
    pub committed: u64,
    pub aborted: u64,
    pub audit_verdict: Verdict,
    #[serde(skip)]
    pub audit_detail: Option<AuditVerdict>,
}

impl RunReport {
    pub fn new(
        config: ConfigEcho,
        wall: Duration,
        latencies: &LatencyRecorder,
        committed: u64,
        aborted: u64,
        audit_verdict: Verdict,
    ) -> Self {
        let wall_time_s = wall.as_secs_f64();
        Self {
            config,
            wall_time_s,
            throughput_ops_s: throughput(committed, wall_time_s),
            latency: LatencyReport {
                read: (&latencies.read).into(),
                update: (&latencies.update).into(),
                rmw: (&latencies.rmw).into(),
            },
            committed,
            aborted,
            audit_verdict,
            audit_detail: None,
        }
    }

    pub fn with_audit_detail(mut self, detail: Option<AuditVerdict>) -> Self {
        self.audit_detail = detail;
        self
    }
}

/// Committed operations per second; zero for a zero-length run.
pub fn throughput(committed: u64, wall_time_s: f64) -> f64 {
    if wall_time_s > 0.0 {
        committed as f64 / wall_time_s
    } else {
        0.0
    }
}

pub fn write_json<W: Write>(report: &RunReport, mut w: W) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut w, report)?;
    writeln!(w)?;
    w.flush()
}

#[derive(Serialize)]
struct CellJson<'a> {
    workload: &'a str,
    clients: usize,
    mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a RunReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

pub fn write_matrix_json<W: Write>(cells: &[MatrixCell], mut w: W) -> io::Result<()> {
    let rows: Vec<_> = cells
        .iter()
        .map(|c| CellJson {
            workload: &c.workload,
            clients: c.clients,
            mode: c.mode,
            report: c.result.as_ref().ok(),
            error: c.result.as_ref().err().map(String::as_str),
        })
        .collect();
    serde_json::to_writer_pretty(&mut w, &rows)?;
    writeln!(w)?;
    w.flush()
}

pub const SUMMARY_CSV_HEADER: &str = "workload,clients,mode,status,throughput_ops_s,\
read_mean_us,read_mean_ms,update_mean_us,update_mean_ms,rmw_mean_us,rmw_mean_ms,\
committed,aborted,audit_verdict";

pub fn write_summary_csv<W: Write>(cells: &[MatrixCell], mut w: W) -> io::Result<()> {
    writeln!(w, "{SUMMARY_CSV_HEADER}")?;
    for c in cells {
        match &c.result {
            Ok(r) => {
                let l = &r.latency;
                writeln!(
                    w,
                    "{},{},{},ok,{:.3},{:.3},{:.6},{:.3},{:.6},{:.3},{:.6},{},{},{}",
                    c.workload,
                    c.clients,
                    c.mode,
                    r.throughput_ops_s,
                    l.read.mean_us,
                    l.read.mean_ms(),
                    l.update.mean_us,
                    l.update.mean_ms(),
                    l.rmw.mean_us,
                    l.rmw.mean_ms(),
                    r.committed,
                    r.aborted,
                    r.audit_verdict,
                )?;
            }
            Err(_) => writeln!(
                w,
                "{},{},{},failed,,,,,,,,,,",
                c.workload, c.clients, c.mode
            )?,
        }
    }
    w.flush()
}

/// Baseline vs locking figures for one (workload, clients) pair, the grid
/// that a before/after comparison of the algorithm is read from.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub workload: String,
    pub clients: usize,
    pub baseline: Option<RunReport>,
    pub locking: Option<RunReport>,
}

pub fn comparison_rows(cells: &[MatrixCell]) -> Vec<ComparisonRow> {
    let mut rows: BTreeMap<(String, usize), ComparisonRow> = BTreeMap::new();
    for c in cells {
        let row = rows
            .entry((c.workload.clone(), c.clients))
            .or_insert_with(|| ComparisonRow {
                workload: c.workload.clone(),
                clients: c.clients,
                baseline: None,
                locking: None,
            });
        let slot = match c.mode {
            Mode::Baseline => &mut row.baseline,
            Mode::Locking => &mut row.locking,
        };
        *slot = c.result.as_ref().ok().cloned();
    }
    rows.into_values().collect()
}

pub const COMPARISON_CSV_HEADER: &str = "workload,clients,\
throughput_baseline,throughput_locking,\
update_mean_ms_baseline,update_mean_ms_locking,\
read_mean_ms_baseline,read_mean_ms_locking,\
rmw_mean_ms_baseline,rmw_mean_ms_locking,\
verdict_baseline,verdict_locking";

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], mut w: W) -> io::Result<()> {
    fn num(r: &Option<RunReport>, f: impl Fn(&RunReport) -> f64) -> String {
        r.as_ref()
            .map(|r| format!("{:.6}", f(r)))
            .unwrap_or_default()
    }
    fn verdict(r: &Option<RunReport>) -> String {
        r.as_ref()
            .map(|r| r.audit_verdict.to_string())
            .unwrap_or_default()
    }
    writeln!(w, "{COMPARISON_CSV_HEADER}")?;
    for row in rows {
        let (b, l) = (&row.baseline, &row.locking);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            row.workload,
            row.clients,
            num(b, |r| r.throughput_ops_s),
            num(l, |r| r.throughput_ops_s),
            num(b, |r| r.latency.update.mean_ms()),
            num(l, |r| r.latency.update.mean_ms()),
            num(b, |r| r.latency.read.mean_ms()),
            num(l, |r| r.latency.read.mean_ms()),
            num(b, |r| r.latency.rmw.mean_ms()),
            num(l, |r| r.latency.rmw.mean_ms()),
            verdict(b),
            verdict(l),
        )?;
    }
    w.flush()
}

/// Plain-text table: one line per (workload, clients), baseline → locking.
pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<4} {:>7}  {:>23}  {:>21}  {:>21}  {:>21}  audit (b/l)",
        "wl", "clients", "throughput ops/s", "update ms", "read ms", "rmw ms"
    );
    let pair = |b: &Option<RunReport>,
                l: &Option<RunReport>,
                f: &dyn Fn(&RunReport) -> f64,
                prec: usize| {
        let show = |r: &Option<RunReport>| {
            r.as_ref()
                .map(|r| format!("{:.*}", prec, f(r)))
                .unwrap_or_else(|| "-".to_string())
        };
        format!("{} -> {}", show(b), show(l))
    };
    for row in rows {
        let (b, l) = (&row.baseline, &row.locking);
        let verdict = |r: &Option<RunReport>| {
            r.as_ref()
                .map(|r| r.audit_verdict.to_string())
                .unwrap_or_else(|| "-".to_string())
        };
        let _ = writeln!(
            out,
            "{:<4} {:>7}  {:>23}  {:>21}  {:>21}  {:>21}  {}/{}",
            row.workload,
            row.clients,
            pair(b, l, &|r| r.throughput_ops_s, 0),
            pair(b, l, &|r| r.latency.update.mean_ms(), 4),
            pair(b, l, &|r| r.latency.read.mean_ms(), 4),
            pair(b, l, &|r| r.latency.rmw.mean_ms(), 4),
            verdict(b),
            verdict(l),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Histogram;
    use crate::workload::BuiltinWorkload;

    fn report(mode: Mode, committed: u64) -> RunReport {
        let config = RunConfig::new(BuiltinWorkload::A.spec(), 5, mode);
        let mut read = Histogram::new();
        read.record(2_000);
        let lat = LatencyRecorder {
            read,
            ..LatencyRecorder::default()
        };
        RunReport::new(
            (&config).into(),
            Duration::from_secs(2),
            &lat,
            committed,
            0,
            Verdict::Consistent,
        )
    }

    #[test]
    fn throughput_identity() {
        let r = report(Mode::Locking, 10);
        assert_eq!(r.throughput_ops_s, 5.0);
        assert_eq!(throughput(3, 0.0), 0.0);
    }

    #[test]
    fn json_has_expected_keys() {
        let mut buf = Vec::new();
        write_json(&report(Mode::Locking, 10), &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        for key in [
            "config",
            "wall_time_s",
            "throughput_ops_s",
            "latency",
            "committed",
            "aborted",
            "audit_verdict",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        for class in ["read", "update", "rmw"] {
            for field in ["count", "mean_us", "min_us", "max_us", "p95_us", "p99_us"] {
                assert!(v["latency"][class].get(field).is_some(), "{class}.{field}");
            }
        }
        assert_eq!(v["audit_verdict"], "consistent");
        assert_eq!(v["config"]["mode"], "locking");
        let back: RunReport = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back.committed, 10);
    }

    #[test]
    fn comparison_pairs_modes() {
        let cells = vec![
            MatrixCell {
                workload: "A".into(),
                clients: 5,
                mode: Mode::Baseline,
                result: Ok(report(Mode::Baseline, 8)),
            },
            MatrixCell {
                workload: "A".into(),
                clients: 5,
                mode: Mode::Locking,
                result: Ok(report(Mode::Locking, 6)),
            },
            MatrixCell {
                workload: "B".into(),
                clients: 1,
                mode: Mode::Locking,
                result: Err("boom".into()),
            },
        ];
        let rows = comparison_rows(&cells);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].baseline.as_ref().unwrap().committed, 8);
        assert_eq!(rows[0].locking.as_ref().unwrap().committed, 6);
        assert!(rows[1].locking.is_none());

        let mut csv = Vec::new();
        write_comparison_csv(&rows, &mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert!(csv
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("A,5,4.000000,3.000000,"));

        let mut summary = Vec::new();
        write_summary_csv(&cells, &mut summary).unwrap();
        let summary = String::from_utf8(summary).unwrap();
        assert_eq!(summary.lines().count(), 4);
        assert!(summary.contains("B,1,locking,failed"));
        assert!(render_comparison(&rows).contains("4 -> 3"));
    }
}
