use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use doclock::harness::{Bench, MatrixConfig, Mode, RunConfig};
use doclock::report;
use doclock::workload::{BuiltinWorkload, WorkloadSpec};
use doclock::Store;

#[derive(Parser)]
#[command(
    name = "bench",
    about = "Load/run benchmark for the locking document store"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Populate a store and optionally dump it to a file.
    Load(LoadArgs),
    /// Load (or read a dump), then run one workload and write a JSON report.
    Run(RunArgs),
    /// Run every workload x clients x mode combination.
    Matrix(MatrixArgs),
}

#[derive(Args)]
struct WorkloadArgs {
    /// YCSB-style properties file overriding the workload defaults.
    #[arg(long)]
    props: Option<PathBuf>,
    #[arg(long, default_value = "A")]
    workload: BuiltinWorkload,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl WorkloadArgs {
    fn spec(&self) -> Result<WorkloadSpec> {
        let mut spec = self.workload.spec();
        if let Some(path) = &self.props {
            spec.apply_properties_file(path)?;
        }
        spec.seed = self.seed;
        Ok(spec)
    }
}

#[derive(Args)]
struct LoadArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[arg(long, default_value_t = 1)]
    clients: usize,
    #[arg(long, default_value = "locking")]
    mode: Mode,
    #[arg(long, default_value_t = 100)]
    lock_timeout_ms: u64,
    /// Give each client the full operation count instead of a share.
    #[arg(long)]
    ops_per_client: bool,
    #[arg(long, default_value_t = 0)]
    retries: u32,
    /// Check version chains and RMW atomicity after the run.
    #[arg(long)]
    audit: bool,
    /// Write the merged operation log as CSV (implies --audit).
    #[arg(long)]
    audit_log: Option<PathBuf>,
    /// Start from a `bench load --dump` file instead of loading.
    #[arg(long)]
    from_dump: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct MatrixArgs {
    #[arg(long, value_delimiter = ',', default_value = "A,B,F")]
    workloads: Vec<BuiltinWorkload>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,15")]
    clients: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "baseline,locking")]
    modes: Vec<Mode>,
    #[arg(long, default_value_t = 10_000)]
    records: u64,
    #[arg(long, default_value_t = 10_000)]
    operations: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    lock_timeout_ms: u64,
    #[arg(long)]
    ops_per_client: bool,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Load(args) => load(args),
        Command::Run(args) => run(args),
        Command::Matrix(args) => matrix(args),
    }
}

fn load(args: LoadArgs) -> Result<()> {
    let spec = args.workload.spec()?;
    let config = RunConfig::new(spec, 1, Mode::Baseline);
    let bench = Bench::new();
    let started = Instant::now();
    bench.load_phase(&config)?;
    println!(
        "loaded {} records in {:.3}s",
        bench.store().len(),
        started.elapsed().as_secs_f64()
    );
    if let Some(path) = args.dump {
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        bench.store().dump(BufWriter::new(file))?;
        println!("dumped to {}", path.display());
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    if args.lock_timeout_ms == 0 {
        bail!("--lock-timeout-ms must be positive");
    }
    let spec = args.workload.spec()?;
    let mut config = RunConfig::new(spec, args.clients, args.mode);
    config.lock_timeout = Duration::from_millis(args.lock_timeout_ms);
    config.ops_per_client = args.ops_per_client;
    config.max_retries = args.retries;
    config.audit = args.audit || args.audit_log.is_some();
    config.audit_log_path = args.audit_log;
    config.report_path = Some(args.report.clone());

    let bench = match &args.from_dump {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            Bench::with_store(Store::load_dump(BufReader::new(file))?)
        }
        None => {
            let bench = Bench::new();
            bench.load_phase(&config)?;
            bench
        }
    };
    let r = bench.run_phase(&config)?;
    println!(
        "workload {} clients {} mode {}: {:.1} ops/s over {:.3}s, committed {}, aborted {}, audit {}",
        config.workload.name,
        config.clients,
        config.mode,
        r.throughput_ops_s,
        r.wall_time_s,
        r.committed,
        r.aborted,
        r.audit_verdict
    );
    println!("report written to {}", args.report.display());
    Ok(())
}

fn matrix(args: MatrixArgs) -> Result<()> {
    let matrix = MatrixConfig {
        workloads: args.workloads,
        clients: args.clients,
        modes: args.modes,
        record_count: args.records,
        operation_count: args.operations,
        seed: args.seed,
        lock_timeout: Duration::from_millis(args.lock_timeout_ms),
        ops_per_client: args.ops_per_client,
        out_dir: Some(args.out.clone()),
    };
    let started = Instant::now();
    let cells = Bench::new().run_matrix(&matrix)?;
    print!(
        "{}",
        report::render_comparison(&report::comparison_rows(&cells))
    );
    let failed: Vec<_> = cells.iter().filter(|c| c.result.is_err()).collect();
    for c in &failed {
        eprintln!(
            "cell {} x {} x {} failed: {}",
            c.workload,
            c.clients,
            c.mode,
            c.result.as_ref().unwrap_err()
        );
    }
    println!(
        "{} runs in {:.1}s, reports in {}",
        cells.len(),
        started.elapsed().as_secs_f64(),
        args.out.display()
    );
    if !failed.is_empty() {
        bail!("{} of {} cells failed", failed.len(), cells.len());
    }
    Ok(())
}
