use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use hbtm::bench::{
    default_start, estimate_heart_rate, parse_report_csv, periods_available, read_report_json, replay, run_experiment,
    scale_to_duration, write_report_files, BenchError, ExperimentConfig, MetricsReport,
};
use hbtm::persist::read_log;
use hbtm::workloads::{InjectionSpec, WorkloadKind, WorkloadSpec};
use hbtm::{MonitorConfig, MonitorMode, StaticLiveness};

const EXIT_CONFIG: u8 = 2;
const EXIT_WORKLOAD: u8 = 3;

#[derive(Parser)]
#[command(name = "hbtm", version, about = "Heartbeat thread-monitoring experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kernel {
    Pi,
    Jacobi,
    Matmul,
}

#[derive(Subcommand)]
enum Command {
    /// Measure overhead and detection latency across heart-rate targets.
    Run(RunArgs),
    /// Run the detectors over a persisted heartbeat log.
    Replay(ReplayArgs),
    /// Re-emit the CSV/JSON files of an earlier run.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    workload: Kernel,
    #[arg(long, default_value = "centralized")]
    mode: MonitorMode,
    #[arg(long, default_value_t = 4)]
    threads: u32,
    /// Target heart rates in beats/s per thread.
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
    rate: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    reps: u32,
    /// `<behavior>@<thread>:<ms>[+<duration_ms>]`, repeatable.
    #[arg(long)]
    inject: Vec<InjectionSpec>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random extra delay per repetition for millisecond injections.
    #[arg(long, default_value_t = 0)]
    jitter_ms: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pi iterations per thread, Jacobi cycles, or MatMul dimension.
    #[arg(long)]
    size: Option<u64>,
    /// Jacobi grid width.
    #[arg(long)]
    grid: Option<usize>,
    /// Resize the kernel so one uninstrumented run takes about this long.
    #[arg(long, conflicts_with = "size")]
    duration_ms: Option<f64>,
    #[arg(long, default_value_t = hbtm::rate::DEFAULT_THRESHOLD_FRACTION)]
    threshold: f64,
    #[arg(long, default_value_t = hbtm::rate::DEFAULT_WINDOW_ITERATION)]
    window: u64,
}

#[derive(clap::Args)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    mode: MonitorMode,
    /// Heart rate that sets the detection period; estimated from the log if omitted.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    periods: Option<u64>,
    /// Threads to treat as no longer alive.
    #[arg(long, value_delimiter = ',')]
    dead: Vec<u32>,
}

fn workload_kind(args: &RunArgs) -> WorkloadKind {
    let name = match args.workload {
        Kernel::Pi => "pi",
        Kernel::Jacobi => "jacobi",
        Kernel::Matmul => "matmul",
    };
    let kind = WorkloadKind::desk_default(name).expect("known kernel");
    match (kind, args.size) {
        (WorkloadKind::Pi { .. }, Some(n)) => WorkloadKind::Pi { iterations: n },
        (WorkloadKind::Jacobi { grid, .. }, Some(n)) => WorkloadKind::Jacobi { grid: args.grid.unwrap_or(grid), cycles: n },
        (WorkloadKind::Jacobi { grid, cycles }, None) => WorkloadKind::Jacobi { grid: args.grid.unwrap_or(grid), cycles },
        (WorkloadKind::MatMul { .. }, Some(n)) => WorkloadKind::MatMul { dim: n as usize },
        (k, None) => k,
    }
}

fn run(args: RunArgs) -> Result<(), BenchError> {
    let mut spec = WorkloadSpec::new(workload_kind(&args), args.threads);
    spec.validate(Some(args.mode))?;
    if let Some(ms) = args.duration_ms {
        spec = scale_to_duration(&spec, ms)?;
    }
    let mut config = ExperimentConfig::new(spec, args.mode);
    config.rates = args.rate;
    config.repetitions = args.reps;
    config.injections = args.inject;
    config.seed = args.seed;
    config.jitter_ms = args.jitter_ms;
    config.out_dir = args.out;
    config.threshold_fraction = args.threshold;
    config.window_iteration = args.window;
    let report = run_experiment(&config)?;
    print_report(&report);
    if let Some(dir) = &config.out_dir {
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn print_report(report: &MetricsReport) {
    println!("{} on {} threads, {} mode", report.workload.kind.name(), report.workload.threads, report.mode);
    println!("{:>10} {:>10} {:>10} {:>10} {:>10} {:>10}", "rate", "achieved", "E_alpha", "E_beta", "overhead", "max_q");
    for r in &report.rows {
        println!(
            "{:>10} {:>10.1} {:>10.4} {:>10.4} {:>9.2}% {:>10}",
            r.target_rate,
            r.achieved_rate,
            r.e_alpha_s,
            r.e_beta_s,
            r.overhead * 100.0,
            r.queries.max
        );
        for (behavior, samples) in &r.latency_ms {
            let shown = r.median_latency(*behavior).map_or("not detected".into(), |m| format!("{m:.3} ms"));
            println!("{:>12} latency {shown} (median of {})", behavior, samples.len());
        }
    }
}

fn replay_log(args: ReplayArgs) -> Result<(), BenchError> {
    let log = read_log(&args.log)?;
    let rate = match args.rate.or_else(|| estimate_heart_rate(&log.table)) {
        Some(r) => r,
        None => return Err(BenchError::Config("log has too few heartbeats to estimate a heart rate".into())),
    };
    let config = MonitorConfig::for_heart_rate(args.mode, rate);
    let start = default_start(&log.table, &config);
    let periods = args.periods.unwrap_or_else(|| periods_available(&log.table, &config, start));
    let liveness = Arc::new(StaticLiveness::dead(args.dead.iter().copied()));
    let result = replay(&log.table, config, liveness, start, periods)?;
    if let Some(label) = &log.label {
        println!("log: {label}");
    }
    println!("mode {}, {periods} periods of {} ms", result.mode, config.detection_period_ms);
    for s in &log.table.sequences {
        let last = result.events.iter().rev().find(|e| e.subject_id == s.thread_id);
        let state = last.map_or("unobserved".to_string(), |e| e.state.to_string());
        println!("thread {}: {state}", s.thread_id);
    }
    println!("queries total {} max {}", result.queries.total, result.queries.max);
    for (who, n) in &result.queries.per_detector {
        println!("  {who}: {n}");
    }
    Ok(())
}

fn report(dir: &Path) -> Result<(), BenchError> {
    let json = dir.join("report.json");
    let report = if json.exists() {
        read_report_json(&json)?
    } else {
        parse_report_csv(&std::fs::read_to_string(dir.join("report.csv"))?)?
    };
    write_report_files(&report, dir)?;
    print_report(&report);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Replay(args) => replay_log(args),
        Command::Report { dir } => report(&dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() {
                EXIT_CONFIG
            } else if e.is_workload_failure() {
                EXIT_WORKLOAD
            } else {
                1
            })
        }
    }
}
