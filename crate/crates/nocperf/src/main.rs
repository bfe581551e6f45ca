use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;

use nocperf::config::ExperimentConfig;
use nocperf::error::ModelError;
use nocperf::network::{no_burst_baseline, solve_network};
use nocperf::report::{self, ComparisonRow, SweepRow};
use nocperf::sim::run_simulation;
use nocperf::trace::{estimate_burstiness, load_trace, Grouping, DEFAULT_WINDOW};

#[derive(Parser)]
#[command(name = "nocperf", version, about = "Analytic latency models and a cycle-accurate \
    reference simulator for priority-arbitrated NoCs under bursty traffic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the analytic model and report per-flow/per-queue latency.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Run the cycle-accurate simulator.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's simulator seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Analytic vs simulated latency over the sweep grid, with the
    /// burst-blind baseline.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Baseline model; only `no-burst` is defined.
        #[arg(long, default_value = "no-burst")]
        baseline: String,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Analytic latency-vs-rate curves over the sweep grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Estimate per-window injection rate and burst probability from an
    /// injection trace (CSV `cycle,src,dst`).
    EstimateBurst {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: u64,
        #[arg(long, default_value_t = 1.0)]
        service_time: f64,
        /// Estimate per (source, destination) pair instead of per source.
        #[arg(long)]
        per_flow: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("NOCPERF_LOG")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                ModelError::Domain(_) | ModelError::Unclassifiable(_) => 2,
                ModelError::Instability(_) => 3,
                ModelError::NonConvergence { .. } | ModelError::Breakdown(_) => 4,
            })
        }
    }
}

fn run(cli: Cli) -> Result<(), ModelError> {
    match cli.command {
        Command::Analyze { config, out, format } => {
            let cfg = ExperimentConfig::load(&config)?;
            emit_resolved(&cfg, out.as_deref())?;
            let graph = cfg.build_graph(None, None)?;
            let start = Instant::now();
            let solution = solve_network(&graph)?;
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            info!("solved {} in {wall_ms:.3} ms", cfg.topology.label());
            let rep = report::analyze_report(&graph, &solution, wall_ms);
            match format {
                Format::Csv => emit(out.as_deref(), "analyze.csv", &report::analyze_csv(&rep)),
                Format::Json => emit(out.as_deref(), "analyze.json", &report::to_json(&rep)),
            }
        }
        Command::Simulate { config, out, seed, format } => {
            let cfg = ExperimentConfig::load(&config)?;
            emit_resolved(&cfg, out.as_deref())?;
            let graph = cfg.build_graph(None, None)?;
            let report = run_simulation(&graph, &cfg.sim_params(seed))?;
            match format {
                Format::Csv => emit(out.as_deref(), "simulate.csv", &report::simulate_csv(&report)),
                Format::Json => emit(out.as_deref(), "simulate.json", &report::to_json(&report)),
            }
        }
        Command::Compare { config, out, seed, baseline, jobs } => {
            if baseline != "no-burst" {
                return Err(ModelError::Domain(format!("unknown baseline '{baseline}'")));
            }
            let cfg = ExperimentConfig::load(&config)?;
            emit_resolved(&cfg, out.as_deref())?;
            let rows = with_pool(jobs, || {
                cfg.sweep_points()
                    .par_iter()
                    .map(|&(r, pb)| compare_point(&cfg, r, pb, seed))
                    .collect::<Vec<_>>()
            });
            emit(out.as_deref(), "compare.csv", &report::comparison_csv(&rows))
        }
        Command::Sweep { config, out, jobs } => {
            let cfg = ExperimentConfig::load(&config)?;
            emit_resolved(&cfg, out.as_deref())?;
            let rows = with_pool(jobs, || {
                cfg.sweep_points()
                    .par_iter()
                    .map(|&(r, pb)| sweep_point(&cfg, r, pb))
                    .collect::<Vec<_>>()
            });
            emit(out.as_deref(), "sweep.csv", &report::sweep_csv(&rows))
        }
        Command::EstimateBurst { trace, out, window, service_time, per_flow } => {
            let events = load_trace(&trace)?;
            let grouping = if per_flow { Grouping::PerFlow } else { Grouping::PerSource };
            let estimates = estimate_burstiness(&events, service_time, window, grouping)?;
            for e in &estimates {
                if e.flagged {
                    warn!(
                        "window {} source {}: occupancy inversion out of range, reporting 0",
                        e.window, e.source
                    );
                }
            }
            emit(out.as_deref(), "estimates.json", &report::to_json(&estimates))
        }
    }
}

/// Evaluates one comparison grid point. Instability (analytic or
/// simulated saturation) keeps the row with empty values rather than
/// failing the whole table.
fn compare_point(cfg: &ExperimentConfig, r: Option<f64>, pb: Option<f64>, seed: Option<u64>) -> ComparisonRow {
    let (rate, burst_prob) = cfg.effective_point(r, pb);
    let mut row = ComparisonRow {
        topology: cfg.topology.label(),
        burst_prob,
        rate,
        analytic: None,
        simulated: None,
        error_pct: None,
        baseline: None,
        baseline_error_pct: None,
    };
    let graph = match cfg.build_graph(r, pb) {
        Ok(g) => g,
        Err(e) => {
            warn!("compare point rate={rate} pb={burst_prob}: {e}");
            return row;
        }
    };
    match solve_network(&graph) {
        Ok(sol) => row.analytic = Some(sol.mean_latency),
        Err(e) => warn!("analytic at rate={rate} pb={burst_prob}: {e}"),
    }
    match no_burst_baseline(&graph) {
        Ok(sol) => row.baseline = Some(sol.mean_latency),
        Err(e) => warn!("baseline at rate={rate} pb={burst_prob}: {e}"),
    }
    match run_simulation(&graph, &cfg.sim_params(seed)) {
        Ok(rep) => row.simulated = Some(rep.mean_latency),
        Err(e) => warn!("simulation at rate={rate} pb={burst_prob}: {e}"),
    }
    row.compute_errors();
    row
}

fn sweep_point(cfg: &ExperimentConfig, r: Option<f64>, pb: Option<f64>) -> SweepRow {
    let (rate, burst_prob) = cfg.effective_point(r, pb);
    let result = cfg.build_graph(r, pb).and_then(|g| solve_network(&g));
    let (latency, status) = match result {
        Ok(sol) => (Some(sol.mean_latency), "ok".to_string()),
        Err(ModelError::Instability(_)) => (None, "instability".into()),
        Err(ModelError::NonConvergence { .. }) => (None, "non-convergence".into()),
        Err(e) => (None, format!("error: {e}")),
    };
    SweepRow { topology: cfg.topology.label(), burst_prob, rate, latency, status }
}

/// Runs `body` in a dedicated rayon pool when a thread count is given.
/// Results come back in input order either way, so the output is
/// deterministic regardless of scheduling.
fn with_pool<T: Send>(jobs: Option<usize>, body: impl FnOnce() -> T + Send) -> T {
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(body),
        None => body(),
    }
}

/// Echoes the config with defaults filled in, for exact reruns.
fn emit_resolved(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<(), ModelError> {
    if let Some(dir) = out {
        write_file(dir, "resolved_config.json", &report::to_json(cfg))?;
    }
    Ok(())
}

fn emit(out: Option<&Path>, name: &str, content: &str) -> Result<(), ModelError> {
    match out {
        Some(dir) => write_file(dir, name, content),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<(), ModelError> {
    fs::create_dir_all(dir)
        .map_err(|e| ModelError::Domain(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, content)
        .map_err(|e| ModelError::Domain(format!("cannot write {}: {e}", path.display())))?;
    info!("wrote {}", path.display());
    Ok(())
}
