//! Experiment runner CLI.
//!
//! One verb per experiment family: `sample` (baseline vs guided),
//! `ablate-renoise`, `sweep-lambda`, `compare-steps`, and `export` for
//! reshaping result tables into plot data. Exit codes: 0 on success, 2 on
//! config/validation errors, 3 on runtime failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use distill_lab::harness::{
    self, export_plotdata, parse_config, read_table_csv, run_ablation_renoise, run_experiment,
    sweep_lambda, write_metrics_json, write_samples_csv, write_status, write_table_csv,
    write_timings_csv, write_trajectories_csv, ExperimentConfig, ExperimentOutputs, PlotKind,
};

#[derive(Parser)]
#[command(name = "distill-lab", version, about = "Teacher-guided diffusion sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Only run variants whose label matches.
    #[arg(long)]
    variant: Option<String>,
    /// Trajectories to export per variant.
    #[arg(long, default_value_t = 16)]
    trajectories: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment: baseline and guided variants against
    /// the fine-step teacher reference.
    Sample(RunArgs),
    /// Renoising-schedule ablation (baseline, random, same, decreasing).
    AblateRenoise(RunArgs),
    /// Guidance-scale sweep.
    SweepLambda {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated guidance scales.
        #[arg(long, default_value = "0.02,0.1")]
        lambdas: String,
    },
    /// Step-count comparison (m+1 guided vs m+1 and m+2 baselines).
    CompareSteps(RunArgs),
    /// Reshape a result table into plot data.
    Export {
        /// Plot kind: convergence | ablation | sweep.
        #[arg(long)]
        kind: String,
        /// Path to a table.csv produced by a run.
        #[arg(long)]
        table: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

enum CliError {
    Validation(String),
    Runtime(String),
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Sample(args) => run_verb(args, |config, outputs| run_experiment(config, outputs)),
        Command::AblateRenoise(args) => run_verb(args, |config, outputs| run_ablation_renoise(config, outputs)),
        Command::SweepLambda { run, lambdas } => {
            let lambdas = parse_lambdas(&lambdas)?;
            run_verb(run, move |config, outputs| sweep_lambda(config, &lambdas, outputs))
        }
        Command::CompareSteps(args) => run_verb(args, |config, outputs| harness::compare_steps(config, outputs)),
        Command::Export { kind, table, out } => {
            let kind: PlotKind = kind.parse().map_err(CliError::Validation)?;
            let table = read_table_csv(&table).map_err(|e| CliError::Validation(e.to_string()))?;
            let path = export_plotdata(&table, kind, &out).map_err(|e| CliError::Runtime(e.to_string()))?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn parse_lambdas(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Validation(format!("bad lambda `{s}`: {e}")))
        })
        .collect()
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.config.display())))?;
    let mut config = parse_config(&text).map_err(|e| CliError::Validation(e.to_string()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn output_dir(args: &RunArgs, config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = args
        .out
        .clone()
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .ok_or_else(|| CliError::Validation("no output directory: pass --out or set `output`".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn run_verb(
    args: RunArgs,
    body: impl FnOnce(&ExperimentConfig, &mut ExperimentOutputs) -> Result<(), harness::RunError> + Send,
) -> Result<(), CliError> {
    let config = load_config(&args)?;
    let dir = output_dir(&args, &config)?;
    let mut outputs = ExperimentOutputs::default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let result = pool.install(|| body(&config, &mut outputs));
    // Flush whatever completed; a failure leaves a valid partial table plus
    // a status marker.
    flush_outputs(&config, &args, &dir, &outputs).map_err(|e| CliError::Runtime(e.to_string()))?;
    match result {
        Ok(()) => {
            write_status(&dir.join("run_status.json"), None).map_err(|e| CliError::Runtime(e.to_string()))?;
            println!("wrote {}", dir.display());
            for v in &outputs.variants {
                println!(
                    "  {}: sw={:.6} teacher_rounds={} student_rounds={}",
                    v.label, v.report.sliced_wasserstein, v.teacher_rounds, v.student_rounds
                );
            }
            Ok(())
        }
        Err(e) => {
            write_status(&dir.join("run_status.json"), Some(&e.to_string()))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            match e {
                harness::RunError::Config(inner) => Err(CliError::Validation(inner.to_string())),
                harness::RunError::Invalid(msg) => Err(CliError::Validation(msg)),
                other => Err(CliError::Runtime(other.to_string())),
            }
        }
    }
}

fn flush_outputs(
    config: &ExperimentConfig,
    args: &RunArgs,
    dir: &Path,
    outputs: &ExperimentOutputs,
) -> Result<(), harness::RunError> {
    let io = |e: std::io::Error| harness::RunError::Invalid(e.to_string());
    std::fs::write(dir.join("config.resolved.toml"), config.to_toml().map_err(harness::RunError::Config)?)
        .map_err(io)?;
    write_table_csv(&outputs.table, &dir.join("table.csv")).map_err(io)?;
    write_timings_csv(&outputs.table, &dir.join("timings.csv")).map_err(io)?;
    let reports: Vec<(String, usize, distill_lab::metrics::MetricReport)> = outputs
        .variants
        .iter()
        .filter(|v| args.variant.as_deref().map_or(true, |want| v.label == want))
        .map(|v| (v.label.clone(), v.samples.len(), v.report.clone()))
        .collect();
    write_metrics_json(&outputs.config_hash, config.seed, &reports, &dir.join("metrics.json")).map_err(io)?;
    for v in &outputs.variants {
        if let Some(want) = args.variant.as_deref() {
            if v.label != want {
                continue;
            }
        }
        let safe = v.label.replace([' ', '/'], "_");
        write_samples_csv(&v.samples, &dir.join(format!("samples_{safe}.csv"))).map_err(io)?;
        if args.trajectories > 0 {
            let indices: Vec<u64> = (0..args.trajectories.min(v.samples.len()) as u64).collect();
            let spec = harness::VariantSpec {
                label: v.label.clone(),
                guidance: guidance_of(config, &v.label),
                m_steps_override: m_override_of(config, &v.label),
            };
            let trajectories = harness::sample_trajectories(config, &spec, &indices)?;
            write_trajectories_csv(&trajectories, v.samples.dim(), &dir.join(format!("traj_{safe}.csv")))
                .map_err(io)?;
        }
    }
    if let Some(reference) = &outputs.reference {
        write_samples_csv(reference, &dir.join("samples_reference.csv")).map_err(io)?;
    }
    if let Some(calibration) = &outputs.calibration {
        write_samples_csv(calibration, &dir.join("samples_calibration.csv")).map_err(io)?;
    }
    Ok(())
}

/// Reconstruct the guidance config a labeled variant ran with, for
/// trajectory replay.
fn guidance_of(config: &ExperimentConfig, label: &str) -> Option<distill_lab::GuidanceConfig> {
    use distill_lab::RenoiseSchedule;
    match label {
        "baseline" | "lambda=0" => None,
        "guided" => Some(config.guidance),
        "decreasing" => Some(distill_lab::GuidanceConfig { renoise: RenoiseSchedule::Decreasing, ..config.guidance }),
        "same" => Some(distill_lab::GuidanceConfig { renoise: RenoiseSchedule::Same, ..config.guidance }),
        "random" => Some(distill_lab::GuidanceConfig { renoise: RenoiseSchedule::Random, ..config.guidance }),
        other => {
            if let Some(lambda) = other.strip_prefix("lambda=").and_then(|v| v.parse::<f64>().ok()) {
                Some(distill_lab::GuidanceConfig { lambda, ..config.guidance })
            } else if other.contains('+') {
                Some(distill_lab::GuidanceConfig { k: 1, ..config.guidance })
            } else {
                None
            }
        }
    }
}

fn m_override_of(config: &ExperimentConfig, label: &str) -> Option<usize> {
    let m = label
        .strip_suffix(" step")
        .or_else(|| label.split('+').next())
        .and_then(|v| v.parse::<usize>().ok())?;
    if m == config.grid.m_steps {
        None
    } else {
        Some(m)
    }
}
