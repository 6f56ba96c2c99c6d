use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use msgen::eval::MetricsReport;
use msgen::pipeline::{self, ExperimentConfig, Stage};

#[derive(Parser)]
#[command(
    name = "msgen",
    version,
    about = "Counterfactual outcome generators under time-varying confounding"
)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory in the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// All stages in order.
    Run,
    Simulate,
    FitPropensity,
    Train,
    Generate {
        /// Samples per combination; defaults to eval.generated_samples.
        #[arg(long)]
        n: Option<usize>,
    },
    Evaluate,
    /// Merge the metrics of several run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, String> {
    let path = cli
        .config
        .as_ref()
        .ok_or("--config is required for this command")?;
    let mut cfg = ExperimentConfig::load(path).map_err(|e| format!("config: {e}"))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn print_summary(report: &MetricsReport) {
    println!(
        "{:<16} {:<10} {:>10} {:>10} {:>7}",
        "method", "metric", "avg", "worst", "combos"
    );
    for a in &report.aggregates {
        println!(
            "{:<16} {:<10} {:>10.4} {:>10.4} {:>7}",
            a.method, a.metric, a.avg, a.worst, a.n_combos
        );
    }
}

fn run(cli: &Cli) -> Result<(), String> {
    let report = match &cli.command {
        Command::Report { runs } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("report"));
            Some(pipeline::report(runs, &out).map_err(|e| format!("report: {e}"))?)
        }
        Command::Run => {
            Some(pipeline::run_pipeline(&load_config(cli)?).map_err(|e| e.to_string())?)
        }
        Command::Generate { n } => {
            let cfg = load_config(cli)?;
            pipeline::generate(&cfg, *n)
                .map_err(|e| e.in_stage(Stage::Generate.name()).to_string())?;
            None
        }
        cmd => {
            let stage = match cmd {
                Command::Simulate => Stage::Simulate,
                Command::FitPropensity => Stage::FitPropensity,
                Command::Train => Stage::Train,
                _ => Stage::Evaluate,
            };
            pipeline::run_stage(stage, &load_config(cli)?).map_err(|e| e.to_string())?
        }
    };
    if let Some(r) = report {
        print_summary(&r);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
