use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dtsm::cli::{export_results, normalize_stages, parse_config, run_pipeline, RunConfig, Stage, StageStatus};
use dtsm::Error;

#[derive(Parser)]
#[command(
    name = "dtsm",
    version,
    about = "Stable manifolds, optimal cost and feedback for discrete-time optimal control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the standing assumptions on the problem.
    Validate(RunArgs),
    /// Riccati, pencil spectrum, manifold and DPE recovery (or the config's stages).
    Solve(RunArgs),
    /// Riccati solution and pencil eigenstructure.
    Eig(RunArgs),
    /// Value-iteration oracle.
    Oracle(RunArgs),
    /// Every stage, including the oracle.
    Check(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Output directory; defaults to `outputs.dir` from the config. Nothing is written if neither is set.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 1 gives fully deterministic reductions.
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated stage list overriding the subcommand's default.
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<String>>,
}

fn default_stages(command: &Command, cfg: &RunConfig) -> Vec<Stage> {
    use Stage::*;
    match command {
        Command::Validate(_) => vec![Validate],
        Command::Solve(_) => cfg.stages.clone(),
        Command::Eig(_) => vec![Validate, Riccati, Spectral],
        Command::Oracle(_) => vec![Validate, Riccati, Oracle],
        Command::Check(_) => Stage::ALL.to_vec(),
    }
}

fn run(command: Command) -> Result<i32, Error> {
    let args = match &command {
        Command::Validate(a) | Command::Solve(a) | Command::Eig(a) | Command::Oracle(a) | Command::Check(a) => a,
    };
    let mut cfg = parse_config(&args.config)?;
    cfg.stages = match &args.stages {
        Some(list) => list.iter().map(|s| Stage::parse(s)).collect::<Result<_, _>>()?,
        None => default_stages(&command, &cfg),
    };
    cfg.stages = normalize_stages(&cfg.stages)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let output = pool.install(|| run_pipeline(&cfg))?;
    let report = &output.report;
    for stage in &report.stages {
        let status = match stage.status {
            StageStatus::Passed => "passed",
            StageStatus::Failed => "FAILED",
            StageStatus::Skipped => "skipped",
            StageStatus::Error => "ERROR",
        };
        match &stage.message {
            Some(msg) => println!("stage {:<9} {status}: {msg}", stage.stage.name()),
            None => println!("stage {:<9} {status}", stage.stage.name()),
        }
    }
    for check in &report.checks {
        println!(
            "  {} {:<32} {:>12.4e}  (limit {:.1e})",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.value,
            check.threshold
        );
    }
    if let Some(dir) = args.out.clone().or_else(|| cfg.outputs.dir.clone()) {
        pool.install(|| export_results(&output, &dir))?;
        println!("results written to {}", dir.display());
    }
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
