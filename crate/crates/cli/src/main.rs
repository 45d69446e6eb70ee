use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use scramble_cli::acceptance::{self, CRITERIA};
use scramble_cli::config::{ExperimentConfig, EXPERIMENT_KINDS, OUTPUT_ROOT_ENV};
use scramble_cli::{experiments, output_root};

const EXIT_POINT_FAILURE: u8 = 1;
const EXIT_CONFIG_ERROR: u8 = 2;

#[derive(Parser)]
#[command(
    name = "scramble",
    version,
    about = "Run scrambling experiments from TOML configs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep point of a config and write results below the output
    /// root (override with SCRAMBLE_OUTPUT_ROOT).
    Run { config: PathBuf },
    /// Run the acceptance checks and print a pass/fail table.
    Validate {
        /// Criterion ids to run (default: all).
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u32>,
    },
    /// List the experiment kinds a config may name.
    ListExperiments,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config } => run(config),
        Command::Validate { criteria } => validate(criteria),
        Command::ListExperiments => {
            for (kind, about) in EXPERIMENT_KINDS {
                println!("{kind:<18} {about}");
            }
            ExitCode::SUCCESS
        }
    }
}

fn run(path: PathBuf) -> ExitCode {
    let config = match ExperimentConfig::load(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG_ERROR);
        }
    };
    let root = output_root();
    let summary = match experiments::run(&config, &root) {
        Ok(s) => s,
        Err(e) => {
            eprintln!(
                "cannot write results under {} ({OUTPUT_ROOT_ENV}): {e}",
                root.display()
            );
            return ExitCode::from(EXIT_POINT_FAILURE);
        }
    };
    for p in &summary.points {
        match &p.error {
            None => println!("ok    {} ({} records)", p.point, p.n_records),
            Some(e) => println!("FAIL  {}: {e}", p.point),
        }
    }
    println!("wrote {}", summary.dir.display());
    if summary.failed() > 0 {
        eprintln!(
            "{} of {} points failed",
            summary.failed(),
            summary.points.len()
        );
        ExitCode::from(EXIT_POINT_FAILURE)
    } else {
        ExitCode::SUCCESS
    }
}

fn validate(ids: Vec<u32>) -> ExitCode {
    let ids: Vec<u32> = if ids.is_empty() {
        CRITERIA.iter().map(|c| c.id).collect()
    } else {
        ids
    };
    if let Some(bad) = ids.iter().find(|&&i| acceptance::criterion(i).is_none()) {
        eprintln!(
            "config error: unknown criterion {bad} (known: 1..={})",
            CRITERIA.len()
        );
        return ExitCode::from(EXIT_CONFIG_ERROR);
    }
    let mut failed = 0;
    for id in ids {
        let start = Instant::now();
        let o = acceptance::evaluate(id);
        let title = acceptance::criterion(id).map_or("", |c| c.title);
        let mark = if o.passed { "PASS" } else { "FAIL" };
        println!(
            "{id:>2}  {mark}  {title:<30} {:>6.1}s  {}",
            start.elapsed().as_secs_f64(),
            o.detail
        );
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        ExitCode::from(EXIT_POINT_FAILURE)
    } else {
        ExitCode::SUCCESS
    }
}
