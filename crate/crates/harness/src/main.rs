use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use dataval_harness::{
    emit_svg, parse_config, read_report, run_experiment, write_csv, ExperimentConfig, TaskKind,
};

#[derive(Parser)]
#[command(name = "dataval", version, about = "Run data valuation experiments")]
struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute values and run every task listed in the config.
    Value {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds to run (override `seeds`).
        #[arg(long = "seed", num_args = 1..)]
        seeds: Vec<u64>,
    },
    /// Noisy data detection only.
    Detect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Point removal or addition curves only.
    Curve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        direction: Direction,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render SVG charts from a results directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Removal,
    Addition,
}

fn load(path: &Path) -> anyhow::Result<ExperimentConfig> {
    parse_config(path).with_context(|| format!("reading {}", path.display()))
}

/// Runs the experiment and writes its CSV files; returns whether any cell
/// failed.
fn execute(cfg: ExperimentConfig, out: Option<PathBuf>) -> anyhow::Result<bool> {
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    let report = run_experiment(&cfg).context("running experiment")?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for e in &report.errors {
        eprintln!(
            "error: {} seed {} {}: {}",
            e.valuator, e.seed, e.task, e.message
        );
    }
    let files = write_csv(&report, &dir).context("writing results")?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(!report.errors.is_empty())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::Value { config, out, seeds } => {
            let mut cfg = load(&config)?;
            if !seeds.is_empty() {
                cfg.seeds = seeds;
            }
            execute(cfg, out)
        }
        Command::Detect { config, out } => {
            execute(load(&config)?.with_tasks(vec![TaskKind::Detect]), out)
        }
        Command::Curve {
            config,
            direction,
            out,
        } => {
            let task = match direction {
                Direction::Removal => TaskKind::Removal,
                Direction::Addition => TaskKind::Addition,
            };
            execute(load(&config)?.with_tasks(vec![task]), out)
        }
        Command::Report { input } => {
            let report = read_report(&input)
                .with_context(|| format!("reading results in {}", input.display()))?;
            let svg = emit_svg(&report, &input).context("writing charts")?;
            for n in &svg.notices {
                eprintln!("note: {n}");
            }
            for f in &svg.files {
                println!("{}", f.display());
            }
            Ok(!report.errors.is_empty())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
