use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use embcycle::commands;
use embcycle::config::{parse_config_with_seed, RunConfig};
use embcycle::io::read_text;
use embcycle::pipeline::ModeKind;
use embcycle::report::REPORT_FILE;
use embcycle::Result;

/// Embedding-evolution lab: realtime vs. batch trained FFM embeddings.
#[derive(Parser)]
#[command(name = "embcycle", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training mode end to end and write logs, manifest and report.
    Simulate(RunArgs),
    /// Train realtime and batch on one world and write a joint report.
    Compare(RunArgs),
    /// Recompute the report of a run directory from its archived logs.
    Metrics {
        /// Run directory holding manifest.json.
        logs: PathBuf,
        /// Where to write report.json and the CSVs (default: the run directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the SVG figures of a report.
    Plot {
        /// A report.json file, or a directory containing one.
        report: PathBuf,
        /// Where to write the figures (default: next to the report).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Training mode (overrides `mode`; ignored by compare).
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Realtime,
    Batch,
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let text = match &args.config {
        Some(p) => read_text(p)?,
        None => String::new(),
    };
    let mut cfg = parse_config_with_seed(&text, args.seed)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(m) = args.mode {
        cfg.mode = match m {
            Mode::Realtime => ModeKind::Realtime,
            Mode::Batch => ModeKind::Batch,
        };
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = load_config(&args)?;
            commands::simulate(&cfg)?;
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::Compare(args) => {
            let cfg = load_config(&args)?;
            let report = commands::compare(&cfg)?;
            if let Some(c) = &report.comparison {
                println!(
                    "median maturity crossing: realtime {:?}, batch {:?}",
                    c.median_crossing.realtime, c.median_crossing.batch
                );
            }
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::Metrics { logs, out } => {
            let out = out.unwrap_or_else(|| logs.clone());
            commands::metrics(&logs, &out)?;
            println!("wrote {}", out.join(REPORT_FILE).display());
        }
        Command::Plot { report, out } => {
            let path = if report.is_dir() {
                report.join(REPORT_FILE)
            } else {
                report
            };
            let out = out.unwrap_or_else(|| path.parent().map(PathBuf::from).unwrap_or_default());
            commands::plot(&path, &out)?;
            println!("wrote figures to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EMBCYCLE_LOG_LEVEL", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors are validation failures.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
