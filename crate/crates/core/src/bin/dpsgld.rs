//! Command-line front end: `run`, `compare` and `figure-data`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpsgld::experiment::{self, DatasetChoice, ExperimentConfig, ReportSummary};
use dpsgld::Error;

#[derive(Parser)]
#[command(version, about = "Differentially private SGD and SGLD with calibration metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Train on a shuffled subset of this many MNIST examples.
        #[arg(long)]
        subset: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a comparison table of several `report.csv` files.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Regenerate reliability and histogram data from a run directory.
    FigureData {
        #[arg(long)]
        report: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            seed,
            subset,
            out,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(n) = subset {
                match &mut cfg.dataset {
                    DatasetChoice::Mnist { subset, .. } => *subset = Some(n),
                    DatasetChoice::Blobs { .. } => return Err(Error::Config("--subset only applies to mnist".into())),
                }
            }
            cfg.out_dir = Some(out.or(cfg.out_dir).unwrap_or_else(|| PathBuf::from("out")));
            let report = experiment::run(&cfg)?;
            let s = &report.summary;
            println!(
                "{} on {}: accuracy {:.4}, ECE {:.4}, epsilon {}, {} steps{}",
                s.procedure,
                s.dataset,
                s.accuracy,
                s.ece,
                s.epsilon,
                s.steps,
                if s.halted_by_budget { " (budget reached)" } else { "" }
            );
            if let Some(paths) = &report.outputs {
                println!(
                    "reports in {}",
                    paths.report.parent().unwrap_or(&paths.report).display()
                );
            }
        }
        Command::Compare { reports } => {
            let summaries = reports
                .iter()
                .map(|p| ReportSummary::load(p))
                .collect::<Result<Vec<_>, _>>()?;
            print!("{}", experiment::compare(&summaries)?.render());
        }
        Command::FigureData { report } => {
            let (rel, hist) = experiment::figure_data_from_dir(&report)?;
            println!("{}\n{}", rel.display(), hist.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
