use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mam_cli::{CliError, CliResult, FitOverrides};
use mam_core::ModelKind;

/// Multiple allocation mixtures for count data.
#[derive(Parser)]
#[command(name = "mam", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from a scenario config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a model and write draws, allocations and a summary.
    Fit {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        burnin: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
        /// mam, car-mam or negbinmix.
        #[arg(long)]
        model: Option<String>,
        /// additive, codominance1 or codominance0.
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Misclassification of an allocation file against truth labels.
    Evaluate {
        #[arg(long)]
        alloc: PathBuf,
        /// Any TSV with region_id and truth columns, such as a simulated dataset.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        model: Option<String>,
        /// Write the JSON record here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot-ready CSV from a fit directory.
    Report {
        #[arg(long)]
        fit_dir: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_model(m: Option<String>) -> CliResult<Option<ModelKind>> {
    m.map(|s| s.parse::<ModelKind>().map_err(CliError::from)).transpose()
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let ds = mam_cli::simulate(&config, &out, seed)?;
            eprintln!("wrote {} units to {}", ds.n_units(), out.display());
        }
        Command::Fit { config, data, out_dir, seed, iters, burnin, thin, model, scheme, k } => {
            let ov = FitOverrides { seed, iters, burnin, thin, model: parse_model(model)?, scheme, k };
            let (_, summary) = mam_cli::fit(config.as_deref(), &data, &out_dir, &ov)?;
            if let Some(e) = summary.misclassification {
                eprintln!("misclassification {e:.4}");
            }
            eprintln!("wrote fit outputs to {}", out_dir.display());
        }
        Command::Evaluate { alloc, truth, model, out } => {
            let m = mam_cli::evaluate(&alloc, &truth, parse_model(model)?, out.as_deref())?;
            if out.is_none() {
                let json = serde_json::to_string_pretty(&m).map_err(|e| CliError::internal(e.to_string()))?;
                println!("{json}");
            }
        }
        Command::Report { fit_dir, data, out } => {
            let n = mam_cli::report(&fit_dir, &data, &out)?;
            eprintln!("wrote {n} rows to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
