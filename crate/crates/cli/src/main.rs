use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use fmca_cli::commands::{self, SweepParam};
use fmca_cli::config::OUTPUT_DIR_ENV;

#[derive(Parser)]
#[command(
    name = "fmca",
    version,
    about = "Train paired networks and read off cross-density eigenspectra"
)]
#[command(after_help = format!("Outputs go to `output.dir` from the config, or ${OUTPUT_DIR_ENV} when set."))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train both networks; writes checkpoint.txt, history.csv and summary.csv.
    Train { config: PathBuf },
    /// Eigenvalues and eigenfunction samples of a trained checkpoint.
    Spectrum {
        checkpoint: PathBuf,
        #[arg(long)]
        eval_batch: Option<usize>,
    },
    /// Ground-truth spectrum of the configured dataset.
    Oracle { config: PathBuf },
    /// Per-index errors between a learned spectrum and an oracle spectrum.
    Compare {
        spectrum: PathBuf,
        oracle: PathBuf,
        #[arg(long, default_value_t = 1e-2)]
        tolerance: f64,
        /// Compare only the first N values of each file.
        #[arg(long)]
        count: Option<usize>,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on uniform codes and export the pairwise ratio matrix.
    FactorialDemo { config: PathBuf },
    /// Train with class coding and report held-out accuracy.
    Classify { config: PathBuf },
    /// Train over a grid of p_alpha or rho values.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config } => {
            let r = commands::cmd_train(&config)?;
            if let Some(last) = r.run.history.last() {
                println!("final score {:.6}", last.score);
            }
            println!("checkpoint {}", r.checkpoint.display());
            println!("history {}", r.history.display());
        }
        Command::Spectrum { checkpoint, eval_batch } => {
            let r = commands::cmd_spectrum(&checkpoint, eval_batch)?;
            for (i, s) in r.result.sigma.iter().enumerate() {
                println!("sigma_{} {:.6}", i + 1, s);
            }
            println!("spectrum {}", r.spectrum.display());
            println!("eigenfunctions {}", r.eigenfunctions.display());
        }
        Command::Oracle { config } => {
            let (path, values) = commands::cmd_oracle(&config)?;
            for (i, v) in values.iter().enumerate() {
                println!("lambda_{} {:.6}", i + 1, v);
            }
            println!("oracle {}", path.display());
        }
        Command::Compare {
            spectrum,
            oracle,
            tolerance,
            count,
            out,
        } => {
            let r = commands::cmd_compare(&spectrum, &oracle, tolerance, count, out.as_deref())?;
            print!("{}", r.render());
            return Ok(r.pass);
        }
        Command::FactorialDemo { config } => {
            let r = commands::cmd_factorial_demo(&config)?;
            println!(
                "mean diagonal {:.6}, mean off-diagonal {:.6}, ratio {:.4}",
                r.diagonal.mean_diag, r.diagonal.mean_off, r.diagonal.ratio
            );
            println!("matrix {}", r.matrix_path.display());
        }
        Command::Classify { config } => {
            let r = commands::cmd_classify(&config)?;
            println!("accuracy {:.4}", r.accuracy);
            println!(
                "mean same-class cdr {:.6}, cross-class {:.6}",
                r.mean_same, r.mean_cross
            );
        }
        Command::Sweep { config, param, values } => {
            let path = commands::cmd_sweep(&config, SweepParam::parse(&param)?, &values)?;
            println!("sweep {}", path.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
