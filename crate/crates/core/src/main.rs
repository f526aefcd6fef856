use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use sgmcmc::experiment::{error_exit_code, run, ConfigFile, ExperimentKind};

/// Runs one experiment and writes its CSV outputs.
#[derive(Parser, Debug)]
#[command(name = "sgmcmc", version, about)]
struct Cli {
    /// synthetic-1d, synthetic-2d, verify or lda
    experiment: String,
    /// Configuration file; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `steps`.
    #[arg(long)]
    steps: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = cli.experiment.parse::<ExperimentKind>().and_then(|kind| {
        let mut file = match &cli.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        if let Some(seed) = cli.seed {
            file.set("", "seed", seed);
        }
        if let Some(steps) = cli.steps {
            file.set("", "steps", steps);
        }
        run(kind, file, &cli.out)
    });
    match result {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for d in &outcome.divergences {
                eprintln!("divergence: {d}");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_exit_code(&e) as u8)
        }
    }
}
