//! Command-line entry point.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::DistError;
use crate::experiments::{run_experiment, ExperimentConfig, ExperimentKind};

#[derive(Debug, Parser)]
#[command(name = "distlab", about = "Distillation variance-reduction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides base_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination; defaults to output_path, then stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        /// Worker threads.
        #[arg(long, env = "DISTLAB_JOBS")]
        jobs: Option<usize>,
    },
    /// Parse and check a config file without running it.
    ValidateConfig { config: PathBuf },
    /// Print the experiment names.
    ListExperiments,
    /// Print the version.
    Version,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

fn exit_code(e: &DistError) -> i32 {
    match e {
        DistError::Config(_) => EXIT_CONFIG,
        DistError::Parse { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, DistError> {
    // An unreadable config file is a config error, not a runtime one.
    ExperimentConfig::from_path(path).map_err(|e| match e {
        DistError::Io { .. } => DistError::config(e.to_string()),
        other => other,
    })
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::ListExperiments => {
            for k in ExperimentKind::ALL {
                println!("{}", k.name());
            }
            Ok(())
        }
        Command::Version => {
            println!("distlab {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
        Command::ValidateConfig { config } => load(&config).and_then(|c| {
            c.validate()?;
            c.grid()?;
            println!("ok: {} ({})", config.display(), c.experiment.name());
            Ok(())
        }),
        Command::Run { config, seed, out, trials, jobs } => (|| {
            let mut c = load(&config)?;
            if let Some(s) = seed {
                c.base_seed = s;
            }
            if let Some(t) = trials {
                c.trials = t;
            }
            if let Some(o) = out {
                c.output_path = Some(o);
            }
            c.validate()?;
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let output = run_experiment(&c, jobs)?;
            match &c.output_path {
                Some(path) => {
                    output.write(path)?;
                }
                None => print!("{}", output.to_csv()),
            }
            Ok(())
        })(),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
