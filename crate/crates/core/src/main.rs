use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use driftlab::report::{
    build_table, compare_dirs, plot_dir, read_run_curve, run_experiment, ExperimentConfig, PlotKind,
};
use driftlab::Error;

/// Class-incremental embedding experiments with drift-compensated prototypes.
#[derive(Parser)]
#[command(name = "driftlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method, seed) pair of a TOML experiment config.
    Run { config: PathBuf },
    /// Draw SVG charts for a results directory.
    Plot {
        dir: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
    },
    /// Print a markdown table of average incremental accuracy per method.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Embedding,
    Curves,
    Confusion,
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e),
            other => Failure::Runtime(other),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config } => run(&config),
        Command::Plot { dir, kind } => plot(&dir, kind),
        Command::Compare { dirs } => compare_dirs(&dirs)
            .map(|t| print!("{}", t.to_markdown()))
            .map_err(Failure::Runtime),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(config: &Path) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config).map_err(|e| match e {
        Error::Io { .. } => Failure::Config(e),
        other => other.into(),
    })?;
    let seeds = cfg.effective_seeds()?;
    let data = cfg.dataset.load()?;
    cfg.dataset.split(&data, seeds[0])?;

    let outcomes = run_experiment(&cfg, &data, &seeds);
    let mut curves = Vec::new();
    let mut failed = 0;
    for o in &outcomes {
        match &o.result {
            Ok(_) => {
                eprintln!("done: {} seed {} -> {}", o.label, o.seed, o.dir.display());
                curves.push(read_run_curve(&o.dir).map_err(Failure::Runtime)?);
            }
            Err(e) => {
                failed += 1;
                eprintln!("failed: {} seed {}: {e}", o.label, o.seed);
            }
        }
    }
    if !curves.is_empty() {
        print!("{}", build_table(&curves).map_err(Failure::Runtime)?.to_markdown());
    }
    if failed > 0 {
        return Err(Failure::Runtime(Error::Training(format!(
            "{failed} of {} runs failed",
            outcomes.len()
        ))));
    }
    Ok(())
}

fn plot(dir: &Path, kind: Kind) -> Result<(), Failure> {
    let kind = match kind {
        Kind::Embedding => PlotKind::Embedding,
        Kind::Curves => PlotKind::Curves,
        Kind::Confusion => PlotKind::Confusion,
    };
    for p in plot_dir(dir, kind).map_err(Failure::Runtime)? {
        println!("{}", p.display());
    }
    Ok(())
}
