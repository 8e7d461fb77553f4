use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pdmv::commands::{self, AdaptArgs, AnalyzeArgs, AnalyzeMode, FitDensityArgs, ProductionArgs};
use pdmv::error::Result;

#[derive(Parser)]
#[command(name = "pdmv", version, about = "Adaptive density-based biased sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Fes,
    Diff,
    Transitions,
}

#[derive(Subcommand)]
enum Command {
    /// Build the bias iteratively.
    Adapt {
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Overrides the master seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many iterations; resume later with --resume.
        #[arg(long)]
        max_iterations: Option<usize>,
    },
    /// Sample under a frozen bias.
    Production {
        config: PathBuf,
        /// Bias document; defaults to bias.json in the output directory.
        #[arg(long)]
        bias: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reweighted FES, FES difference, or transition counts.
    Analyze {
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Reference FES grid for --mode diff.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Reference FES `U - min U` on the configured grid.
    Reference {
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit a density to the samples of a CSV file.
    FitDensity {
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also evaluate on this many points per axis.
        #[arg(long)]
        grid: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Adapt { config, output, seed, resume, max_iterations } => {
            let s = commands::adapt(&AdaptArgs { config, output, seed, resume, max_iterations })?;
            let total = s.transitions.map_or_else(|| "-".to_string(), |t| t.total.to_string());
            println!("{}: {} iterations, transitions {total}", s.output.display(), s.iterations);
        }
        Command::Production { config, bias, output, seed } => {
            let out = commands::production(&ProductionArgs { config, bias, output, seed })?;
            println!("{}", out.display());
        }
        Command::Analyze { config, mode, input, reference, output } => {
            let mode = match mode {
                Mode::Fes => AnalyzeMode::Fes,
                Mode::Diff => AnalyzeMode::Diff,
                Mode::Transitions => AnalyzeMode::Transitions,
            };
            for p in commands::analyze(&AnalyzeArgs { config, mode, input, reference, output })? {
                println!("{}", p.display());
            }
        }
        Command::Reference { config, output } => {
            println!("{}", commands::reference(&config, output.as_deref())?.display());
        }
        Command::FitDensity { config, input, output, grid } => {
            let out = commands::fit_density(&FitDensityArgs { config, input, output, grid })?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", pdmv::error::CliError::Usage(e.to_string().trim().to_string()).to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(2)
        }
    }
}
