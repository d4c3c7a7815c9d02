use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gridless_doa::array_model::ArrayGeometry;
use gridless_doa::bench::{
    exit_code, residual_dump, run_experiment, spectrum_dump, summary_table, write_residuals_csv, write_results_csv,
    write_spectrum_csv, write_trials_csv, ExperimentConfig, SolverSpec,
};
use gridless_doa::parallel::Execution;
use gridless_doa::DoaError;

/// Gridless DOA estimation experiments.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment and write the summary CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replaces the config's solver list; repeatable.
        #[arg(long = "solver", value_name = "NAME")]
        solvers: Vec<String>,
        /// Overrides the number of trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Null spectrum of the first trial as phase_deg,d_tilde.
        #[arg(long, value_name = "PATH")]
        dump_spectrum: Option<PathBuf>,
        /// Residual histories of the iterative solvers on the first trial.
        #[arg(long, value_name = "PATH")]
        dump_residuals: Option<PathBuf>,
        /// Per-trial estimates.
        #[arg(long, value_name = "PATH")]
        dump_trials: Option<PathBuf>,
        /// Run trials on one thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Draw a perturbed NUA and write its positions, one per line.
    Geometry {
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>, DoaError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cli: Cli) -> Result<(), DoaError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            solvers,
            trials,
            dump_spectrum,
            dump_residuals,
            dump_trials,
            sequential,
        } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = trials {
                cfg.n_trials = n;
            }
            if !solvers.is_empty() {
                cfg.solvers = solvers.iter().map(|s| SolverSpec::from_name(s)).collect::<Result<_, _>>()?;
            }
            cfg.validate()?;
            let exec = if sequential { Execution::Sequential } else { Execution::default() };
            let result = run_experiment(&cfg, exec)?;
            write_results_csv(create(&out)?, &result.rows)?;
            if let Some(p) = dump_trials {
                write_trials_csv(create(&p)?, &result.trials)?;
            }
            if let Some(p) = dump_spectrum {
                write_spectrum_csv(create(&p)?, &spectrum_dump(&cfg, 3600)?)?;
            }
            if let Some(p) = dump_residuals {
                write_residuals_csv(create(&p)?, &residual_dump(&cfg)?)?;
            }
            print!("{}", summary_table(&result.rows));
        }
        Command::Geometry { m, seed, out } => {
            let g = ArrayGeometry::perturbed_nua_seeded(m, seed)?;
            std::fs::write(out, g.to_text())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
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
            if matches!(e, DoaError::Config(_)) {
                eprintln!("usage: gridless-doa run --config <PATH> --out <PATH> (see --help)");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
