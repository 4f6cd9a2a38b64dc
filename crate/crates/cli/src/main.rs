use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use koopman_hjb_cli::commands::{
    cmd_lqr_check, cmd_plot, cmd_solve, cmd_validate, LqrArgs, SolveArgs, ValidateArgs, EXIT_CONFIG,
};

/// Sum-of-squares value functions and feedback laws for control-affine systems.
#[derive(Parser)]
#[command(name = "koopman-hjb", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the value equation and write the model with its tables.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding `output.directory`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Proceed even if the drift does not point into the domain.
        #[arg(long)]
        allow_boundary: bool,
        /// Also write decay.svg and value.svg.
        #[arg(long)]
        svg: bool,
    },
    /// Run the independent checks against a stored model.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding model.json from `solve`.
        #[arg(long)]
        model: PathBuf,
        /// Where to write the tables; defaults to the model directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep only this many leading modes of the model.
        #[arg(long)]
        modes: Option<usize>,
    },
    /// Compare the full pipeline against the Riccati solution on a linear system.
    LqrCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render decay.svg and value.svg from the tables of a run.
    Plot {
        /// Directory holding singular_values.csv and value_grid.csv.
        run_dir: PathBuf,
    },
}

fn init_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("KOOPMAN_HJB_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("KOOPMAN_HJB_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    let outcome = match cli.command {
        Command::Solve {
            config,
            out,
            allow_boundary,
            svg,
        } => cmd_solve(&SolveArgs {
            config,
            out,
            allow_boundary,
            svg,
        }),
        Command::Validate {
            config,
            model,
            out,
            modes,
        } => cmd_validate(&ValidateArgs {
            config,
            model,
            out,
            modes,
        }),
        Command::LqrCheck { config, out } => cmd_lqr_check(&LqrArgs { config, out }),
        Command::Plot { run_dir } => cmd_plot(&run_dir),
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
