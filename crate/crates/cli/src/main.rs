mod commands;
mod config;
mod error;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Config;
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "sgdm", version, about = "SGD with momentum: stability experiments and bound checks")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// key=value pairs applied after the file.
    #[arg(long, num_args = 1..)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Parse a dataset, write its summary and a normalized copy.
    ParseData(ConfigArgs),
    /// Coupled-run sweep over the step and momentum grids.
    RunStability(ConfigArgs),
    /// Monte-Carlo comparison against the stability and optimization bounds.
    CheckBounds(ConfigArgs),
    /// Identity, inequality and consistency checks.
    VerifyInvariants(ConfigArgs),
    /// Horizon and step choice for the excess-risk rates.
    Recipe(ConfigArgs),
    /// Render sweep CSVs as an SVG figure.
    Plot {
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "")]
        title: String,
        #[arg(long, default_value = "epochs")]
        x_label: String,
        #[arg(long, default_value = "distance")]
        y_label: String,
        #[arg(long)]
        log_y: bool,
    },
}

fn load(args: &ConfigArgs, required: bool) -> Result<Config, CliError> {
    let mut cfg = match &args.config {
        Some(path) => Config::load(path)?,
        None if required => return Err(CliError::Usage("--config is required for this verb".into())),
        None => Config::parse("", Path::new("."))?,
    };
    cfg.apply_overrides(&args.overrides)?;
    Ok(cfg)
}

fn dispatch(verb: Verb) -> Result<(), CliError> {
    match verb {
        Verb::ParseData(a) => commands::parse_data(&load(&a, true)?),
        Verb::RunStability(a) => commands::run_stability(&load(&a, true)?),
        Verb::CheckBounds(a) => commands::check_bounds(&load(&a, true)?),
        Verb::VerifyInvariants(a) => commands::verify_invariants(&load(&a, false)?),
        Verb::Recipe(a) => commands::recipe(&load(&a, false)?),
        Verb::Plot { input, output, title, x_label, y_label, log_y } => plot::emit_plot(&plot::PlotSpec {
            inputs: input,
            title,
            x_label,
            y_label,
            log_y,
            output,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let reason = e.kind().to_string();
            eprintln!("{}", CliError::Usage(reason).diagnostic());
            return ExitCode::from(1);
        }
    };
    match dispatch(cli.verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
