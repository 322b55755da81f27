//! `aodfill` command-line entry point.
//!
//! Exit status: 0 on success, 1 on input or configuration errors, 2 on
//! internal errors. Diagnostics go to stderr; only `coverage` prints to
//! stdout.

mod overrides;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aodfill::ascii::{read_ascii_grid, write_ascii_grid};
use aodfill::grid::{coverage, mean_filter, FilterConfig};
use aodfill::pipeline::{self, RunConfig};
use aodfill::Error;
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

const RUN_KEYS: &str = "Config keys read:
  input_root, output_root, date_range, filter.window, filter.min_valid,
  covariate_tags, station_file, seed, search_iters, cv_k, threads,
  scale_aod, search_space.*, nodata";

#[derive(Parser)]
#[command(
    name = "aodfill",
    version,
    about = "Gap-fill daily AOD rasters with neighbor-mean random forests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Dotted-path overrides applied on top of the config, e.g. `filter.window=11`.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scene series as a ready-to-run input_root.
    #[command(after_help = "Config keys read:
  input_root, date_range (first day and number of days), synth.n_cols,
  synth.n_rows, synth.cell_size, synth.correlation_length,
  synth.missing_fraction_target, synth.n_covariates, synth.noise_sd,
  synth.n_stations, synth.seed")]
    Synth(ConfigArgs),
    /// Apply the nodata-aware mean filter to one grid.
    #[command(after_help = "Config keys read:
  filter.window, filter.include_center, filter.min_valid, nodata")]
    Filter {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Build the training tables under <output_root>/tables.
    #[command(after_help = RUN_KEYS)]
    Features(ConfigArgs),
    /// Search hyperparameters and train the four models.
    #[command(after_help = RUN_KEYS)]
    Train(ConfigArgs),
    /// Cross-validate under random, spatial and temporal folds.
    #[command(after_help = RUN_KEYS)]
    Evaluate(ConfigArgs),
    /// Impute every day in date_range with the trained models.
    #[command(after_help = RUN_KEYS)]
    Impute(ConfigArgs),
    /// All stages plus manifest.json.
    #[command(after_help = RUN_KEYS)]
    Run(ConfigArgs),
    /// Print the valid fraction of a grid.
    #[command(after_help = "Config keys read: none")]
    Coverage { grid: PathBuf },
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let mut msg = e.to_string();
        let mut src = std::error::Error::source(&e);
        while let Some(s) = src {
            let text = s.to_string();
            if !msg.contains(&text) {
                msg.push_str(&format!(": {text}"));
            }
            src = s.source();
        }
        if e.is_input_error() {
            Failure::Input(msg)
        } else {
            Failure::Internal(msg)
        }
    }
}

fn load_value(args: &ConfigArgs) -> Result<Value, Failure> {
    let mut value = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?
        }
        None => Value::Object(Default::default()),
    };
    for arg in &args.overrides {
        let (path, v) = overrides::parse_override(arg).map_err(Failure::Input)?;
        overrides::apply_override(&mut value, &path, v).map_err(Failure::Input)?;
    }
    Ok(value)
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    Ok(RunConfig::from_value(load_value(args)?)?)
}

fn filter_section(value: &Value) -> Result<FilterConfig, Failure> {
    match value.get("filter") {
        None => Ok(FilterConfig::default()),
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| Failure::Input(format!("config `filter`: {e}"))),
    }
}

fn run_filter(input: &Path, output: &Path, args: &ConfigArgs) -> Result<(), Failure> {
    let value = load_value(args)?;
    let cfg = filter_section(&value)?;
    let nodata = match value.get("nodata") {
        None => aodfill::ascii::DEFAULT_NODATA,
        Some(v) => v
            .as_f64()
            .ok_or_else(|| Failure::Input("config `nodata` must be a number".into()))?,
    };
    let grid = read_ascii_grid(input)?;
    let filtered = mean_filter(&grid, &cfg)?;
    write_ascii_grid(&filtered, output, nodata)?;
    Ok(())
}

fn run_synth(args: &ConfigArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    pipeline::with_threads(&cfg, || pipeline::write_synthetic_inputs(&cfg))?;
    log::info!(
        "wrote {} synthetic days to {}",
        cfg.days().len(),
        cfg.input_root.display()
    );
    Ok(())
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth(args) => run_synth(&args),
        Command::Filter {
            input,
            output,
            config,
        } => run_filter(&input, &output, &config),
        Command::Features(args) => pipeline::stage_features(&load_config(&args)?)
            .map(drop)
            .map_err(Failure::from),
        Command::Train(args) => pipeline::stage_train(&load_config(&args)?)
            .map(drop)
            .map_err(Failure::from),
        Command::Evaluate(args) => pipeline::stage_evaluate(&load_config(&args)?)
            .map(drop)
            .map_err(Failure::from),
        Command::Impute(args) => pipeline::stage_impute(&load_config(&args)?)
            .map(drop)
            .map_err(Failure::from),
        Command::Run(args) => pipeline::run(&load_config(&args)?)
            .map(drop)
            .map_err(Failure::from),
        Command::Coverage { grid } => {
            let g = read_ascii_grid(&grid)?;
            println!("{:.6}", coverage(&g));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}
