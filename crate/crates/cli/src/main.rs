//! `werate`: run weighted entropy rate computations from TOML configs.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{SecondsFormat, Utc};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use werate_core::LogBase;

use crate::commands::{CommandOutput, Context};
use crate::error::CliError;
use crate::output::{config_digest, write_json, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "werate", version, about = "Weighted information and weighted entropy rates")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed for every random stream in the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output directory; the WERATE_OUT environment variable takes precedence.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    format: Format,

    /// Unit of every information-valued output: nat or bits.
    #[arg(long, global = true, default_value = "nat")]
    log_base: LogBase,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Additive and multiplicative rates of an IID source.
    Iid {
        #[arg(long)]
        config: PathBuf,
    },
    /// Additive rates and the exact WE series of a finite Markov chain.
    Markov {
        #[arg(long)]
        config: PathBuf,
    },
    /// Closed-form WE of a Gaussian vector, with optional Monte Carlo check.
    Gaussian {
        #[arg(long)]
        config: PathBuf,
    },
    /// Principal eigen-data, multiplicative rates and the variational audit.
    Pressure {
        #[arg(long)]
        config: PathBuf,
    },
    /// Empirical rates along simulated paths.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn out_dir(cli: &Cli) -> PathBuf {
    std::env::var_os("WERATE_OUT")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or_else(|| cli.out.clone())
        .unwrap_or_else(|| PathBuf::from("werate-out"))
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn execute<C: Serialize + Sync>(
    cli: &Cli,
    name: &str,
    config: C,
    run: impl FnOnce(&C, &Context) -> Result<CommandOutput, CliError> + Send,
) -> Result<Vec<PathBuf>, CliError> {
    let started = now();
    let digest = config_digest(name, &config, cli.seed, cli.log_base)?;
    let ctx = Context {
        seed: cli.seed,
        base: cli.log_base,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build()
        .map_err(|e| CliError::Io(format!("cannot start worker pool: {e}")))?;
    let out = pool.install(|| run(&config, &ctx))?;

    let dir = out_dir(cli);
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let mut outputs = Vec::new();
    if matches!(cli.format, Format::Json | Format::Both) {
        let path = dir.join(format!("{name}.json"));
        write_json(&path, &out.report.json())?;
        outputs.push(path);
    }
    if matches!(cli.format, Format::Csv | Format::Both) {
        if let Some(bytes) = out.csv_bytes()? {
            let path = dir.join(format!("{name}.csv"));
            std::fs::write(&path, bytes)?;
            outputs.push(path);
        }
    }
    let manifest = RunManifest {
        command: name.to_string(),
        config_digest: digest,
        seed: cli.seed,
        log_base: cli.log_base.to_string(),
        threads: cli.threads.max(1),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: now(),
        outputs: outputs.clone(),
    };
    let path = dir.join(format!("{name}.manifest.json"));
    let value = serde_json::to_value(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    write_json(&path, &value)?;
    outputs.push(path);
    Ok(outputs)
}

fn dispatch(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    match &cli.command {
        Command::Iid { config } => {
            let c = config::load::<config::IidConfig>(config)?.resolve()?;
            execute(cli, "iid", c, commands::iid)
        }
        Command::Markov { config } => {
            let c = config::load::<config::MarkovConfig>(config)?.resolve()?;
            execute(cli, "markov", c, commands::markov)
        }
        Command::Gaussian { config } => {
            let c = config::load::<config::GaussianConfig>(config)?.resolve()?;
            execute(cli, "gaussian", c, commands::gaussian)
        }
        Command::Pressure { config } => {
            let c = config::load::<config::PressureConfig>(config)?.resolve()?;
            execute(cli, "pressure", c, commands::pressure)
        }
        Command::Simulate { config } => {
            let c = config::load::<config::SimulateConfig>(config)?.resolve()?;
            execute(cli, "simulate", c, commands::simulate)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("werate: {e}");
            e.exit_code()
        }
    }
}
