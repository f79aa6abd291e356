//! `metafl` command-line front end.
//!
//! Exit codes: 0 success, 2 config or validation error, 3 runtime or numeric
//! failure, 4 I/O failure. Failures print one `error: ...` line to stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metafl_core::engine::output::{write_run_dir, write_sweep_dir, SWEEP_SUMMARY_FILE};
use metafl_core::engine::{parse_sweep_value, run, sweep, SimConfig};
use metafl_core::{list_aggregators, Error, ErrorKind};

#[derive(Debug, Parser)]
#[command(
    name = "metafl",
    version,
    about = "Federated-learning simulator with robust aggregation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv, summary.json, model.json and config.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed; the override is recorded in config.json.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run once per value of a dotted config parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted path such as aggregator.params.sigma_k.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print every aggregator with its parameter defaults.
    ListAggregators,
    /// Parse and validate a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Runtime => 3,
        ErrorKind::Io => 4,
    }
}

fn fail(code: u8, message: &str) -> ExitCode {
    let line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error: {line}");
    ExitCode::from(code)
}

fn read_config(path: &Path) -> Result<(String, SimConfig), Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let config = SimConfig::from_json_str(&text)?;
    Ok((text, config))
}

/// The file text verbatim, or with `seed` replaced when overridden.
fn effective_config(
    text: &str,
    config: &mut SimConfig,
    seed: Option<u64>,
) -> Result<String, Error> {
    let Some(seed) = seed else {
        return Ok(text.to_string());
    };
    config.seed = seed;
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
    value["seed"] = seed.into();
    Ok(serde_json::to_string_pretty(&value).expect("json value serializes") + "\n")
}

fn cmd_run(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Error> {
    let (text, mut cfg) = read_config(config)?;
    let effective = effective_config(&text, &mut cfg, seed)?;
    let output = run(&cfg)?;
    write_run_dir(out, &cfg, &effective, &output)?;
    let fin = output.final_eval();
    println!(
        "ran {} rounds: final loss {:.6}, accuracy {:.4}; wrote {}",
        output.rounds.len(),
        fin.loss,
        fin.accuracy,
        out.display()
    );
    Ok(())
}

fn cmd_sweep(config: &Path, param: &str, values: &str, out: &Path) -> Result<(), Error> {
    let (_, cfg) = read_config(config)?;
    let values: Vec<_> = values
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(parse_sweep_value)
        .collect();
    let points = sweep(&cfg, param, &values)?;
    let dirs = write_sweep_dir(out, param, &points)?;
    println!(
        "swept {param} over {} values; wrote {} run directories and {}",
        points.len(),
        dirs.len(),
        out.join(SWEEP_SUMMARY_FILE).display()
    );
    Ok(())
}

fn cmd_validate(config: &Path) -> Result<(), Error> {
    let (_, cfg) = read_config(config)?;
    println!(
        "ok: {} rounds, {} clients, aggregator {}",
        cfg.rounds,
        cfg.num_clients,
        cfg.aggregator.name.as_str()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            return fail(2, first.trim_start_matches("error: "));
        }
    };
    let result = match &cli.command {
        Command::Run { config, out, seed } => cmd_run(config, out, *seed),
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => cmd_sweep(config, param, values, out),
        Command::ListAggregators => {
            for line in list_aggregators() {
                println!("{line}");
            }
            Ok(())
        }
        Command::Validate { config } => cmd_validate(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(exit_code(e.kind()), &e.to_string()),
    }
}
