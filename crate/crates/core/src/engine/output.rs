//! Run-directory writers: metrics.csv, summary.json, model.json, config.json,
//! and sweep layouts.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::params::{ClientId, ModelParams};

use super::{RunOutput, SimConfig, SweepPoint};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MODEL_FILE: &str = "model.json";
pub const CONFIG_FILE: &str = "config.json";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";

pub const METRICS_HEADER: [&str; 15] = [
    "round",
    "global_loss",
    "global_accuracy",
    "tp",
    "fp",
    "tn",
    "fn",
    "excl_accuracy",
    "excl_precision",
    "excl_recall",
    "excluded_ids",
    "non_participants",
    "cost",
    "overhead",
    "objective",
];

pub const SWEEP_HEADER: [&str; 6] = [
    "value",
    "final_loss",
    "final_accuracy",
    "mean_excl_precision",
    "mean_excl_recall",
    "total_objective",
];

/// C-style `%.9g`.
pub fn format_real(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mantissa), exp.abs())
    } else {
        let decimals = (8 - exp) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn join_ids(ids: &[ClientId]) -> String {
    ids.iter()
        .map(|c| c.0.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("csv encoding: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(csv_error)?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn metrics_csv(output: &RunOutput) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER).map_err(csv_error)?;
    for r in &output.rounds {
        let m = &r.metrics;
        let c = m.confusion;
        w.write_record([
            m.round.to_string(),
            format_real(m.global_loss),
            format_real(m.global_accuracy),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
            format_real(m.excl_accuracy),
            format_real(m.excl_precision),
            format_real(m.excl_recall),
            join_ids(&m.excluded),
            join_ids(&m.non_participants),
            format_real(m.cost),
            format_real(m.overhead),
            format_real(m.objective),
        ])
        .map_err(csv_error)?;
    }
    finish(w)
}

pub fn summary_json(config: &SimConfig, output: &RunOutput) -> Value {
    let fin = output.final_eval();
    json!({
        "description": config.description,
        "config": config,
        "rounds_completed": output.rounds.len(),
        "initial_loss": output.initial.loss,
        "initial_accuracy": output.initial.accuracy,
        "final_loss": fin.loss,
        "final_accuracy": fin.accuracy,
        "mean_excl_precision": output.mean_precision(),
        "mean_excl_recall": output.mean_recall(),
        "total_cost": output.ledger.total_cost(),
        "total_overhead": output.ledger.total_overhead(),
        "total_objective": output.ledger.total_objective(),
        "wall_time_secs": output.wall_time_secs,
    })
}

pub fn model_json(params: &ModelParams) -> String {
    serde_json::to_string_pretty(params).expect("model serializes")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes the four run files into `dir`, creating it if needed.
/// `config_text` is stored as the effective config.
pub fn write_run_dir(
    dir: &Path,
    config: &SimConfig,
    config_text: &str,
    output: &RunOutput,
) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join(METRICS_FILE), &metrics_csv(output)?)?;
    let summary =
        serde_json::to_string_pretty(&summary_json(config, output)).expect("summary serializes");
    write_file(&dir.join(SUMMARY_FILE), &(summary + "\n"))?;
    write_file(
        &dir.join(MODEL_FILE),
        &(model_json(output.final_params()) + "\n"),
    )?;
    write_file(&dir.join(CONFIG_FILE), config_text)?;
    Ok(())
}

fn value_label(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// `aggregator.params.sigma_k` with 1.5 becomes `sigma_k_1.5`.
pub fn sweep_dir_name(path: &str, value: &Value) -> String {
    let leaf = path.rsplit('.').next().unwrap_or(path);
    let raw = format!("{leaf}_{}", value_label(value));
    raw.chars()
        .map(|ch| {
            if ch.is_ascii_alphanumeric() || "._-".contains(ch) {
                ch
            } else {
                '_'
            }
        })
        .collect()
}

pub fn sweep_summary_csv(points: &[SweepPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_HEADER).map_err(csv_error)?;
    for p in points {
        let fin = p.output.final_eval();
        w.write_record([
            value_label(&p.value),
            format_real(fin.loss),
            format_real(fin.accuracy),
            format_real(p.output.mean_precision()),
            format_real(p.output.mean_recall()),
            format_real(p.output.ledger.total_objective()),
        ])
        .map_err(csv_error)?;
    }
    finish(w)
}

/// One run directory per point plus the summary table. Returns the run directories.
pub fn write_sweep_dir(dir: &Path, path: &str, points: &[SweepPoint]) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut dirs = Vec::with_capacity(points.len());
    for p in points {
        let mut name = sweep_dir_name(path, &p.value);
        while dirs
            .iter()
            .any(|d: &PathBuf| d.file_name().is_some_and(|f| f == name.as_str()))
        {
            name.push('_');
        }
        let sub = dir.join(&name);
        write_run_dir(
            &sub,
            &p.config,
            &(p.config.to_json_pretty() + "\n"),
            &p.output,
        )?;
        dirs.push(sub);
    }
    write_file(&dir.join(SWEEP_SUMMARY_FILE), &sweep_summary_csv(points)?)?;
    Ok(dirs)
}
