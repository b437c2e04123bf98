use std::path::Path;

use serde::Serialize;
use wormhole_core::meta_trainer::{train, RunResult};

use crate::config::{load_config, ExperimentConfig};
use crate::output::{ensure_dir, write_csv, write_json, CurveRow};
use crate::{source, CliError};

/// Contents of `run.json`.
#[derive(Serialize)]
pub struct RunReport<'a> {
    pub task: &'static str,
    pub synthetic_data: bool,
    pub config: &'a ExperimentConfig,
    pub result: &'a RunResult,
}

/// Trains one configuration; the flag is true when MNIST fell back to generated data.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunResult, bool), CliError> {
    let src = source(cfg)?;
    let result = train(&cfg.meta, &src.sampler)?;
    Ok((result, src.synthetic))
}

pub fn write_run(out: &Path, cfg: &ExperimentConfig, result: &RunResult, synthetic: bool) -> Result<(), CliError> {
    ensure_dir(out)?;
    let report = RunReport { task: cfg.kind().as_str(), synthetic_data: synthetic, config: cfg, result };
    write_json(&out.join("run.json"), &report)?;
    let rows: Vec<CurveRow> = result.epochs.iter().map(CurveRow::from).collect();
    write_csv(&out.join("curves.csv"), &rows)
}

/// Runs the config at `path` with overrides and writes `run.json` and
/// `curves.csv`. A run that stops early still writes both files, then
/// reports the divergence.
pub fn cmd_run(path: &Path, overrides: &[String], out: &Path) -> Result<String, CliError> {
    let cfg = load_config(path)?.with_overrides(overrides)?;
    let (result, synthetic) = run_experiment(&cfg)?;
    write_run(out, &cfg, &result, synthetic)?;
    if let Some(f) = &result.failure {
        let task = f.task.map(|t| format!(", task {t}")).unwrap_or_default();
        return Err(CliError::Divergence(format!("epoch {}{task}: {} (partial output in {})", f.epoch, f.reason, out.display())));
    }
    let metric = result.final_metric.map(|m| format!("{m:.6}")).unwrap_or_else(|| "-".into());
    let data = if synthetic { " [synthetic MNIST]" } else { "" };
    Ok(format!(
        "{} {} seed {}: final metric {metric}, |theta| {:.4}{data}",
        cfg.kind().as_str(),
        cfg.meta.wormhole.kind.as_str(),
        cfg.meta.seed,
        result.theta_norm
    ))
}
