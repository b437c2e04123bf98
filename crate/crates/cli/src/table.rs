use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use wormhole_core::exec::Execution;
use wormhole_core::tasks::TaskKind;
use wormhole_core::wormhole::WormholeKind;

use crate::config::ExperimentConfig;
use crate::output::{ensure_dir, write_csv, write_text};
use crate::run::run_experiment;
use crate::CliError;

pub const STEPS: [usize; 3] = [1, 2, 5];
pub const TASKS: [TaskKind; 3] = [TaskKind::AvgThreshold, TaskKind::Wavelet, TaskKind::Mnist];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Vanilla,
    WormholeTanhScalar,
    WormholePerWeight,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Vanilla, Method::WormholeTanhScalar, Method::WormholePerWeight];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::WormholeTanhScalar => "wormhole_tanh_scalar",
            Method::WormholePerWeight => "wormhole_per_weight",
        }
    }

    pub fn kind(self) -> WormholeKind {
        match self {
            Method::Vanilla => WormholeKind::Identity,
            Method::WormholeTanhScalar => WormholeKind::TanhScalar,
            Method::WormholePerWeight => WormholeKind::PerWeight,
        }
    }

    /// Per-weight multipliers are only run on Avg-Threshold.
    pub fn applies_to(self, task: TaskKind) -> bool {
        self != Method::WormholePerWeight || task == TaskKind::AvgThreshold
    }
}

fn task_title(task: TaskKind) -> &'static str {
    match task {
        TaskKind::AvgThreshold => "Avg-Threshold",
        TaskKind::Wavelet => "Wavelet Transform",
        TaskKind::Mnist => "MNIST",
    }
}

/// Config for one grid cell and seed.
pub fn cell_config(
    task: TaskKind,
    method: Method,
    steps: usize,
    seed: u64,
    overrides: &[String],
) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::preset(task).with_overrides(overrides)?;
    cfg.meta.wormhole.kind = method.kind();
    cfg.meta.inner.n_inner = steps;
    cfg.meta.seed = seed;
    Ok(cfg)
}

/// One seed of one cell; `cells.csv` holds one of these per line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub task: String,
    pub method: Method,
    pub steps: usize,
    pub seed: u64,
    pub metric: Option<f64>,
    pub theta_norm: Option<f64>,
    pub theta_max_abs: Option<f64>,
    pub complete: bool,
    pub failure: Option<String>,
}

/// One line of `table.csv`. Cells absent from the grid have `present = false`
/// and empty statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub task: String,
    pub method: Method,
    pub steps: usize,
    pub present: bool,
    pub seeds: usize,
    pub completed: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub synthetic_data: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableOutcome {
    pub cells: Vec<CellRow>,
    pub seeds: Vec<SeedRow>,
    pub text: String,
}

fn stats(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (Some(mean), Some(var.sqrt()))
}

fn seed_row(task: TaskKind, method: Method, steps: usize, seed: u64, overrides: &[String]) -> Result<(SeedRow, bool), CliError> {
    let cfg = cell_config(task, method, steps, seed, overrides)?;
    let base = SeedRow {
        task: task.as_str().into(),
        method,
        steps,
        seed,
        metric: None,
        theta_norm: None,
        theta_max_abs: None,
        complete: false,
        failure: None,
    };
    match run_experiment(&cfg) {
        Ok((r, synthetic)) => Ok((
            SeedRow {
                metric: r.final_metric,
                theta_norm: Some(r.theta_norm),
                theta_max_abs: Some(r.theta_max_abs),
                complete: r.complete,
                failure: r.failure.map(|f| format!("epoch {}: {}", f.epoch, f.reason)),
                ..base
            },
            synthetic,
        )),
        Err(e @ (CliError::Config(_) | CliError::Usage(_) | CliError::Io(_) | CliError::Data(_))) => Err(e),
        Err(e) => Ok((SeedRow { failure: Some(e.to_string()), ..base }, false)),
    }
}

/// Runs every applicable (method, steps) cell of `tasks` over `seeds` seeds.
/// Failed seeds are recorded and the grid carries on.
pub fn run_table(tasks: &[TaskKind], seeds: u64, overrides: &[String]) -> Result<TableOutcome, CliError> {
    let mut jobs = Vec::new();
    for &task in tasks {
        for method in Method::ALL {
            for steps in STEPS {
                if method.applies_to(task) {
                    for seed in 0..seeds {
                        jobs.push((task, method, steps, seed));
                    }
                }
            }
        }
    }
    let results = Execution::Parallel.map(&jobs, |&(t, m, s, seed)| seed_row(t, m, s, seed, overrides));
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut cells = Vec::new();
    for &task in tasks {
        let synthetic = results.iter().any(|(r, syn)| *syn && r.task == task.as_str());
        for method in Method::ALL {
            for steps in STEPS {
                let mine: Vec<&SeedRow> = results
                    .iter()
                    .map(|(r, _)| r)
                    .filter(|r| r.task == task.as_str() && r.method == method && r.steps == steps)
                    .collect();
                let values: Vec<f64> = mine.iter().filter(|r| r.complete).filter_map(|r| r.metric).collect();
                let (mean, std) = stats(&values);
                cells.push(CellRow {
                    task: task.as_str().into(),
                    method,
                    steps,
                    present: method.applies_to(task),
                    seeds: mine.len(),
                    completed: values.len(),
                    mean,
                    std,
                    synthetic_data: synthetic,
                });
            }
        }
    }
    let text = render(tasks, &cells);
    Ok(TableOutcome { cells, seeds: results.into_iter().map(|(r, _)| r).collect(), text })
}

fn cell_text(c: &CellRow) -> String {
    match (c.present, c.mean, c.std) {
        (false, ..) => "-".into(),
        (true, Some(m), Some(s)) if c.completed == c.seeds => format!("{m:.3} ± {s:.3}"),
        (true, Some(m), Some(s)) => format!("{m:.3} ± {s:.3} ({}/{})", c.completed, c.seeds),
        _ => format!("failed (0/{})", c.seeds),
    }
}

/// Methods as rows, task × steps as columns, in the fixed grid order.
pub fn render(tasks: &[TaskKind], cells: &[CellRow]) -> String {
    let label_w = Method::ALL.iter().map(|m| m.as_str().len()).max().unwrap_or(0);
    let mut grid: Vec<Vec<String>> = Method::ALL
        .iter()
        .map(|&m| {
            tasks
                .iter()
                .flat_map(|t| STEPS.iter().map(move |&s| (t, s)))
                .map(|(t, s)| {
                    cells
                        .iter()
                        .find(|c| c.task == t.as_str() && c.method == m && c.steps == s)
                        .map(cell_text)
                        .unwrap_or_else(|| "-".into())
                })
                .collect()
        })
        .collect();
    let heads: Vec<String> = tasks.iter().flat_map(|_| STEPS.iter().map(|s| format!("{s}-step"))).collect();
    let col_w = grid.iter().flatten().chain(&heads).map(|s| s.chars().count()).max().unwrap_or(6);

    let mut out = String::new();
    for t in tasks {
        if *t == TaskKind::Mnist {
            let syn = cells.iter().any(|c| c.task == t.as_str() && c.synthetic_data);
            let _ = writeln!(out, "# mnist data: {}", if syn { "synthetic fallback" } else { "IDX files" });
        }
    }
    let group_w = 3 * col_w + 6;
    let _ = write!(out, "{:label_w$}", "");
    for t in tasks {
        let _ = write!(out, " | {:^group_w$}", task_title(*t));
    }
    out.push('\n');
    let _ = write!(out, "{:label_w$}", "");
    for chunk in heads.chunks(3) {
        let _ = write!(out, " | {}", chunk.iter().map(|h| format!("{h:>col_w$}")).collect::<Vec<_>>().join("   "));
    }
    out.push('\n');
    let _ = writeln!(out, "{}", "-".repeat(label_w + tasks.len() * (group_w + 3)));
    for (m, row) in Method::ALL.iter().zip(grid.iter_mut()) {
        let _ = write!(out, "{:label_w$}", m.as_str());
        for chunk in row.chunks(3) {
            let _ = write!(out, " | {}", chunk.iter().map(|c| pad_left(c, col_w)).collect::<Vec<_>>().join("   "));
        }
        out.push('\n');
    }
    out
}

fn pad_left(s: &str, w: usize) -> String {
    format!("{}{s}", " ".repeat(w.saturating_sub(s.chars().count())))
}

pub fn cmd_table(task: &str, seeds: u64, overrides: &[String], out: &Path) -> Result<String, CliError> {
    if seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let tasks: Vec<TaskKind> = match task {
        "all" => TASKS.to_vec(),
        t => vec![t.parse().map_err(|_| CliError::Usage(format!("unknown task {t:?}; use avg, wavelet, mnist or all")))?],
    };
    let outcome = run_table(&tasks, seeds, overrides)?;
    ensure_dir(out)?;
    write_csv(&out.join("table.csv"), &outcome.cells)?;
    write_csv(&out.join("cells.csv"), &outcome.seeds)?;
    write_text(&out.join("table.txt"), &outcome.text)?;
    Ok(outcome.text)
}
