//! Flat `key = value` experiment files.
//!
//! Blank lines and `#` comments are ignored. Every key must be known and may
//! appear once; keys not given take the value from the task's preset, so a
//! file holding only `task = wavelet` is the wavelet preset.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use wormhole_core::exec::Execution;
use wormhole_core::meta_trainer::{MetaConfig, Optimizer};
use wormhole_core::models::ModelSpec;
use wormhole_core::tasks::{AvgThresholdConfig, TaskKind, WaveletConfig};
use wormhole_core::wormhole::{InnerLoopConfig, WormholeKind, WormholeSpec};

use crate::CliError;

pub const AVG_PRESET: &str = include_str!("../presets/avg_threshold.cfg");
pub const WAVELET_PRESET: &str = include_str!("../presets/wavelet.cfg");
pub const MNIST_PRESET: &str = include_str!("../presets/mnist.cfg");

const MNIST_PIXELS: usize = 784;

pub fn preset_text(task: TaskKind) -> &'static str {
    match task {
        TaskKind::AvgThreshold => AVG_PRESET,
        TaskKind::Wavelet => WAVELET_PRESET,
        TaskKind::Mnist => MNIST_PRESET,
    }
}

/// Task-specific settings that are not part of [`MetaConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSettings {
    AvgThreshold(AvgThresholdConfig),
    Wavelet(WaveletConfig),
    Mnist { k_query: usize, hidden: Vec<usize>, force_synthetic: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskSettings,
    pub meta: MetaConfig,
}

impl ExperimentConfig {
    pub fn kind(&self) -> TaskKind {
        match self.task {
            TaskSettings::AvgThreshold(_) => TaskKind::AvgThreshold,
            TaskSettings::Wavelet(_) => TaskKind::Wavelet,
            TaskSettings::Mnist { .. } => TaskKind::Mnist,
        }
    }

    pub fn preset(task: TaskKind) -> Self {
        parse_onto(preset_text(task), base).expect("shipped presets parse")
    }

    /// Applies `key=value` overrides on top of this config.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = self.clone();
        for (i, o) in overrides.iter().enumerate() {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override {o:?} is not of the form key=value")))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "task" {
                return Err(CliError::Usage("the task cannot be overridden".into()));
            }
            set(&mut cfg, k, v).map_err(|m| CliError::Config(format!("--set #{}: {m}", i + 1)))?;
        }
        cfg.rebuild_model();
        cfg.meta.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    fn rebuild_model(&mut self) {
        let wide = self.meta.model.wide_filter_init;
        self.meta.model = match &self.task {
            TaskSettings::AvgThreshold(a) => ModelSpec::linear_scalar_out(a.d),
            TaskSettings::Wavelet(w) => ModelSpec { wide_filter_init: wide, ..ModelSpec::linear_vector_filter(w.n) },
            TaskSettings::Mnist { hidden, .. } => {
                let mut sizes = vec![MNIST_PIXELS];
                sizes.extend(hidden);
                sizes.push(2);
                ModelSpec::mlp(&sizes)
            }
        };
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn base(task: TaskKind) -> ExperimentConfig {
    let (task, model) = match task {
        TaskKind::AvgThreshold => {
            (TaskSettings::AvgThreshold(AvgThresholdConfig::default()), ModelSpec::linear_scalar_out(5))
        }
        TaskKind::Wavelet => (TaskSettings::Wavelet(WaveletConfig::default()), ModelSpec::linear_vector_filter(50)),
        TaskKind::Mnist => (
            TaskSettings::Mnist { k_query: 5, hidden: vec![64], force_synthetic: false },
            ModelSpec::mlp(&[MNIST_PIXELS, 64, 2]),
        ),
    };
    ExperimentConfig {
        task,
        meta: MetaConfig {
            model,
            wormhole: WormholeSpec::new(WormholeKind::TanhScalar),
            inner: InnerLoopConfig::default(),
            beta: 0.1,
            optimizer: Optimizer::Sgd,
            epochs: 100,
            meta_batch: 10,
            eval_episodes: 200,
            eval_every: 10,
            seed: 0,
            execution: Execution::Parallel,
        },
    }
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Parses a config file. Errors name the offending line.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    parse_onto(text, ExperimentConfig::preset)
}

fn parse_onto(text: &str, start: fn(TaskKind) -> ExperimentConfig) -> Result<ExperimentConfig, CliError> {
    let at = |n: usize, m: String| CliError::Config(format!("line {n}: {m}"));
    let mut entries = Vec::new();
    for (n, line) in lines(text) {
        let (k, v) = line.split_once('=').ok_or_else(|| at(n, format!("expected key = value, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(at(n, "empty key".into()));
        }
        if let Some((first, _, _)) = entries.iter().find(|(_, key, _)| *key == k) {
            return Err(at(n, format!("{k:?} already set on line {first}")));
        }
        entries.push((n, k, v));
    }

    let task = match entries.iter().find(|(_, k, _)| *k == "task") {
        Some(&(n, _, v)) => TaskKind::from_str(v).map_err(|e| at(n, e.to_string()))?,
        None => TaskKind::AvgThreshold,
    };
    let mut cfg = start(task);
    for &(n, k, v) in entries.iter().filter(|(_, k, _)| *k != "task") {
        set(&mut cfg, k, v).map_err(|m| at(n, m))?;
    }
    cfg.rebuild_model();
    cfg.meta.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn num<T: FromStr>(k: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{k}: cannot parse {v:?}"))
}

fn positive(k: &str, v: &str) -> Result<usize, String> {
    match num::<usize>(k, v)? {
        0 => Err(format!("{k} must be at least 1")),
        n => Ok(n),
    }
}

fn finite(k: &str, v: &str) -> Result<f64, String> {
    let x: f64 = num(k, v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{k} must be finite, got {v}"))
    }
}

fn non_negative(k: &str, v: &str) -> Result<f64, String> {
    let x = finite(k, v)?;
    if x < 0.0 {
        return Err(format!("{k} must be non-negative, got {v}"));
    }
    Ok(x)
}

fn flag(k: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("{k} must be true or false, got {v:?}")),
    }
}

fn list(k: &str, v: &str) -> Result<Vec<usize>, String> {
    v.split(',').map(|s| num::<usize>(k, s.trim())).collect()
}

fn set(cfg: &mut ExperimentConfig, k: &str, v: &str) -> Result<(), String> {
    let m = &mut cfg.meta;
    match k {
        "seed" => m.seed = num(k, v)?,
        "epochs" => m.epochs = positive(k, v)?,
        "meta_batch" => m.meta_batch = positive(k, v)?,
        "eval_episodes" => m.eval_episodes = positive(k, v)?,
        "eval_every" => m.eval_every = positive(k, v)?,
        "execution" => {
            m.execution = match v {
                "parallel" => Execution::Parallel,
                "sequential" => Execution::Sequential,
                _ => return Err(format!("execution must be parallel or sequential, got {v:?}")),
            }
        }
        "wormhole.kind" => m.wormhole.kind = WormholeKind::from_str(v).map_err(|e| e.to_string())?,
        "wormhole.selector" => m.wormhole.selector = if v == "all" { None } else { Some(list(k, v)?) },
        "inner.alpha" => m.inner.alpha = non_negative(k, v)?,
        "inner.gamma" => m.inner.gamma = non_negative(k, v)?,
        "inner.n_inner" => m.inner.n_inner = positive(k, v)?,
        "inner.n_c" => m.inner.n_c = num(k, v)?,
        "inner.c_init" => m.inner.c_init = finite(k, v)?,
        "inner.second_order" => m.inner.second_order = flag(k, v)?,
        "inner.through_c" => m.inner.differentiate_through_c = flag(k, v)?,
        "outer.beta" => {
            m.beta = finite(k, v)?;
            if m.beta <= 0.0 {
                return Err(format!("outer.beta must be positive, got {v}"));
            }
        }
        "outer.optimizer" => {
            m.optimizer = match v {
                "sgd" => Optimizer::Sgd,
                "adam" => Optimizer::adam(),
                _ => return Err(format!("outer.optimizer must be sgd or adam, got {v:?}")),
            }
        }
        "model.wide_init" => match cfg.task {
            TaskSettings::Wavelet(_) => m.model.wide_filter_init = flag(k, v)?,
            _ => return Err(format!("{k} applies to the wavelet task only")),
        },
        _ => set_task(&mut cfg.task, k, v)?,
    }
    Ok(())
}

fn set_task(task: &mut TaskSettings, k: &str, v: &str) -> Result<(), String> {
    match task {
        TaskSettings::AvgThreshold(a) => match k {
            "task.d" => a.d = positive(k, v)?,
            "task.k_support" => a.k_support = positive(k, v)?,
            "task.k_query" => a.k_query = positive(k, v)?,
            "task.balanced" => a.balanced = flag(k, v)?,
            "task.mean_loss" => a.mean_loss = flag(k, v)?,
            _ => return Err(unknown(k, "avg_threshold")),
        },
        TaskSettings::Wavelet(w) => match k {
            "task.n" => {
                w.n = num(k, v)?;
                if w.n < 8 {
                    return Err(format!("task.n must be at least 8, got {v}"));
                }
            }
            "task.k" => w.k = positive(k, v)?,
            "task.sigma" => {
                w.sigma = finite(k, v)?;
                if w.sigma <= 0.0 {
                    return Err(format!("task.sigma must be positive, got {v}"));
                }
            }
            "task.amplitude" => w.amplitude = finite(k, v)?,
            _ => return Err(unknown(k, "wavelet")),
        },
        TaskSettings::Mnist { k_query, hidden, force_synthetic } => match k {
            "task.k_query" => *k_query = positive(k, v)?,
            "task.synthetic" => *force_synthetic = flag(k, v)?,
            "model.hidden" => {
                *hidden = list(k, v)?;
                if hidden.contains(&0) {
                    return Err("model.hidden sizes must be at least 1".into());
                }
            }
            _ => return Err(unknown(k, "mnist")),
        },
    }
    Ok(())
}

fn unknown(k: &str, task: &str) -> String {
    format!("unknown key {k:?} for task {task}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_published_settings() {
        let avg = ExperimentConfig::preset(TaskKind::AvgThreshold).meta;
        assert_eq!((avg.epochs, avg.meta_batch, avg.optimizer, avg.beta), (150, 10, Optimizer::Sgd, 0.1));
        assert_eq!(avg.inner.alpha, 1.0);
        let wav = ExperimentConfig::preset(TaskKind::Wavelet).meta;
        assert_eq!((wav.epochs, wav.inner.alpha, wav.inner.gamma, wav.beta, wav.inner.n_c), (1500, 0.05, 1.0, 1e-3, 5));
        let mn = ExperimentConfig::preset(TaskKind::Mnist).meta;
        assert_eq!(mn.model.layer_sizes, vec![784, 64, 2]);
        assert_eq!(mn.wormhole.selector, Some(vec![1]));
    }

    #[test]
    fn task_line_alone_is_the_preset() {
        for t in [TaskKind::AvgThreshold, TaskKind::Wavelet, TaskKind::Mnist] {
            let short = parse_config(&format!("task = {}\n", t.as_str())).unwrap();
            assert_eq!(short, ExperimentConfig::preset(t));
        }
    }

    #[test]
    fn unknown_key_is_named_with_its_line() {
        let err = parse_config("task = avg\n\n# note\nfoo = 1\n").unwrap_err().to_string();
        assert!(err.contains("line 4") && err.contains("foo"), "{err}");
        let err = parse_config("task = avg\ntask.n = 20\n").unwrap_err().to_string();
        assert!(err.contains("task.n"), "{err}");
    }

    #[test]
    fn bad_values_are_rejected() {
        for text in [
            "wormhole.kind = sideways",
            "outer.optimizer = rmsprop",
            "epochs = 0",
            "inner.alpha = -1",
            "inner.second_order = yes",
            "seed = 1\nseed = 2",
            "just words",
        ] {
            assert!(matches!(parse_config(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn overrides_apply_after_the_file() {
        let cfg = ExperimentConfig::preset(TaskKind::Wavelet)
            .with_overrides(&["epochs=3".into(), "task.n = 20".into(), "wormhole.kind=vanilla".into()])
            .unwrap();
        assert_eq!(cfg.meta.epochs, 3);
        assert_eq!(cfg.meta.model.layer_sizes, vec![20]);
        assert_eq!(cfg.meta.wormhole.kind, WormholeKind::Identity);
        assert!(cfg.with_overrides(&["task=mnist".into()]).is_err());
        assert!(cfg.with_overrides(&["epochs".into()]).is_err());
    }
}
