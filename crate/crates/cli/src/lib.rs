//! Experiment harness: config files, single runs, the method × step grid and
//! diagnostics, with JSON/CSV outputs.

pub mod config;
pub mod diag;
pub mod output;
pub mod run;
pub mod table;

use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;
use wormhole_core::tasks::{load_mnist_dir, MnistDataset, TaskSampler};

use config::{ExperimentConfig, TaskSettings};

/// Directory holding the four MNIST IDX files (optionally gzipped).
pub const MNIST_ENV: &str = "WORMHOLE_MNIST_DIR";

/// Images per digit in the generated stand-in pools.
const SYNTHETIC_TRAIN_PER_CLASS: usize = 600;
const SYNTHETIC_TEST_PER_CLASS: usize = 100;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("data: {0}")]
    Data(String),
    #[error("diverged: {0}")]
    Divergence(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Io(_) | CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Check(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<wormhole_core::Error> for CliError {
    fn from(e: wormhole_core::Error) -> Self {
        use wormhole_core::Error as E;
        match e {
            E::Io(io) => CliError::Io(io.to_string()),
            E::Format(_) | E::Consistency(_) | E::Sampling(_) => CliError::Data(e.to_string()),
            E::Training { .. } => CliError::Divergence(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

/// A sampler plus whether its data is the generated MNIST stand-in.
pub struct Source {
    pub sampler: TaskSampler,
    pub synthetic: bool,
}

/// MNIST pools from [`MNIST_ENV`], or the generated stand-in when the variable
/// is unset or the config asks for it. A set but unreadable directory is an error.
pub fn mnist_pools(force_synthetic: bool) -> Result<(Arc<MnistDataset>, Arc<MnistDataset>, bool), CliError> {
    match std::env::var_os(MNIST_ENV).map(PathBuf::from) {
        Some(dir) if !force_synthetic => {
            let split = load_mnist_dir(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
            Ok((Arc::new(split.train), Arc::new(split.test), false))
        }
        _ => Ok((
            Arc::new(MnistDataset::synthetic(1, SYNTHETIC_TRAIN_PER_CLASS)),
            Arc::new(MnistDataset::synthetic(2, SYNTHETIC_TEST_PER_CLASS)),
            true,
        )),
    }
}

pub fn source(cfg: &ExperimentConfig) -> Result<Source, CliError> {
    Ok(match &cfg.task {
        TaskSettings::AvgThreshold(a) => Source { sampler: TaskSampler::AvgThreshold(a.clone()), synthetic: false },
        TaskSettings::Wavelet(w) => Source { sampler: TaskSampler::Wavelet(w.clone()), synthetic: false },
        TaskSettings::Mnist { k_query, force_synthetic, .. } => {
            let (train, test, synthetic) = mnist_pools(*force_synthetic)?;
            Source { sampler: TaskSampler::Mnist { train, test, k_query: *k_query }, synthetic }
        }
    })
}
