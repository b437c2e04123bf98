//! Episode samplers for the three task families and MNIST IDX ingestion.

mod avg_threshold;
mod mnist;
mod wavelet;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::Loss;

pub use avg_threshold::{
    avg_threshold_episode, avg_threshold_label, sample_avg_threshold, sign_flipped, AvgThresholdConfig,
};
pub use mnist::{
    build_mnist_episode, load_mnist_dir, load_mnist_idx, parse_idx_images, parse_idx_labels, sample_mnist_episode,
    MnistDataset, MnistSplit, IMAGE_MAGIC, LABEL_MAGIC,
};
pub use wavelet::{mexican_hat, sample_wavelet, wavelet_grid, wavelet_target, WaveletConfig};

/// Inputs `x: [K, d]` with targets `y: [K]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Parameters that define one task instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMeta {
    AvgThreshold { tau: f64 },
    Wavelet { mu: f64 },
    /// `digits[j]` is the digit carrying label `j`.
    Mnist { digits: [u8; 2] },
}

/// One sampled task: support and query sets drawn from the same task parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub support: Batch,
    pub query: Batch,
    pub meta: TaskMeta,
    /// Task sign `s ∈ {−1, +1}` (always +1 for MNIST).
    pub sign: f64,
    pub loss: Loss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    AvgThreshold,
    Wavelet,
    Mnist,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::AvgThreshold => "avg_threshold",
            TaskKind::Wavelet => "wavelet",
            TaskKind::Mnist => "mnist",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "avg_threshold" | "avg" => TaskKind::AvgThreshold,
            "wavelet" => TaskKind::Wavelet,
            "mnist" => TaskKind::Mnist,
            other => return Err(Error::Contract(format!("unknown task {other:?}"))),
        })
    }
}

/// Which pool an episode is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    MetaTrain,
    MetaTest,
}

/// A task distribution `p(T)`.
#[derive(Clone, Debug)]
pub enum TaskSampler {
    AvgThreshold(AvgThresholdConfig),
    Wavelet(WaveletConfig),
    Mnist { train: Arc<MnistDataset>, test: Arc<MnistDataset>, k_query: usize },
}

/// Threshold redraws allowed when a drawn τ cannot produce a balanced batch.
const TAU_REDRAWS: usize = 100;

impl TaskSampler {
    pub fn sample(&self, rng: &mut impl Rng, split: Split) -> Result<Episode> {
        match self {
            TaskSampler::AvgThreshold(cfg) => {
                let mut last = None;
                for _ in 0..TAU_REDRAWS {
                    match sample_avg_threshold(rng, cfg) {
                        Ok(ep) => return Ok(ep),
                        Err(e @ Error::Sampling(_)) => last = Some(e),
                        Err(e) => return Err(e),
                    }
                }
                Err(last.expect("at least one attempt"))
            }
            TaskSampler::Wavelet(cfg) => sample_wavelet(rng, cfg),
            TaskSampler::Mnist { train, test, k_query } => {
                let ds = match split {
                    Split::MetaTrain => train,
                    Split::MetaTest => test,
                };
                sample_mnist_episode(ds, rng, *k_query)
            }
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            TaskSampler::AvgThreshold(_) => TaskKind::AvgThreshold,
            TaskSampler::Wavelet(_) => TaskKind::Wavelet,
            TaskSampler::Mnist { .. } => TaskKind::Mnist,
        }
    }

    /// True when the MNIST pools are the generated stand-in rather than IDX files.
    pub fn is_synthetic(&self) -> bool {
        matches!(self, TaskSampler::Mnist { train, .. } if train.synthetic)
    }
}
