use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Batch, Episode, TaskMeta};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::Loss;

/// Batch redraws allowed before a threshold is declared infeasible for balancing.
const BALANCE_RETRIES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvgThresholdConfig {
    pub d: usize,
    pub k_support: usize,
    pub k_query: usize,
    pub tau_range: (f64, f64),
    /// Require at least ⌊K/4⌋ examples of each class in every batch.
    pub balanced: bool,
    /// Average the cross-entropy over each batch instead of summing it.
    pub mean_loss: bool,
}

impl Default for AvgThresholdConfig {
    fn default() -> Self {
        Self { d: 5, k_support: 10, k_query: 10, tau_range: (0.0, 1.0), balanced: true, mean_loss: false }
    }
}

/// `1` if `s·avg(x) > s·τ`, else `0`.
pub fn avg_threshold_label(x: &[f64], tau: f64, sign: f64) -> f64 {
    let avg = x.iter().sum::<f64>() / x.len() as f64;
    if sign * avg > sign * tau {
        1.0
    } else {
        0.0
    }
}

fn draw_batch(rng: &mut impl Rng, cfg: &AvgThresholdConfig, k: usize, tau: f64, sign: f64) -> Result<Batch> {
    let min_per_class = if cfg.balanced { k / 4 } else { 0 };
    for _ in 0..BALANCE_RETRIES {
        let x: Vec<f64> = (0..k * cfg.d).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<f64> = x.chunks(cfg.d).map(|row| avg_threshold_label(row, tau, sign)).collect();
        let ones = y.iter().filter(|&&v| v == 1.0).count();
        if ones >= min_per_class && k - ones >= min_per_class {
            return Ok(Batch { x: Tensor::new(vec![k, cfg.d], x)?, y: Tensor::vector(y) });
        }
    }
    Err(Error::Sampling(format!(
        "no balanced batch of {k} for tau={tau:.4} after {BALANCE_RETRIES} draws"
    )))
}

/// An episode for a given threshold and sign.
pub fn avg_threshold_episode(rng: &mut impl Rng, cfg: &AvgThresholdConfig, tau: f64, sign: f64) -> Result<Episode> {
    if cfg.d == 0 || cfg.k_support == 0 || cfg.k_query == 0 {
        return Err(Error::Contract("avg-threshold needs d, K_support and K_query >= 1".into()));
    }
    let support = draw_batch(rng, cfg, cfg.k_support, tau, sign)?;
    let query = draw_batch(rng, cfg, cfg.k_query, tau, sign)?;
    let loss = if cfg.mean_loss { Loss::BceMean } else { Loss::Bce };
    Ok(Episode { support, query, meta: TaskMeta::AvgThreshold { tau }, sign, loss })
}

/// τ ~ Uniform(tau_range), s ~ Uniform{−1, +1}, x ~ Uniform[0,1]^d.
pub fn sample_avg_threshold(rng: &mut impl Rng, cfg: &AvgThresholdConfig) -> Result<Episode> {
    let (lo, hi) = cfg.tau_range;
    let tau = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    avg_threshold_episode(rng, cfg, tau, sign)
}

/// The same inputs and threshold with the opposite sign, so every label flips.
pub fn sign_flipped(ep: &Episode) -> Episode {
    let flip = |b: &Batch| Batch { x: b.x.clone(), y: b.y.map(|v| 1.0 - v) };
    Episode {
        support: flip(&ep.support),
        query: flip(&ep.query),
        meta: ep.meta.clone(),
        sign: -ep.sign,
        loss: ep.loss,
    }
}
