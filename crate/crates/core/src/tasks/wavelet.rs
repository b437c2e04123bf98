use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Batch, Episode, TaskMeta};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::Loss;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveletConfig {
    /// Grid points; the grid spans [−5, 5].
    pub n: usize,
    /// Shots in both support and query.
    pub k: usize,
    pub sigma: f64,
    pub amplitude: f64,
    pub mu_range: (f64, f64),
}

impl Default for WaveletConfig {
    fn default() -> Self {
        Self { n: 50, k: 10, sigma: 1.0, amplitude: 0.8, mu_range: (-2.5, 2.5) }
    }
}

/// `n` equispaced points on [−5, 5].
pub fn wavelet_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| -5.0 + 10.0 * i as f64 / (n - 1) as f64).collect()
}

/// `amplitude · (1 − u²) · exp(−u²/2)` with `u = (t − mu)/sigma`.
pub fn mexican_hat(grid: &[f64], mu: f64, sigma: f64, amplitude: f64) -> Vec<f64> {
    grid.iter()
        .map(|&t| {
            let u = (t - mu) / sigma;
            amplitude * (1.0 - u * u) * (-0.5 * u * u).exp()
        })
        .collect()
}

/// `x · f` for each row of `x`.
pub fn wavelet_target(x: &[f64], f: &[f64]) -> Vec<f64> {
    x.chunks(f.len()).map(|row| row.iter().zip(f).map(|(a, b)| a * b).sum()).collect()
}

fn draw(rng: &mut impl Rng, k: usize, f: &[f64]) -> Result<Batch> {
    let x: Vec<f64> = (0..k * f.len()).map(|_| rng.gen::<f64>()).collect();
    let y = wavelet_target(&x, f);
    Ok(Batch { x: Tensor::new(vec![k, f.len()], x)?, y: Tensor::vector(y) })
}

/// s ~ {−1, +1}, μ ~ Uniform(mu_range), filter `f = s·m`, x ~ Uniform(0,1)^n, y = x·f.
pub fn sample_wavelet(rng: &mut impl Rng, cfg: &WaveletConfig) -> Result<Episode> {
    if cfg.n < 8 {
        return Err(Error::Contract(format!("wavelet grid needs n >= 8, got {}", cfg.n)));
    }
    if !(cfg.sigma > 0.0) {
        return Err(Error::Contract(format!("wavelet sigma must be positive, got {}", cfg.sigma)));
    }
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let (lo, hi) = cfg.mu_range;
    let mu = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let f: Vec<f64> = mexican_hat(&wavelet_grid(cfg.n), mu, cfg.sigma, cfg.amplitude)
        .into_iter()
        .map(|v| sign * v)
        .collect();
    let support = draw(rng, cfg.k, &f)?;
    let query = draw(rng, cfg.k, &f)?;
    Ok(Episode { support, query, meta: TaskMeta::Wavelet { mu }, sign, loss: Loss::Mse })
}
