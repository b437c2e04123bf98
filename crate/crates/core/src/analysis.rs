//! Closed-form analysis of a scalar multiplier on a linear classifier, and the
//! pairwise gradient-conflict diagnostic.
//!
//! With logits `c·z_i`, `z_i = Wᵀx_i`, the batch cross-entropy is
//! `Σ softplus((1−2y_i)·c·z_i)`. Its stationary point in `c` has no closed
//! form; two small-`c` expansions of it do, and both are exposed here.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{structural, Error, Result};
use crate::meta_trainer::task_meta_gradient;
use crate::models::{ModelSpec, ParamSet};
use crate::tasks::Episode;
use crate::wormhole::{InnerLoopConfig, WormholeSpec};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_lengths(z: &[f64], y: &[f64]) -> Result<()> {
    if z.len() != y.len() {
        return structural(format!("{} activations but {} labels", z.len(), y.len()));
    }
    Ok(())
}

/// Exact `∂/∂c Σ softplus((1−2y_i)·c·z_i)`
/// = `−Σ_{y=1} (1−σ(c z_i)) z_i + Σ_{y=0} σ(c z_i) z_i`.
pub fn dloss_dc(z: &[f64], y: &[f64], c: f64) -> Result<f64> {
    check_lengths(z, y)?;
    Ok(z.iter()
        .zip(y)
        .map(|(&zi, &yi)| if yi == 1.0 { -(1.0 - sigmoid(c * zi)) * zi } else { sigmoid(c * zi) * zi })
        .sum())
}

/// Gradient under `σ(cz) ≈ 1/2 + cz/4`: `Σ (1/2 + c z_i/4 − y_i) z_i`.
pub fn dloss_dc_taylor(z: &[f64], y: &[f64], c: f64) -> Result<f64> {
    check_lengths(z, y)?;
    Ok(z.iter().zip(y).map(|(&zi, &yi)| (0.5 + 0.25 * c * zi - yi) * zi).sum())
}

fn sum_sq(z: &[f64]) -> Result<f64> {
    if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("activation {bad} is not finite")));
    }
    let s: f64 = z.iter().map(|v| v * v).sum();
    if s == 0.0 {
        return Err(Error::Degenerate("all activations are zero".into()));
    }
    Ok(s)
}

/// `c* = Σ_i I[z_i + Δτ > 0]·z_i / Σ_i z_i²`, the minimiser of the quadratic
/// surrogate `Σ_i [y_i(−c z_i + c² z_i²/2) + (1−y_i) c² z_i²/2]` with
/// `y_i = I[z_i + Δτ > 0]`.
pub fn c_star(z: &[f64], delta_tau: f64) -> Result<f64> {
    let den = sum_sq(z)?;
    let num: f64 = z.iter().filter(|&&zi| zi + delta_tau > 0.0).sum();
    Ok(num / den)
}

/// Stationary point of the gradient under `σ(cz) ≈ 1/2 + cz/4`:
/// `c = 4 Σ_i (y_i − 1/2) z_i / Σ_i z_i²`.
pub fn c_star_corrected(z: &[f64], delta_tau: f64) -> Result<f64> {
    let den = sum_sq(z)?;
    let num: f64 = z.iter().map(|&zi| if zi + delta_tau > 0.0 { 0.5 * zi } else { -0.5 * zi }).sum();
    Ok(4.0 * num / den)
}

/// Both fixed points for one batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CStar {
    pub c_star: f64,
    pub corrected: f64,
}

pub fn c_star_pair(z: &[f64], delta_tau: f64) -> Result<CStar> {
    Ok(CStar { c_star: c_star(z, delta_tau)?, corrected: c_star_corrected(z, delta_tau)? })
}

/// Median `|c* − 1|` per batch size, over `trials` batches of
/// `x ~ Uniform[0,1]^d` with `z = Wᵀx − τ·ΣW` and labels `I[z > 0]`.
/// With `balanced`, batches with fewer than ⌊K/4⌋ of either class are redrawn.
pub fn c_star_convergence(
    rng: &mut impl Rng,
    w: &[f64],
    tau: f64,
    sizes: &[usize],
    trials: usize,
    balanced: bool,
) -> Result<Vec<f64>> {
    if w.is_empty() || trials == 0 {
        return Err(Error::Contract("need a non-empty W and at least one trial".into()));
    }
    if sizes.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::Contract(format!("batch sizes must increase, got {sizes:?}")));
    }
    let offset = tau * w.iter().sum::<f64>();
    let d = w.len();
    let mut medians = Vec::with_capacity(sizes.len());
    for &k in sizes {
        let mut devs = Vec::with_capacity(trials);
        for _ in 0..trials {
            let z = loop {
                let z: Vec<f64> = (0..k)
                    .map(|_| (0..d).map(|j| w[j] * rng.gen::<f64>()).sum::<f64>() - offset)
                    .collect();
                let pos = z.iter().filter(|&&v| v > 0.0).count();
                if !balanced || (pos >= k / 4 && k - pos >= k / 4) {
                    break z;
                }
            };
            devs.push((c_star(&z, 0.0)? - 1.0).abs());
        }
        devs.sort_by(|a, b| a.total_cmp(b));
        let n = devs.len();
        medians.push(if n % 2 == 1 { devs[n / 2] } else { 0.5 * (devs[n / 2 - 1] + devs[n / 2]) });
    }
    Ok(medians)
}

/// Pairwise cosine similarity of per-episode meta-gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictMatrix {
    pub cosine: Vec<Vec<f64>>,
    /// Episodes whose meta-gradient is exactly zero; their rows hold 0 off the diagonal.
    pub zero_norm: Vec<bool>,
}

impl ConflictMatrix {
    fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        self.cosine
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().filter(move |(j, _)| *j != i).map(|(_, &v)| v))
    }

    pub fn min_off_diagonal(&self) -> f64 {
        self.off_diagonal().fold(f64::INFINITY, f64::min)
    }

    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.cosine.len();
        self.off_diagonal().sum::<f64>() / (n * (n - 1)) as f64
    }
}

pub fn cosine_matrix(grads: &[Vec<f64>]) -> ConflictMatrix {
    let norms: Vec<f64> = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let zero_norm: Vec<bool> = norms.iter().map(|&n| n == 0.0).collect();
    let cosine = (0..grads.len())
        .map(|i| {
            (0..grads.len())
                .map(|j| {
                    if i == j {
                        1.0
                    } else if zero_norm[i] || zero_norm[j] {
                        0.0
                    } else {
                        let dot: f64 = grads[i].iter().zip(&grads[j]).map(|(a, b)| a * b).sum();
                        (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
                    }
                })
                .collect()
        })
        .collect();
    ConflictMatrix { cosine, zero_norm }
}

/// Cosine similarity between the meta-gradients of every pair of episodes.
pub fn conflict_matrix(
    theta: &ParamSet,
    model: &ModelSpec,
    wormhole: &WormholeSpec,
    episodes: &[Episode],
    inner: &InnerLoopConfig,
) -> Result<ConflictMatrix> {
    if episodes.len() < 2 {
        return Err(Error::Contract("conflict matrix needs at least two episodes".into()));
    }
    let grads = episodes
        .iter()
        .map(|ep| task_meta_gradient(theta, ep, model, wormhole, inner).map(|o| o.grad))
        .collect::<Result<Vec<_>>>()?;
    Ok(cosine_matrix(&grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};
    use crate::models::bce_with_logits;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dloss_dc_examples() {
        assert_eq!(dloss_dc(&[1.0], &[1.0], 0.0).unwrap(), -0.5);
        // −(1−½)·1 + ½·(−1)
        assert_eq!(dloss_dc(&[1.0, -1.0], &[1.0, 0.0], 0.0).unwrap(), -1.0);
        assert!(matches!(dloss_dc(&[1.0], &[], 0.0), Err(Error::Structural(_))));
    }

    #[test]
    fn dloss_dc_matches_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let n = rng.gen_range(1..12);
            let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
            let c = rng.gen_range(-2.0..2.0);
            let tape = Tape::new();
            let cv = tape.leaf(Tensor::scalar(c));
            let zv = tape.constant(Tensor::new(vec![n, 1], z.clone()).unwrap());
            let loss = bce_with_logits(zv.mul(cv).unwrap(), &y).unwrap();
            let g = tape.grad(loss, &[cv], false).unwrap()[0].item().unwrap();
            let d = dloss_dc(&z, &y, c).unwrap();
            assert!((g - d).abs() <= 1e-10 * g.abs().max(1.0), "{g} vs {d}");
        }
    }

    #[test]
    fn c_star_examples() {
        assert_eq!(c_star(&[2.0], 1.0).unwrap(), 0.5);
        assert_eq!(c_star(&[1.0, -1.0], 1e-12).unwrap(), 0.5);
        assert!(matches!(c_star(&[0.0, 0.0], 0.0), Err(Error::Degenerate(_))));
        // 4·(½·2)/4
        assert_eq!(c_star_corrected(&[2.0], 1.0).unwrap(), 1.0);
    }

    #[test]
    fn corrected_fixed_point_zeroes_its_gradient() {
        let z = [0.3, -0.7, 1.1, 0.2, -0.4];
        let y: Vec<f64> = z.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        let c = c_star_corrected(&z, 0.0).unwrap();
        assert!(dloss_dc_taylor(&z, &y, c).unwrap().abs() < 1e-14);
    }

    #[test]
    fn taylor_gradient_is_close_for_small_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.gen_range(1..20);
            let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let y: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
            let c = rng.gen_range(-0.1..0.1);
            let gap = (dloss_dc(&z, &y, c).unwrap() - dloss_dc_taylor(&z, &y, c).unwrap()).abs();
            assert!(gap < 0.05, "{gap}");
        }
    }

    #[test]
    fn convergence_rejects_degenerate_and_repeats() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            c_star_convergence(&mut rng, &[0.0; 5], 0.5, &[10], 3, false),
            Err(Error::Degenerate(_))
        ));
        assert!(c_star_convergence(&mut rng, &[1.0; 5], 0.5, &[10, 10], 3, false).is_err());
        let w = [0.6; 5];
        let a = c_star_convergence(&mut ChaCha8Rng::seed_from_u64(4), &w, 0.5, &[10, 100], 51, true).unwrap();
        let b = c_star_convergence(&mut ChaCha8Rng::seed_from_u64(4), &w, 0.5, &[10, 100], 51, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn cosine_matrix_sentinels() {
        let m = cosine_matrix(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![-2.0, 0.0]]);
        assert_eq!(m.zero_norm, vec![false, true, false]);
        assert_eq!(m.cosine[0][1], 0.0);
        assert_eq!(m.cosine[1][1], 1.0);
        assert_eq!(m.cosine[0][2], -1.0);
        assert_eq!(m.min_off_diagonal(), -1.0);
    }
}
