use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wormhole_core::analysis::{c_star_convergence, conflict_matrix, ConflictMatrix};
use wormhole_core::autodiff::gradcheck::{op_probes, random_graph_suite};
use wormhole_core::autodiff::{check_gradient, check_second_order};
use wormhole_core::meta_trainer::initial_theta;
use wormhole_core::models::ParamSet;
use wormhole_core::tasks::{avg_threshold_episode, sign_flipped, Split, TaskKind, TaskSampler};
use wormhole_core::wormhole::WormholeKind;

use crate::config::ExperimentConfig;
use crate::output::{ensure_dir, write_csv};
use crate::CliError;

pub const FIRST_ORDER_TOL: f64 = 1e-6;
pub const SECOND_ORDER_TOL: f64 = 1e-4;

/// Weight scale `a` in `W = (a/d)·1` for which `E[z⁺] / E[z²] = 1` at
/// `d = 5`, `τ = 0.5`, so the population fixed point sits at `c* = 1`.
pub const CSTAR_SCALE: f64 = 3.09;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckReport {
    pub graphs: usize,
    pub first_order: f64,
    pub second_order: f64,
    pub probe_first_order: f64,
    pub probe_second_order: f64,
}

pub fn gradcheck(seed: u64, graphs: usize) -> Result<GradcheckReport, CliError> {
    let suite = random_graph_suite(seed, graphs)?;
    let (mut pf, mut ps) = (0.0f64, 0.0f64);
    for p in op_probes(seed) {
        pf = pf.max(check_gradient(&p.f, &p.input, 1e-5)?);
        ps = ps.max(check_second_order(&p.f, &p.input, 1e-4)?);
    }
    Ok(GradcheckReport {
        graphs,
        first_order: suite.first_order.max_rel,
        second_order: suite.second_order.max_rel,
        probe_first_order: pf,
        probe_second_order: ps,
    })
}

pub fn cmd_gradcheck(seed: u64, graphs: usize) -> Result<String, CliError> {
    let r = gradcheck(seed, graphs)?;
    let text = format!(
        "random graphs: {}\nmax first-order rel err: {:.3e}\nmax second-order rel err: {:.3e}\n\
         op probes first-order: {:.3e}\nop probes second-order: {:.3e}",
        r.graphs, r.first_order, r.second_order, r.probe_first_order, r.probe_second_order
    );
    if r.first_order.max(r.probe_first_order) >= FIRST_ORDER_TOL
        || r.second_order.max(r.probe_second_order) >= SECOND_ORDER_TOL
    {
        return Err(CliError::Check(text));
    }
    Ok(text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CStarRow {
    pub batch_size: usize,
    pub median_abs_dev: f64,
}

pub fn cstar_rows(seed: u64, sizes: &[usize], trials: usize, balanced: bool) -> Result<Vec<CStarRow>, CliError> {
    let d = 5;
    let w = vec![CSTAR_SCALE / d as f64; d];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let medians = c_star_convergence(&mut rng, &w, 0.5, sizes, trials, balanced)?;
    Ok(sizes.iter().zip(medians).map(|(&batch_size, median_abs_dev)| CStarRow { batch_size, median_abs_dev }).collect())
}

/// Writes `cstar.csv` when `out` is given, otherwise returns the CSV text.
/// Fails the check when the largest batch is not closer to 1 than the smallest.
pub fn cmd_cstar(seed: u64, sizes: &[usize], trials: usize, balanced: bool, out: Option<&Path>) -> Result<String, CliError> {
    let rows = cstar_rows(seed, sizes, trials, balanced)?;
    let mut text = String::from("batch_size,median_abs_dev\n");
    for r in &rows {
        let _ = writeln!(text, "{},{}", r.batch_size, r.median_abs_dev);
    }
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_csv(&dir.join("cstar.csv"), &rows)?;
    }
    match (rows.first(), rows.last()) {
        (Some(a), Some(b)) if rows.len() > 1 && b.median_abs_dev >= a.median_abs_dev => Err(CliError::Check(format!(
            "{text}median |c*-1| does not shrink: K={} gives {}, K={} gives {}",
            a.batch_size, a.median_abs_dev, b.batch_size, b.median_abs_dev
        ))),
        _ => Ok(text.trim_end().to_string()),
    }
}

fn zero_like(theta: &ParamSet) -> Result<ParamSet, CliError> {
    Ok(theta.unflatten(&vec![0.0; theta.total_dim()])?)
}

/// Cosine matrix of Avg-Threshold meta-gradients. With `flipped`, the
/// episodes are one task and its sign flip at θ = 0; otherwise `episodes`
/// sampled tasks at the initial θ.
pub fn conflict(seed: u64, episodes: usize, kind: WormholeKind, flipped: bool) -> Result<ConflictMatrix, CliError> {
    let mut cfg = ExperimentConfig::preset(TaskKind::AvgThreshold);
    cfg.meta.seed = seed;
    cfg.meta.wormhole.kind = kind;
    let TaskSampler::AvgThreshold(task) = crate::source(&cfg)?.sampler else { unreachable!("avg preset") };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = initial_theta(&cfg.meta)?;
    let (theta, eps) = if flipped {
        let ep = avg_threshold_episode(&mut rng, &task, 0.5, 1.0)?;
        (zero_like(&theta)?, vec![sign_flipped(&ep), ep])
    } else {
        if episodes < 2 {
            return Err(CliError::Usage("--episodes must be at least 2".into()));
        }
        let sampler = TaskSampler::AvgThreshold(task);
        let eps = (0..episodes).map(|_| sampler.sample(&mut rng, Split::MetaTrain)).collect::<Result<Vec<_>, _>>()?;
        (theta, eps)
    };
    Ok(conflict_matrix(&theta, &cfg.meta.model, &cfg.meta.wormhole, &eps, &cfg.meta.inner)?)
}

pub fn cmd_conflict(seed: u64, episodes: usize, kind: WormholeKind, flipped: bool) -> Result<String, CliError> {
    let m = conflict(seed, episodes, kind, flipped)?;
    let zero = m.zero_norm.iter().filter(|&&z| z).count();
    let text = format!(
        "episodes: {}\nmin off-diagonal cosine: {:.9}\nmean off-diagonal cosine: {:.9}\nzero-norm gradients: {zero}",
        m.cosine.len(),
        m.min_off_diagonal(),
        m.mean_off_diagonal()
    );
    if flipped && m.min_off_diagonal() > -0.999 {
        return Err(CliError::Check(format!("{text}\nsign-flipped pair should be opposed")));
    }
    Ok(text)
}
