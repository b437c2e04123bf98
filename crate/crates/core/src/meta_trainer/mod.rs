//! The outer loop: meta-batches, meta-gradients through the inner loop,
//! optimizer steps, evaluation and per-epoch metrics.

mod optim;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::models::{forward, init_params, Loss, ModelSpec, ParamSet};
use crate::tasks::{Episode, Split, TaskSampler};
use crate::wormhole::{inner_adapt, InnerLoopConfig, WormholeSpec};

pub use optim::{adam_step, AdamState, Optimizer, OptimizerState};

/// Query losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Everything that defines a meta-training run except the task distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub model: ModelSpec,
    pub wormhole: WormholeSpec,
    pub inner: InnerLoopConfig,
    /// Outer step size.
    pub beta: f64,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub meta_batch: usize,
    pub eval_episodes: usize,
    /// Evaluate after every `eval_every`-th epoch; the last epoch is always evaluated.
    pub eval_every: usize,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.inner.validate()?;
        let bad = |m: String| Err(Error::Contract(m));
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.meta_batch == 0 {
            return bad("meta_batch must be at least 1".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        Ok(())
    }

    /// Generator for one of the [`INIT_STREAM`], [`TRAIN_STREAM`] and [`EVAL_STREAM`] draws.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

pub const INIT_STREAM: u64 = 0;
/// Meta-batches are drawn from this stream, epoch after epoch.
pub const TRAIN_STREAM: u64 = 1;
pub const EVAL_STREAM: u64 = 2;

/// One episode's contribution to a meta-step.
#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    /// Meta-gradient of the query loss, flattened in parameter order.
    pub grad: Vec<f64>,
    pub query_loss: f64,
    /// Mean adapted multiplier over the selected entries.
    pub c_mean: f64,
}

fn adapted_query<'t>(
    tape: &'t Tape,
    theta: &ParamSet,
    ep: &Episode,
    spec: &ModelSpec,
    wormhole: &WormholeSpec,
    inner: &InnerLoopConfig,
) -> Result<(ParamSet<crate::autodiff::Var<'t>>, crate::autodiff::Var<'t>, f64)> {
    let vars = theta.track(tape);
    let res = inner_adapt(&vars, spec, wormhole, &ep.support, ep.loss, inner)?;
    let c_mean = res.c.to_param().selected_mean(theta)?;
    let logits = forward(spec, &res.phi, tape.constant(ep.query.x.clone()))?;
    Ok((vars, logits, c_mean))
}

/// Query loss of one episode after adaptation, and its gradient w.r.t. `theta`.
pub fn episode_meta_gradient(theta: &ParamSet, ep: &Episode, cfg: &MetaConfig) -> Result<EpisodeOutcome> {
    task_meta_gradient(theta, ep, &cfg.model, &cfg.wormhole, &cfg.inner)
}

pub fn task_meta_gradient(
    theta: &ParamSet,
    ep: &Episode,
    model: &ModelSpec,
    wormhole: &WormholeSpec,
    inner: &InnerLoopConfig,
) -> Result<EpisodeOutcome> {
    let tape = Tape::new();
    let (vars, logits, c_mean) = adapted_query(&tape, theta, ep, model, wormhole, inner)?;
    let loss = ep.loss.eval(logits, &ep.query.y)?;
    let query_loss = loss.item()?;
    let grads = tape.grad(loss, &vars.vars(), false)?;
    let grad = grads.iter().flat_map(|g| g.value().data().to_vec()).collect();
    Ok(EpisodeOutcome { grad, query_loss, c_mean })
}

fn guard(epoch: usize, task: usize, o: &EpisodeOutcome) -> Result<()> {
    let reason = if !o.query_loss.is_finite() {
        Some(format!("query loss is {}", o.query_loss))
    } else if o.query_loss > DIVERGENCE_LIMIT {
        Some(format!("query loss {:.3e} exceeds {DIVERGENCE_LIMIT:e}", o.query_loss))
    } else if o.grad.iter().any(|g| !g.is_finite()) {
        Some("meta-gradient is not finite".into())
    } else {
        None
    };
    match reason {
        Some(reason) => Err(Error::Training { epoch, task, reason }),
        None => Ok(()),
    }
}

/// Sum over episodes of the per-episode meta-gradients, reduced in episode order.
pub fn meta_gradient(
    theta: &ParamSet,
    episodes: &[Episode],
    cfg: &MetaConfig,
    epoch: usize,
) -> Result<(Vec<f64>, Vec<EpisodeOutcome>)> {
    let outcomes = cfg.execution.map(episodes, |ep| episode_meta_gradient(theta, ep, cfg));
    let mut total = vec![0.0; theta.total_dim()];
    let mut kept = Vec::with_capacity(outcomes.len());
    for (task, o) in outcomes.into_iter().enumerate() {
        let o = o?;
        guard(epoch, task, &o)?;
        for (t, g) in total.iter_mut().zip(&o.grad) {
            *t += g;
        }
        kept.push(o);
    }
    Ok((total, kept))
}

/// Summary of one outer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub query_losses: Vec<f64>,
    pub c_values: Vec<f64>,
    pub grad_norm: f64,
}

/// θ ← optimizer(θ, Σ_i ∇_θ L_query_i(φ_i, C_i)).
pub fn meta_step(
    theta: &ParamSet,
    episodes: &[Episode],
    cfg: &MetaConfig,
    state: &mut OptimizerState,
    epoch: usize,
) -> Result<(ParamSet, StepMetrics)> {
    if episodes.len() != cfg.meta_batch {
        return Err(Error::Contract(format!("meta-batch of {} episodes, config says {}", episodes.len(), cfg.meta_batch)));
    }
    let (grad, outcomes) = meta_gradient(theta, episodes, cfg, epoch)?;
    let mut flat = theta.flatten();
    state.step(&mut flat, &grad, cfg.beta)?;
    let next = theta.unflatten(&flat)?;
    let metrics = StepMetrics {
        query_losses: outcomes.iter().map(|o| o.query_loss).collect(),
        c_values: outcomes.iter().map(|o| o.c_mean).collect(),
        grad_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
    };
    Ok((next, metrics))
}

/// Held-out performance after adapting on each episode's support set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub loss: f64,
    /// Mean error rate; classification tasks only.
    pub error: Option<f64>,
    /// Adapted mean multiplier per episode.
    pub c_values: Vec<f64>,
}

impl EvalReport {
    /// Error rate for classification with class logits, loss otherwise.
    pub fn metric(&self, loss: Loss) -> f64 {
        match (loss, self.error) {
            (Loss::Ce, Some(e)) => e,
            _ => self.loss,
        }
    }
}

/// Adapts on each support set and scores the query set. Only forward values
/// are needed, so the inner loop runs first-order.
pub fn evaluate_episodes(theta: &ParamSet, episodes: &[Episode], cfg: &MetaConfig) -> Result<EvalReport> {
    if episodes.is_empty() {
        return Err(Error::Contract("evaluation needs at least one episode".into()));
    }
    let inner = cfg.inner.first_order();
    let per = cfg.execution.map(episodes, |ep| -> Result<(f64, Option<f64>, f64)> {
        let tape = Tape::new();
        let (_, logits, c_mean) = adapted_query(&tape, theta, ep, &cfg.model, &cfg.wormhole, &inner)?;
        let loss = ep.loss.eval(logits, &ep.query.y)?.item()?;
        let err = ep.loss.error_rate(&logits.value(), &ep.query.y);
        Ok((loss, err, c_mean))
    });
    let per = per.into_iter().collect::<Result<Vec<_>>>()?;
    let n = per.len() as f64;
    let loss = per.iter().map(|p| p.0).sum::<f64>() / n;
    let error = per.iter().map(|p| p.1).sum::<Option<f64>>().map(|s| s / n);
    Ok(EvalReport { loss, error, c_values: per.iter().map(|p| p.2).collect() })
}

/// Samples `n` meta-test episodes from `rng` and evaluates them.
pub fn evaluate(
    theta: &ParamSet,
    cfg: &MetaConfig,
    sampler: &TaskSampler,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EvalReport> {
    let episodes = (0..n).map(|_| sampler.sample(rng, Split::MetaTest)).collect::<Result<Vec<_>>>()?;
    evaluate_episodes(theta, &episodes, cfg)
}

/// Metrics recorded after one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean query loss over the meta-batch.
    pub train_loss: f64,
    pub eval_loss: Option<f64>,
    pub eval_error: Option<f64>,
    pub c_mean: f64,
    pub c_min: f64,
    pub c_max: f64,
}

/// Where and why a run stopped early.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub epoch: usize,
    pub task: Option<usize>,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub final_loss: Option<f64>,
    pub final_error: Option<f64>,
    /// Error rate for class-logit tasks, query loss otherwise.
    pub final_metric: Option<f64>,
    pub theta: ParamSet,
    pub theta_norm: f64,
    pub theta_max_abs: f64,
    pub complete: bool,
    pub failure: Option<Failure>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

fn c_stats(values: &[f64]) -> (f64, f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}

/// Initial meta-parameters for `cfg`.
pub fn initial_theta(cfg: &MetaConfig) -> Result<ParamSet> {
    init_params(&cfg.model, &mut cfg.rng(INIT_STREAM))
}

/// The fixed held-out episodes a run evaluates on.
pub fn eval_set(cfg: &MetaConfig, sampler: &TaskSampler) -> Result<Vec<Episode>> {
    let mut rng = cfg.rng(EVAL_STREAM);
    (0..cfg.eval_episodes).map(|_| sampler.sample(&mut rng, Split::MetaTest)).collect()
}

/// Runs `epochs` outer steps on freshly sampled meta-batches. Divergence or a
/// sampling failure ends the run early with `complete = false`; only invalid
/// configurations are returned as errors.
pub fn train(cfg: &MetaConfig, sampler: &TaskSampler) -> Result<RunResult> {
    train_from(cfg, sampler, initial_theta(cfg)?)
}

pub fn train_from(cfg: &MetaConfig, sampler: &TaskSampler, theta0: ParamSet) -> Result<RunResult> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let eval_eps = eval_set(cfg, sampler)?;
    let mut train_rng = cfg.rng(TRAIN_STREAM);
    let mut state = OptimizerState::new(cfg.optimizer);
    let mut theta = theta0;
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut failure = None;
    let mut last_eval: Option<EvalReport> = None;
    let loss_kind = eval_eps[0].loss;

    for epoch in 0..cfg.epochs {
        let step = (0..cfg.meta_batch)
            .map(|_| sampler.sample(&mut train_rng, Split::MetaTrain))
            .collect::<Result<Vec<_>>>()
            .and_then(|eps| meta_step(&theta, &eps, cfg, &mut state, epoch));
        let (next, metrics) = match step {
            Ok(s) => s,
            Err(Error::Training { epoch, task, reason }) => {
                failure = Some(Failure { epoch, task: Some(task), reason });
                break;
            }
            Err(e) => {
                failure = Some(Failure { epoch, task: None, reason: e.to_string() });
                break;
            }
        };
        theta = next;
        let evaluate_now = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
        let report = if evaluate_now {
            match evaluate_episodes(&theta, &eval_eps, cfg) {
                Ok(r) if r.loss.is_finite() => Some(r),
                Ok(r) => {
                    failure = Some(Failure { epoch, task: None, reason: format!("eval loss is {}", r.loss) });
                    None
                }
                Err(e) => {
                    failure = Some(Failure { epoch, task: None, reason: e.to_string() });
                    None
                }
            }
        } else {
            None
        };
        let (c_mean, c_min, c_max) = c_stats(&metrics.c_values);
        records.push(EpochRecord {
            epoch,
            train_loss: metrics.query_losses.iter().sum::<f64>() / metrics.query_losses.len() as f64,
            eval_loss: report.as_ref().map(|r| r.loss),
            eval_error: report.as_ref().and_then(|r| r.error),
            c_mean,
            c_min,
            c_max,
        });
        if report.is_some() {
            last_eval = report;
        }
        if failure.is_some() {
            break;
        }
    }

    let complete = failure.is_none() && records.len() == cfg.epochs;
    Ok(RunResult {
        seed: cfg.seed,
        final_loss: last_eval.as_ref().filter(|_| complete).map(|r| r.loss),
        final_error: last_eval.as_ref().filter(|_| complete).and_then(|r| r.error),
        final_metric: last_eval.as_ref().filter(|_| complete).map(|r| r.metric(loss_kind)),
        theta_norm: theta.l2_norm(),
        theta_max_abs: theta.max_abs(),
        theta,
        epochs: records,
        complete,
        failure,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}
