//! The task-specific multiplicative parameter `C` and inner-loop adaptation.
//!
//! Adaptation starts from `C ⊙ θ` instead of `θ`: `C` is fitted to the support
//! set first, then ordinary additive gradient steps run from the scaled
//! parameters. The identity kind reduces the whole procedure to plain MAML.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{structural, Error, Result};
use crate::models::{forward, Loss, ModelSpec, ParamSet};
use crate::tasks::Batch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WormholeKind {
    /// Multiplier fixed at 1: vanilla MAML.
    Identity,
    /// One unconstrained scalar `c`.
    RawScalar,
    /// One scalar `c = tanh(t)`; the raw value is `t`.
    TanhScalar,
    /// One unconstrained scalar per layer.
    PerLayer,
    /// One unconstrained scalar per parameter entry.
    PerWeight,
}

impl WormholeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WormholeKind::Identity => "identity",
            WormholeKind::RawScalar => "raw_scalar",
            WormholeKind::TanhScalar => "tanh_scalar",
            WormholeKind::PerLayer => "per_layer",
            WormholeKind::PerWeight => "per_weight",
        }
    }
}

impl std::str::FromStr for WormholeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" | "vanilla" => WormholeKind::Identity,
            "raw_scalar" => WormholeKind::RawScalar,
            "tanh_scalar" => WormholeKind::TanhScalar,
            "per_layer" => WormholeKind::PerLayer,
            "per_weight" => WormholeKind::PerWeight,
            other => return Err(Error::Contract(format!("unknown wormhole kind {other:?}"))),
        })
    }
}

/// Kind plus the layers the multiplier applies to (`None` = every layer).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WormholeSpec {
    pub kind: WormholeKind,
    pub selector: Option<Vec<usize>>,
}

impl WormholeSpec {
    pub fn new(kind: WormholeKind) -> Self {
        Self { kind, selector: None }
    }

    pub fn identity() -> Self {
        Self::new(WormholeKind::Identity)
    }

    pub fn with_layers(mut self, layers: Vec<usize>) -> Self {
        self.selector = Some(layers);
        self
    }

    fn selects(&self, layer: usize) -> bool {
        self.selector.as_ref().is_none_or(|s| s.contains(&layer))
    }

    fn validate(&self, params: &ParamSet) -> Result<()> {
        if let Some(sel) = &self.selector {
            let layers = params.num_layers();
            if let Some(bad) = sel.iter().find(|&&l| l >= layers) {
                return structural(format!("selector layer {bad} out of range for {layers} layers"));
            }
        }
        Ok(())
    }
}

/// Current value of a task's multiplicative parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WormholeParam {
    pub spec: WormholeSpec,
    /// Empty for identity, `[1]` for scalars, `[L]` per layer, `[d_θ]` per weight.
    pub raw: Tensor,
}

impl WormholeParam {
    /// Fresh multiplier with every raw entry set to `c_init`.
    pub fn init(spec: &WormholeSpec, params: &ParamSet, c_init: f64) -> Result<Self> {
        spec.validate(params)?;
        let n = match spec.kind {
            WormholeKind::Identity => 0,
            WormholeKind::RawScalar | WormholeKind::TanhScalar => 1,
            WormholeKind::PerLayer => params.num_layers(),
            WormholeKind::PerWeight => params.total_dim(),
        };
        Ok(Self { spec: spec.clone(), raw: Tensor::filled(&[n], c_init) })
    }

    pub fn identity() -> Self {
        Self { spec: WormholeSpec::identity(), raw: Tensor::zeros(&[0]) }
    }

    pub fn kind(&self) -> WormholeKind {
        self.spec.kind
    }

    fn validate(&self, params: &ParamSet) -> Result<()> {
        self.spec.validate(params)?;
        let expected = match self.spec.kind {
            WormholeKind::Identity => return Ok(()),
            WormholeKind::RawScalar | WormholeKind::TanhScalar => 1,
            WormholeKind::PerLayer => params.num_layers(),
            WormholeKind::PerWeight => params.total_dim(),
        };
        if self.raw.len() != expected {
            return structural(format!(
                "{} multiplier needs {expected} raw values, got {}",
                self.spec.kind.as_str(),
                self.raw.len()
            ));
        }
        Ok(())
    }

    /// Per-entry multiplier, flattened in parameter order (`d_θ` values).
    pub fn effective_multiplier(&self, params: &ParamSet) -> Result<Tensor> {
        self.validate(params)?;
        let raw = self.raw.data();
        let mut out = Vec::with_capacity(params.total_dim());
        let mut offset = 0;
        for p in params.iter() {
            let n = p.value.len();
            let selected = self.spec.selects(p.layer);
            for k in 0..n {
                let m = match self.spec.kind {
                    _ if !selected => 1.0,
                    WormholeKind::Identity => 1.0,
                    WormholeKind::RawScalar => raw[0],
                    WormholeKind::TanhScalar => raw[0].tanh(),
                    WormholeKind::PerLayer => raw[p.layer],
                    WormholeKind::PerWeight => raw[offset + k],
                };
                out.push(m);
            }
            offset += n;
        }
        Ok(Tensor::vector(out))
    }

    /// Mean multiplier over the selected entries (1 for identity).
    pub fn selected_mean(&self, params: &ParamSet) -> Result<f64> {
        let m = self.effective_multiplier(params)?;
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut offset = 0;
        for p in params.iter() {
            if self.spec.selects(p.layer) {
                sum += m.data()[offset..offset + p.value.len()].iter().sum::<f64>();
                count += p.value.len();
            }
            offset += p.value.len();
        }
        Ok(if count == 0 { 1.0 } else { sum / count as f64 })
    }
}

/// A multiplier whose raw values live on a tape.
#[derive(Clone, Debug)]
pub struct WormholeVar<'t> {
    pub spec: WormholeSpec,
    pub raw: Option<Var<'t>>,
}

impl<'t> WormholeVar<'t> {
    pub fn identity() -> Self {
        Self { spec: WormholeSpec::identity(), raw: None }
    }

    /// Places `param` on the tape, tracked or as a constant.
    pub fn from_param(tape: &'t Tape, param: &WormholeParam, track: bool) -> Self {
        let raw = match param.spec.kind {
            WormholeKind::Identity => None,
            _ if track => Some(tape.leaf(param.raw.clone())),
            _ => Some(tape.constant(param.raw.clone())),
        };
        Self { spec: param.spec.clone(), raw }
    }

    pub fn to_param(&self) -> WormholeParam {
        match self.raw {
            None => WormholeParam { spec: self.spec.clone(), raw: Tensor::zeros(&[0]) },
            Some(r) => WormholeParam { spec: self.spec.clone(), raw: (*r.value()).clone() },
        }
    }
}

/// `C ⊙ θ` as graph nodes. Unselected entries, and every entry under the
/// identity kind, pass through as the very same nodes.
pub fn apply_c<'t>(theta: &ParamSet<Var<'t>>, c: &WormholeVar<'t>) -> Result<ParamSet<Var<'t>>> {
    let raw = match (c.spec.kind, c.raw) {
        (WormholeKind::Identity, _) => return Ok(theta.clone()),
        (_, Some(raw)) => raw,
        (kind, None) => return structural(format!("{} multiplier has no raw values", kind.as_str())),
    };
    let layers = theta.num_layers();
    if let Some(sel) = &c.spec.selector {
        if let Some(bad) = sel.iter().find(|&&l| l >= layers) {
            return structural(format!("selector layer {bad} out of range for {layers} layers"));
        }
    }
    let raw_len = raw.with_value(|t| t.len());
    let total: usize = theta.values().map(|v| v.with_value(|t| t.len())).sum();
    let expected = match c.spec.kind {
        WormholeKind::RawScalar | WormholeKind::TanhScalar => 1,
        WormholeKind::PerLayer => layers,
        WormholeKind::PerWeight => total,
        WormholeKind::Identity => unreachable!(),
    };
    if raw_len != expected {
        return structural(format!(
            "{} multiplier needs {expected} raw values, got {raw_len}",
            c.spec.kind.as_str()
        ));
    }
    let scalar = match c.spec.kind {
        WormholeKind::RawScalar => Some(raw.reshape(&[])?),
        WormholeKind::TanhScalar => Some(raw.reshape(&[])?.tanh()?),
        _ => None,
    };
    let mut offset = 0;
    theta.try_map(|p| {
        let shape = p.value.shape();
        let n: usize = shape.iter().product();
        let start = offset;
        offset += n;
        if !c.spec.selects(p.layer) {
            return Ok(p.value);
        }
        let m = match c.spec.kind {
            WormholeKind::RawScalar | WormholeKind::TanhScalar => scalar.expect("scalar multiplier"),
            WormholeKind::PerLayer => raw.index_select(&[p.layer])?.reshape(&[])?,
            WormholeKind::PerWeight => {
                let idx: Vec<usize> = (start..start + n).collect();
                raw.index_select(&idx)?.reshape(&shape)?
            }
            WormholeKind::Identity => unreachable!(),
        };
        p.value.mul(m)
    })
}

/// Step sizes and step counts of the inner loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerLoopConfig {
    /// Additive step size.
    pub alpha: f64,
    /// Step size for the multiplier's raw values.
    pub gamma: f64,
    /// Additive steps.
    pub n_inner: usize,
    /// Multiplier steps, taken before the additive ones.
    pub n_c: usize,
    /// Raw initial value of every multiplier entry.
    pub c_init: f64,
    /// Keep inner gradient steps on the tape so the outer gradient sees them.
    pub second_order: bool,
    /// Keep the multiplier steps on the tape as well.
    pub differentiate_through_c: bool,
}

impl Default for InnerLoopConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 1.0,
            n_inner: 1,
            n_c: 5,
            c_init: 1.0,
            second_order: true,
            differentiate_through_c: true,
        }
    }
}

impl InnerLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Contract(format!("alpha must be finite and non-negative, got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Contract(format!("gamma must be finite and non-negative, got {}", self.gamma)));
        }
        if self.n_inner == 0 {
            return Err(Error::Contract("n_inner must be at least 1".into()));
        }
        Ok(())
    }

    /// The same schedule with nothing kept on the tape. Forward values are
    /// unchanged, which makes it the right mode for evaluation.
    pub fn first_order(&self) -> Self {
        Self { second_order: false, differentiate_through_c: false, ..self.clone() }
    }
}

fn support_loss<'t>(spec: &ModelSpec, params: &ParamSet<Var<'t>>, support: &Batch, loss: Loss) -> Result<Var<'t>> {
    let tape = support_tape(params)?;
    let logits = forward(spec, params, tape.constant(support.x.clone()))?;
    loss.eval(logits, &support.y)
}

fn support_tape<'t>(params: &ParamSet<Var<'t>>) -> Result<&'t Tape> {
    params
        .values()
        .next()
        .map(|v| v.tape())
        .ok_or_else(|| Error::Structural("empty parameter set".into()))
}

/// Takes `n_c` gradient steps on the multiplier's raw values, each scoring the
/// support set at `C ⊙ θ`. Returns the adapted multiplier and the loss before
/// each step.
pub fn adapt_c<'t>(
    theta: &ParamSet<Var<'t>>,
    spec: &ModelSpec,
    c0: WormholeVar<'t>,
    support: &Batch,
    cfg: &InnerLoopConfig,
    loss: Loss,
) -> Result<(WormholeVar<'t>, Vec<f64>)> {
    if cfg.n_c == 0 {
        return Ok((c0, Vec::new()));
    }
    let Some(mut raw) = c0.raw else {
        return Err(Error::Contract("identity multiplier cannot be adapted".into()));
    };
    let tape = support_tape(theta)?;
    let mut losses = Vec::with_capacity(cfg.n_c);
    for _ in 0..cfg.n_c {
        if !cfg.differentiate_through_c || !raw.is_tracked() {
            raw = tape.leaf((*raw.value()).clone());
        }
        let c = WormholeVar { spec: c0.spec.clone(), raw: Some(raw) };
        let l = support_loss(spec, &apply_c(theta, &c)?, support, loss)?;
        losses.push(l.item()?);
        let g = tape.grad(l, &[raw], cfg.differentiate_through_c)?[0];
        raw = raw.sub(g.scale(cfg.gamma)?)?;
    }
    if !cfg.differentiate_through_c {
        raw = raw.detach()?;
    }
    Ok((WormholeVar { spec: c0.spec, raw: Some(raw) }, losses))
}

/// `φ⁽⁰⁾ = C ⊙ θ`, then `n_inner` steps `φ ← φ − α ∇_φ L_support(φ)`.
///
/// Returns the adapted parameters and the support loss at every iterate
/// (`n_inner + 1` values). Without `second_order` each step's gradient is a
/// constant (the first-order approximation).
pub fn adapt_phi<'t>(
    theta: &ParamSet<Var<'t>>,
    spec: &ModelSpec,
    c: &WormholeVar<'t>,
    support: &Batch,
    cfg: &InnerLoopConfig,
    loss: Loss,
) -> Result<(ParamSet<Var<'t>>, Vec<f64>)> {
    let tape = support_tape(theta)?;
    let mut phi = apply_c(theta, c)?;
    let mut trace = Vec::with_capacity(cfg.n_inner + 1);
    for _ in 0..cfg.n_inner {
        let l = support_loss(spec, &phi, support, loss)?;
        trace.push(l.item()?);
        let vars = phi.vars();
        let grads = tape.grad(l, &vars, cfg.second_order)?;
        let stepped = vars
            .into_iter()
            .zip(grads)
            .map(|(p, g)| p.sub(g.scale(cfg.alpha)?))
            .collect::<Result<Vec<_>>>()?;
        phi = phi.with_vars(stepped)?;
    }
    trace.push(support_loss(spec, &phi, support, loss)?.item()?);
    Ok((phi, trace))
}

/// Outcome of one task's inner loop.
#[derive(Debug)]
pub struct InnerResult<'t> {
    pub phi: ParamSet<Var<'t>>,
    pub c: WormholeVar<'t>,
    /// Support loss before each multiplier step.
    pub c_trace: Vec<f64>,
    /// Support loss at each additive iterate, `n_inner + 1` values.
    pub support_trace: Vec<f64>,
}

/// Initialises a fresh multiplier, adapts it, then adapts `φ`.
pub fn inner_adapt<'t>(
    theta: &ParamSet<Var<'t>>,
    spec: &ModelSpec,
    wormhole: &WormholeSpec,
    support: &Batch,
    loss: Loss,
    cfg: &InnerLoopConfig,
) -> Result<InnerResult<'t>> {
    cfg.validate()?;
    if support.len() == 0 {
        return Err(Error::Contract("support set is empty".into()));
    }
    let tape = support_tape(theta)?;
    let c0 = match wormhole.kind {
        WormholeKind::Identity => WormholeVar::identity(),
        _ => {
            let init = WormholeParam::init(wormhole, &theta.to_tensors(), cfg.c_init)?;
            WormholeVar::from_param(tape, &init, true)
        }
    };
    let (c, c_trace) = match wormhole.kind {
        WormholeKind::Identity => (c0, Vec::new()),
        _ => adapt_c(theta, spec, c0, support, cfg, loss)?,
    };
    let (phi, support_trace) = adapt_phi(theta, spec, &c, support, cfg, loss)?;
    Ok(InnerResult { phi, c, c_trace, support_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, Param};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_layer() -> ParamSet {
        init_params(&ModelSpec::mlp(&[3, 2, 2]), &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
    }

    #[test]
    fn identity_multiplier_is_all_ones() {
        let p = two_layer();
        let m = WormholeParam::identity().effective_multiplier(&p).unwrap();
        assert_eq!(m.len(), p.total_dim());
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn tanh_zero_gives_zero_on_selected_layers() {
        let p = two_layer();
        let spec = WormholeSpec::new(WormholeKind::TanhScalar).with_layers(vec![1]);
        let c = WormholeParam::init(&spec, &p, 0.0).unwrap();
        let m = c.effective_multiplier(&p).unwrap();
        let layer0: usize = p.iter().filter(|e| e.layer == 0).map(|e| e.value.len()).sum();
        assert!(m.data()[..layer0].iter().all(|&v| v == 1.0));
        assert!(m.data()[layer0..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn per_layer_expansion() {
        let p = two_layer();
        let spec = WormholeSpec::new(WormholeKind::PerLayer);
        let c = WormholeParam { spec: spec.clone(), raw: Tensor::vector(vec![2.0, 3.0]) };
        let m = c.effective_multiplier(&p).unwrap();
        let mut offset = 0;
        for e in p.iter() {
            let want = if e.layer == 0 { 2.0 } else { 3.0 };
            assert!(m.data()[offset..offset + e.value.len()].iter().all(|&v| v == want));
            offset += e.value.len();
        }
        let bad = WormholeParam { spec, raw: Tensor::vector(vec![2.0, 3.0, 4.0]) };
        assert!(matches!(bad.effective_multiplier(&p), Err(Error::Structural(_))));
    }

    #[test]
    fn apply_c_examples() {
        let tape = Tape::new();
        let p = two_layer();
        let theta = p.track(&tape);

        let same = apply_c(&theta, &WormholeVar::identity()).unwrap();
        assert_eq!(same.to_tensors(), p);

        let flip = WormholeParam { spec: WormholeSpec::new(WormholeKind::RawScalar), raw: Tensor::vector(vec![-1.0]) };
        let neg = apply_c(&theta, &WormholeVar::from_param(&tape, &flip, true)).unwrap().to_tensors();
        for (a, b) in neg.values().zip(p.values()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| *x == -*y));
        }
        // tanh saturates to −1 in floating point for large negative t.
        let tanh = WormholeParam { spec: WormholeSpec::new(WormholeKind::TanhScalar), raw: Tensor::vector(vec![-40.0]) };
        let neg2 = apply_c(&theta, &WormholeVar::from_param(&tape, &tanh, true)).unwrap().to_tensors();
        assert_eq!(neg, neg2);

        let half = WormholeParam {
            spec: WormholeSpec::new(WormholeKind::PerWeight),
            raw: Tensor::filled(&[p.total_dim()], 0.5),
        };
        let halved = apply_c(&theta, &WormholeVar::from_param(&tape, &half, true)).unwrap().to_tensors();
        for (a, b) in halved.values().zip(p.values()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| *x == *y / 2.0));
        }
    }

    /// θ = [1], prediction c·θ·x with x = 1, support target −1, squared error.
    fn one_d() -> (ModelSpec, ParamSet, Batch) {
        let spec = ModelSpec::linear_vector_filter(1);
        let theta = ParamSet::new(vec![Param { name: "w".into(), value: Tensor::vector(vec![1.0]), layer: 0 }]).unwrap();
        let support = Batch { x: Tensor::new(vec![1, 1], vec![1.0]).unwrap(), y: Tensor::vector(vec![-1.0]) };
        (spec, theta, support)
    }

    #[test]
    fn adapt_c_hand_step() {
        let (spec, theta, support) = one_d();
        let tape = Tape::new();
        let th = theta.track(&tape);
        let cfg = InnerLoopConfig { gamma: 0.25, n_c: 1, ..Default::default() };
        let c0 = WormholeParam { spec: WormholeSpec::new(WormholeKind::RawScalar), raw: Tensor::vector(vec![1.0]) };
        let (c, losses) = adapt_c(&th, &spec, WormholeVar::from_param(&tape, &c0, true), &support, &cfg, Loss::Mse).unwrap();
        assert_eq!(c.to_param().raw.data(), &[0.0]);
        assert_eq!(losses, vec![4.0]);

        let none = InnerLoopConfig { n_c: 0, ..cfg.clone() };
        let (same, _) = adapt_c(&th, &spec, WormholeVar::from_param(&tape, &c0, true), &support, &none, Loss::Mse).unwrap();
        assert_eq!(same.to_param(), c0);

        let err = adapt_c(&th, &spec, WormholeVar::identity(), &support, &cfg, Loss::Mse);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn adapt_phi_hand_step() {
        // (θ − a)² with a = −1 through the filter model, one step.
        let (spec, theta, support) = one_d();
        let tape = Tape::new();
        let th = theta.track(&tape);
        let alpha = 0.1;
        let cfg = InnerLoopConfig { alpha, n_inner: 1, ..Default::default() };
        let (phi, trace) = adapt_phi(&th, &spec, &WormholeVar::identity(), &support, &cfg, Loss::Mse).unwrap();
        let expected = 1.0 - 2.0 * alpha * (1.0 - (-1.0));
        assert!((phi.to_tensors().flatten()[0] - expected).abs() < 1e-15);
        assert_eq!(trace.len(), 2);

        let zero = InnerLoopConfig { alpha: 0.0, n_inner: 3, ..Default::default() };
        let c = WormholeParam { spec: WormholeSpec::new(WormholeKind::RawScalar), raw: Tensor::vector(vec![0.3]) };
        let cv = WormholeVar::from_param(&tape, &c, true);
        let (phi, _) = adapt_phi(&th, &spec, &cv, &support, &zero, Loss::Mse).unwrap();
        let direct = apply_c(&th, &cv).unwrap();
        assert_eq!(phi.to_tensors(), direct.to_tensors());
    }

    #[test]
    fn tanh_bound_holds_after_each_c_step() {
        let (spec, theta, support) = one_d();
        let tape = Tape::new();
        let th = theta.track(&tape);
        let c0 = WormholeParam { spec: WormholeSpec::new(WormholeKind::TanhScalar), raw: Tensor::vector(vec![1.0]) };
        let mut c = WormholeVar::from_param(&tape, &c0, true);
        for _ in 0..20 {
            let cfg = InnerLoopConfig { gamma: 3.0, n_c: 1, ..Default::default() };
            c = adapt_c(&th, &spec, c, &support, &cfg, Loss::Mse).unwrap().0;
            let m = c.to_param().effective_multiplier(&theta).unwrap();
            assert!(m.data()[0].abs() < 1.0);
        }
        assert!(c.to_param().effective_multiplier(&theta).unwrap().data()[0] < 0.0);
    }

    #[test]
    fn chain_rule_on_multiplicative_path() {
        let p = two_layer();
        let spec = ModelSpec::mlp(&[3, 2, 2]);
        let batch = Batch {
            x: Tensor::new(vec![2, 3], vec![0.1, -0.4, 0.9, 0.5, 0.2, -0.3]).unwrap(),
            y: Tensor::vector(vec![0.0, 1.0]),
        };
        let tape = Tape::new();
        let th = p.track(&tape);
        let c = WormholeParam { spec: WormholeSpec::new(WormholeKind::RawScalar), raw: Tensor::vector(vec![0.7]) };
        let cv = WormholeVar::from_param(&tape, &c, true);
        let phi = apply_c(&th, &cv).unwrap();
        let l = support_loss(&spec, &phi, &batch, Loss::Ce).unwrap();
        let mut wrt = vec![cv.raw.unwrap()];
        wrt.extend(phi.vars());
        let g = tape.grad(l, &wrt, false).unwrap();
        let dc = g[0].item().unwrap();
        let chain: f64 = p
            .values()
            .zip(&g[1..])
            .map(|(t, gp)| t.data().iter().zip(gp.value().data()).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        assert!((dc - chain).abs() / dc.abs().max(1e-12) < 1e-8);
    }
}
