use serde::{Deserialize, Serialize};

use crate::error::{structural, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam { .. } => "adam",
        }
    }
}

/// First and second moment estimates plus the number of updates taken.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    lr: f64,
    (beta1, beta2, eps): (f64, f64, f64),
) -> Result<()> {
    if param.len() != grad.len() {
        return structural(format!("adam: {} parameters but {} gradients", param.len(), grad.len()));
    }
    if state.m.is_empty() {
        state.m = vec![0.0; param.len()];
        state.v = vec![0.0; param.len()];
    }
    if state.m.len() != param.len() {
        return structural(format!("adam: state holds {} entries, parameters {}", state.m.len(), param.len()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    }
    Ok(())
}

/// Optimizer together with whatever state it carries between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub optimizer: Optimizer,
    pub adam: AdamState,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer) -> Self {
        Self { optimizer, adam: AdamState::default() }
    }

    pub fn step(&mut self, param: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        match self.optimizer {
            Optimizer::Sgd => {
                if param.len() != grad.len() {
                    return structural(format!("sgd: {} parameters but {} gradients", param.len(), grad.len()));
                }
                for (p, g) in param.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
                Ok(())
            }
            Optimizer::Adam { beta1, beta2, eps } => adam_step(param, grad, &mut self.adam, lr, (beta1, beta2, eps)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONSTS: (f64, f64, f64) = (0.9, 0.999, 1e-8);

    #[test]
    fn first_adam_step_is_lr_sized() {
        let mut p = [0.3];
        let mut s = AdamState::default();
        adam_step(&mut p, &[1.0], &mut s, 0.005, CONSTS).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = −0.005 / (1 + 1e-8)
        assert!((p[0] - (0.3 - 0.005 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn second_adam_step_matches_hand_value() {
        let mut p = [0.0];
        let mut s = AdamState::default();
        adam_step(&mut p, &[1.0], &mut s, 0.1, CONSTS).unwrap();
        adam_step(&mut p, &[-2.0], &mut s, 0.1, CONSTS).unwrap();
        // m = 0.9·0.1 − 0.2 = −0.11, v = 0.999·0.001 + 0.004 = 0.004999
        let m_hat = -0.11 / (1.0 - 0.81);
        let v_hat: f64 = 0.004999 / (1.0 - 0.998001);
        let expected = -0.1 / (1.0 + 1e-8) - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - expected).abs() < 1e-12, "{} vs {expected}", p[0]);
    }

    #[test]
    fn zero_gradient_leaves_param() {
        let mut p = [1.5, -2.0];
        let mut s = AdamState::default();
        for _ in 0..10 {
            adam_step(&mut p, &[0.0, 0.0], &mut s, 0.01, CONSTS).unwrap();
        }
        assert_eq!(p, [1.5, -2.0]);
    }

    #[test]
    fn sgd_and_shape_errors() {
        let mut st = OptimizerState::new(Optimizer::Sgd);
        let mut p = [1.0, 2.0];
        st.step(&mut p, &[10.0, -10.0], 0.1).unwrap();
        assert_eq!(p, [0.0, 3.0]);
        assert!(st.step(&mut p, &[1.0], 0.1).is_err());
        let mut st = OptimizerState::new(Optimizer::adam());
        assert!(st.step(&mut p, &[1.0], 0.1).is_err());
    }
}
