//! SGD (with momentum), Adam and Adadelta on flat parameter vectors.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{pow, sqrt};
use crate::model::{Gradients, ModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        #[serde(default = "beta1")]
        beta1: f64,
        #[serde(default = "beta2")]
        beta2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
    },
    Adadelta {
        #[serde(default = "rho")]
        rho: f64,
        #[serde(default = "adadelta_eps")]
        eps: f64,
    },
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}
fn rho() -> f64 {
    0.95
}
fn adadelta_eps() -> f64 {
    1e-6
}

impl OptimizerSpec {
    pub fn sgd() -> Self {
        OptimizerSpec::Sgd { momentum: 0.0 }
    }

    pub fn adam() -> Self {
        OptimizerSpec::Adam { beta1: beta1(), beta2: beta2(), eps: adam_eps() }
    }

    pub fn adadelta() -> Self {
        OptimizerSpec::Adadelta { rho: rho(), eps: adadelta_eps() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerSpec::Sgd { .. } => "sgd",
            OptimizerSpec::Adam { .. } => "adam",
            OptimizerSpec::Adadelta { .. } => "adadelta",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        let ok = match *self {
            OptimizerSpec::Sgd { momentum } => unit(momentum),
            OptimizerSpec::Adam { beta1, beta2, eps } => unit(beta1) && unit(beta2) && eps > 0.0,
            OptimizerSpec::Adadelta { rho, eps } => unit(rho) && eps > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid optimizer hyperparameters: {self:?}")))
        }
    }
}

/// Per-parameter optimizer buffers. `first`/`second` hold momentum or
/// moment estimates depending on the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    spec: OptimizerSpec,
    t: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(spec: OptimizerSpec, len: usize) -> Self {
        Self { spec, t: 0, first: vec![0.0; len], second: vec![0.0; len] }
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "optimizer sized for {} parameters, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        self.t += 1;
        match self.spec {
            OptimizerSpec::Sgd { momentum } => {
                for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    *v = momentum * *v + g;
                    *p -= lr * *v;
                }
            }
            OptimizerSpec::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - pow(beta1, self.t as f64);
                let c2 = 1.0 - pow(beta2, self.t as f64);
                for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (sqrt(v_hat) + eps);
                }
            }
            OptimizerSpec::Adadelta { rho, eps } => {
                for (((p, &g), acc_g), acc_d) in
                    params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second)
                {
                    *acc_g = rho * *acc_g + (1.0 - rho) * g * g;
                    let delta = sqrt(*acc_d + eps) / sqrt(*acc_g + eps) * g;
                    *acc_d = rho * *acc_d + (1.0 - rho) * delta * delta;
                    *p -= lr * delta;
                }
            }
        }
        Ok(())
    }
}

/// Model-aware step: checks gradients for non-finite values first and
/// reports the offending layer.
pub fn optimizer_step(
    state: &mut OptimizerState,
    params: &mut ModelParams,
    grads: &Gradients,
    lr: f64,
    step: usize,
) -> Result<()> {
    for slot in params.arch().layout() {
        let w = &grads.values()[slot.weight.clone()];
        let b = &grads.values()[slot.bias.clone()];
        if w.iter().chain(b).any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { layer: slot.name.to_string(), step, what: "gradient" });
        }
    }
    state.step(params.values_mut(), grads.values(), lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_definition() {
        let mut s = OptimizerState::new(OptimizerSpec::sgd(), 1);
        let mut p = [1.0];
        s.step(&mut p, &[0.5], 0.2).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_closed_form() {
        // t = 1: m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε)
        let mut s = OptimizerState::new(OptimizerSpec::adam(), 1);
        let mut p = [0.0];
        s.step(&mut p, &[1.0], 0.1).unwrap();
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-12);
        assert!((p[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn adam_step_magnitude_any_gradient() {
        for g in [-3.0, -0.02, 1e-3, 0.7, 250.0] {
            let mut s = OptimizerState::new(OptimizerSpec::adam(), 1);
            let mut p = [0.0];
            s.step(&mut p, &[g], 0.01).unwrap();
            let expected = 0.01 * f64::abs(g) / (f64::abs(g) + 1e-8);
            assert!((p[0].abs() - expected).abs() < 1e-12, "g = {g}");
        }
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        for spec in [OptimizerSpec::sgd(), OptimizerSpec::Sgd { momentum: 0.9 }, OptimizerSpec::adam(), OptimizerSpec::adadelta()] {
            let mut s = OptimizerState::new(spec, 3);
            let mut p = [0.3, -1.2, 7.0];
            for _ in 0..5 {
                s.step(&mut p, &[0.0; 3], 0.5).unwrap();
            }
            assert_eq!(p, [0.3, -1.2, 7.0], "{spec:?}");
        }
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(OptimizerSpec::Adam { beta1: 1.0, beta2: 0.9, eps: 1e-8 }.validate().is_err());
        assert!(OptimizerSpec::Adadelta { rho: 0.9, eps: 0.0 }.validate().is_err());
        let mut s = OptimizerState::new(OptimizerSpec::sgd(), 1);
        assert!(s.step(&mut [0.0], &[0.0], 0.0).is_err());
        assert!(s.step(&mut [0.0, 1.0], &[0.0, 0.0], 0.1).is_err());
    }
}
