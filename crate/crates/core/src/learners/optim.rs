use serde::{Deserialize, Serialize};

use super::shampoo::{ShampooConfig, ShampooState};
use super::ParamSet;
use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Momentum {
        lr: f64,
        #[serde(default = "default_beta")]
        beta: f64,
    },
    AdamW {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_weight_decay")]
        weight_decay: f64,
    },
    Shampoo(ShampooConfig),
}

fn default_beta() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_weight_decay() -> f64 {
    0.01
}

impl OptimizerConfig {
    pub fn adamw(lr: f64) -> Self {
        OptimizerConfig::AdamW {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: default_weight_decay(),
        }
    }

    pub fn momentum(lr: f64, beta: f64) -> Self {
        OptimizerConfig::Momentum { lr, beta }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr }
            | OptimizerConfig::Momentum { lr, .. }
            | OptimizerConfig::AdamW { lr, .. } => lr,
            OptimizerConfig::Shampoo(c) => c.lr,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Sgd { .. } => "sgd",
            OptimizerConfig::Momentum { .. } => "momentum",
            OptimizerConfig::AdamW { .. } => "adamw",
            OptimizerConfig::Shampoo(_) => "shampoo",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr() > 0.0 && self.lr().is_finite()) {
            return Err(config_err("optimizer.lr must be positive"));
        }
        match *self {
            OptimizerConfig::Momentum { beta, .. } if !(0.0..1.0).contains(&beta) => {
                Err(config_err("optimizer.beta must be in [0, 1)"))
            }
            OptimizerConfig::AdamW { beta1, beta2, eps, weight_decay, .. } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) || weight_decay < 0.0 {
                    Err(config_err("optimizer: invalid adamw hyperparameters"))
                } else {
                    Ok(())
                }
            }
            OptimizerConfig::Shampoo(c) => c.validate(),
            _ => Ok(()),
        }
    }

    /// Fresh optimizer state for parameters laid out like `params`.
    pub fn init(&self, params: &ParamSet) -> Optimizer {
        let state = match *self {
            OptimizerConfig::Sgd { .. } => State::Sgd,
            OptimizerConfig::Momentum { .. } => State::Momentum { velocity: params.zeros_like() },
            OptimizerConfig::AdamW { .. } => State::AdamW { m: params.zeros_like(), v: params.zeros_like(), t: 0 },
            OptimizerConfig::Shampoo(c) => State::Shampoo(ShampooState::new(c, params)),
        };
        Optimizer { cfg: *self, state }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum State {
    Sgd,
    Momentum { velocity: ParamSet },
    AdamW { m: ParamSet, v: ParamSet, t: u64 },
    Shampoo(ShampooState),
}

/// An optimizer together with its state. Moments and preconditioners stay
/// with the client that owns them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    state: State,
}

impl Optimizer {
    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn shampoo_state(&self) -> Option<&ShampooState> {
        match &self.state {
            State::Shampoo(s) => Some(s),
            _ => None,
        }
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        params.check_layout(grads)?;
        match (&mut self.state, self.cfg) {
            (State::Sgd, OptimizerConfig::Sgd { lr }) => params.axpy(-lr, grads),
            (State::Momentum { velocity }, OptimizerConfig::Momentum { lr, beta }) => {
                velocity.scale_mut(beta);
                velocity.add_assign(grads);
                params.axpy(-lr, velocity);
            }
            (State::AdamW { m, v, t }, OptimizerConfig::AdamW { lr, beta1, beta2, eps, weight_decay }) => {
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                for (((p, g), m), v) in params
                    .params
                    .iter_mut()
                    .zip(&grads.params)
                    .zip(m.params.iter_mut())
                    .zip(v.params.iter_mut())
                {
                    let w = p.value.as_mut_slice();
                    let mw = m.value.as_mut_slice();
                    let vw = v.value.as_mut_slice();
                    for (((w, g), m), v) in w.iter_mut().zip(g.value.as_slice()).zip(mw).zip(vw) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *w -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *w);
                    }
                }
            }
            (State::Shampoo(s), OptimizerConfig::Shampoo(_)) => {
                s.step(params, grads)?;
            }
            _ => unreachable!("optimizer state and config always match"),
        }
        Ok(())
    }
}
