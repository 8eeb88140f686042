//! Layer-wise Shampoo with element-wise clipping of the preconditioned step.
//!
//! For each tensor `W` with gradient `G` at iteration `t`:
//!
//! ```text
//! if t % stat_interval == 0    L += G Gᵀ,  R += Gᵀ G
//! if t % precond_interval == 0 L̃ = (L + ρI)^{-1/4},  R̃ = (R + ρI)^{-1/4}
//! W -= η · clip(L̃ G R̃, C)
//! ```
//!
//! `L` and `R` start at the identity, the cached `L̃` and `R̃` at exactly the
//! identity, so until the first refresh the step is clipped SGD.

use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{config_err, Error, Result};
use crate::math::{inv_fourth_root, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShampooConfig {
    pub lr: f64,
    /// Element-wise clip `C` of the preconditioned step; `None` disables it.
    #[serde(default)]
    pub clip: Option<f64>,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_stat_interval")]
    pub stat_interval: u64,
    #[serde(default = "default_precond_interval")]
    pub precond_interval: u64,
}

fn default_ridge() -> f64 {
    1e-4
}
fn default_stat_interval() -> u64 {
    10
}
fn default_precond_interval() -> u64 {
    100
}

impl ShampooConfig {
    pub fn new(lr: f64, clip: Option<f64>) -> Self {
        Self {
            lr,
            clip,
            ridge: default_ridge(),
            stat_interval: default_stat_interval(),
            precond_interval: default_precond_interval(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.ridge > 0.0) || self.clip.is_some_and(|c| !(c > 0.0)) {
            return Err(config_err("shampoo: lr, ridge and clip must be positive"));
        }
        if self.stat_interval == 0 || self.precond_interval == 0 {
            return Err(config_err("shampoo: intervals must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub l: Matrix,
    pub r: Matrix,
    pub l_tilde: Matrix,
    pub r_tilde: Matrix,
}

impl LayerStats {
    pub fn identity(d_out: usize, d_in: usize) -> Self {
        Self {
            l: Matrix::identity(d_out),
            r: Matrix::identity(d_in),
            l_tilde: Matrix::identity(d_out),
            r_tilde: Matrix::identity(d_in),
        }
    }

    pub fn refresh(&mut self, ridge: f64) -> Result<()> {
        self.l_tilde = inv_fourth_root(&self.l, ridge)?;
        self.r_tilde = inv_fourth_root(&self.r, ridge)?;
        Ok(())
    }
}

/// Per-tensor statistics plus the iteration counter. Owned by one client and
/// never transmitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShampooState {
    pub cfg: ShampooConfig,
    pub t: u64,
    pub layers: Vec<LayerStats>,
}

impl ShampooState {
    pub fn new(cfg: ShampooConfig, params: &ParamSet) -> Self {
        let layers = params.iter().map(|p| LayerStats::identity(p.value.rows(), p.value.cols())).collect();
        Self { cfg, t: 0, layers }
    }

    /// Recomputes every cached inverse root from the current `L`, `R`.
    pub fn refresh(&mut self) -> Result<()> {
        let ridge = self.cfg.ridge;
        self.layers.iter_mut().try_for_each(|s| s.refresh(ridge))
    }

    /// One iteration; returns the applied delta `W_new − W_old`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<ParamSet> {
        params.check_layout(grads)?;
        if self.layers.len() != params.len() {
            return Err(Error::Shape("shampoo state does not match parameters".into()));
        }
        self.t += 1;
        let t = self.t;
        let mut deltas = grads.zeros_like();
        for ((p, g), (stats, d)) in params
            .params
            .iter_mut()
            .zip(&grads.params)
            .zip(self.layers.iter_mut().zip(deltas.params.iter_mut()))
        {
            let g = &g.value;
            if t % self.cfg.stat_interval == 0 {
                stats.l.add_assign(&g.matmul_t(g));
                stats.r.add_assign(&g.t_matmul(g));
            }
            if t % self.cfg.precond_interval == 0 {
                stats.refresh(self.cfg.ridge)?;
            }
            let mut step = stats.l_tilde.matmul(g).matmul(&stats.r_tilde);
            if let Some(c) = self.cfg.clip {
                step = step.map(|v| v.clamp(-c, c));
            }
            step.scale_mut(-self.cfg.lr);
            p.value.add_assign(&step);
            d.value = step;
        }
        Ok(deltas)
    }
}
