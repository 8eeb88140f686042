//! Low-rank adapters: the effective weight of an adapted layer is
//! `W + s·A·B` with `A` (d_out × r) and `B` (r × d_in).

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::LayeredModel;
use crate::error::{config_err, Result};
use crate::math::Matrix;
use crate::rng::{stream, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub target_layer: String,
    pub rank: usize,
    pub a: Matrix,
    pub b: Matrix,
    pub scaling: f64,
}

impl LoraAdapter {
    pub fn num_params(&self) -> usize {
        self.a.len() + self.b.len()
    }

    pub fn delta(&self) -> Matrix {
        self.a.matmul(&self.b).scale(self.scaling)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    /// Defaults to `1/rank`.
    #[serde(default)]
    pub scaling: Option<f64>,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_init_std() -> f64 {
    0.01
}

impl LoraConfig {
    pub fn new(rank: usize) -> Self {
        Self { rank, scaling: None, init_std: default_init_std() }
    }

    pub fn scaling(&self) -> f64 {
        self.scaling.unwrap_or(1.0 / self.rank as f64)
    }
}

/// Number of adapter parameters for layers of the given `(d_out, d_in)` shapes.
pub fn lora_param_count(shapes: &[(usize, usize)], rank: usize) -> usize {
    shapes.iter().map(|(o, i)| rank * (o + i)).sum()
}

/// Attaches rank-`r` adapters to every layer whose name satisfies `targets`
/// and freezes those base weights. `A` starts at zero so the attached model
/// computes the same function; `B` is Gaussian from the LoRA-init stream.
///
/// Returns the new trainable count.
pub fn lora_attach(
    model: &mut LayeredModel,
    targets: impl Fn(&str) -> bool,
    cfg: &LoraConfig,
    seed: u64,
) -> Result<usize> {
    if cfg.rank == 0 {
        return Err(config_err("lora.rank must be at least 1"));
    }
    let mut matched = false;
    for (idx, layer) in model.layers.iter_mut().enumerate() {
        if !targets(&layer.name) {
            continue;
        }
        matched = true;
        let mut rng = stream(seed, &[tag::LORA_INIT, idx as u64]);
        let b = Matrix::from_fn(cfg.rank, layer.d_in(), |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            cfg.init_std * z
        });
        layer.adapter = Some(LoraAdapter {
            target_layer: layer.name.clone(),
            rank: cfg.rank,
            a: Matrix::zeros(layer.d_out(), cfg.rank),
            b,
            scaling: cfg.scaling(),
        });
        layer.frozen = true;
    }
    if !matched {
        return Err(config_err("lora targets match no layer"));
    }
    Ok(model.num_trainable())
}

/// Attaches adapters to an explicit list of layer names; unknown names are a config error.
pub fn lora_attach_named(model: &mut LayeredModel, names: &[String], cfg: &LoraConfig, seed: u64) -> Result<usize> {
    for n in names {
        if model.layer(n).is_none() {
            return Err(config_err(format!("lora target {n:?} is not a layer")));
        }
    }
    lora_attach(model, |name| names.iter().any(|n| n == name), cfg, seed)
}

/// Folds every adapter into its base weight and removes it. Merged layers
/// keep their frozen flag.
pub fn lora_merge(model: &LayeredModel) -> LayeredModel {
    let mut out = model.clone();
    for layer in &mut out.layers {
        if let Some(a) = layer.adapter.take() {
            layer.weight.add_assign(&a.delta());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let shapes = vec![(768, 768); 72];
        assert_eq!(lora_param_count(&shapes, 1), 110_592);
        assert_eq!(lora_param_count(&shapes, 6), 663_552);
        assert_eq!(lora_param_count(&[(4, 4)], 2), 16);
    }

    #[test]
    fn attach_freezes_and_counts() {
        let mut m = LayeredModel::mlp(&[4, 4], 0).unwrap();
        let n = lora_attach(&mut m, |_| true, &LoraConfig::new(2), 0).unwrap();
        assert_eq!(n, 16);
        assert!(m.layers[0].frozen);
        let t = m.trainable();
        assert_eq!(t.params.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(), ["layer0.lora_a", "layer0.lora_b"]);
    }

    #[test]
    fn unknown_target_is_config_error() {
        let mut m = LayeredModel::mlp(&[4, 3, 2], 0).unwrap();
        let err = lora_attach_named(&mut m, &["q_proj".into()], &LoraConfig::new(1), 0).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(lora_attach(&mut m, |n| n == "zzz", &LoraConfig::new(1), 0).is_err());
        assert!(lora_attach(&mut m, |_| true, &LoraConfig::new(0), 0).is_err());
    }

    #[test]
    fn zero_a_merge_is_identity() {
        let mut m = LayeredModel::mlp(&[5, 7, 3], 3).unwrap();
        let base = m.clone();
        lora_attach(&mut m, |n| n == "layer0", &LoraConfig::new(2), 9).unwrap();
        let merged = lora_merge(&m);
        assert_eq!(merged.layers[0].weight, base.layers[0].weight);
        assert!(merged.layers.iter().all(|l| l.adapter.is_none()));
    }

    #[test]
    fn merge_matches_direct_multiply() {
        let mut m = LayeredModel::mlp(&[3, 4, 2], 1).unwrap();
        let cfg = LoraConfig { rank: 2, scaling: Some(0.7), init_std: 0.5 };
        lora_attach(&mut m, |n| n == "layer1", &cfg, 2).unwrap();
        let ad = m.layers[1].adapter.as_mut().unwrap();
        ad.a = Matrix::from_fn(2, 2, |i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.2);
        let (a, b) = (ad.a.clone(), ad.b.clone());
        let merged = lora_merge(&m);
        for i in 0..2 {
            for j in 0..4 {
                let ab: f64 = (0..2).map(|k| a.get(i, k) * b.get(k, j)).sum();
                let expect = m.layers[1].weight.get(i, j) + 0.7 * ab;
                assert!((merged.layers[1].weight.get(i, j) - expect).abs() < 1e-15);
            }
        }
    }
}
