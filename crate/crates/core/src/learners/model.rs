//! A stack of dense layers with tanh between them and softmax cross-entropy
//! on the final logits. Layers have no bias; the weight of layer `b` maps
//! `d_in,b → d_out,b`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::lora::LoraAdapter;
use super::{Param, ParamSet};
use crate::error::{config_err, Error, Result};
use crate::fedsim::Record;
use crate::math::Matrix;
use crate::metrics::{evaluate, EvalResult, Normalization};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub weight: Matrix,
    pub frozen: bool,
    pub adapter: Option<LoraAdapter>,
}

impl Layer {
    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    /// `W` or `W + s·A·B` when an adapter is attached.
    pub fn effective_weight(&self) -> Matrix {
        match &self.adapter {
            Some(a) => {
                let mut w = self.weight.clone();
                w.axpy(a.scaling, &a.a.matmul(&a.b));
                w
            }
            None => self.weight.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredModel {
    pub layers: Vec<Layer>,
}

/// Activations cached by the forward pass.
struct Trace {
    /// Input to each layer (n × d_in,b); `inputs[0]` is the feature batch.
    inputs: Vec<Matrix>,
    weights: Vec<Matrix>,
    logits: Matrix,
}

impl LayeredModel {
    /// Dense network with the given widths, e.g. `[16, 32, 8]` for one hidden
    /// layer. Weights are `N(0, 1/d_in)` from the model-init stream of `seed`.
    pub fn mlp(widths: &[usize], seed: u64) -> Result<LayeredModel> {
        let names: Vec<String> = (0..widths.len().saturating_sub(1)).map(|i| format!("layer{i}")).collect();
        Self::mlp_named(widths, &names, seed)
    }

    pub fn mlp_named(widths: &[usize], names: &[String], seed: u64) -> Result<LayeredModel> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(config_err("model.widths needs at least two positive entries"));
        }
        if names.len() != widths.len() - 1 {
            return Err(config_err("model: one name per layer required"));
        }
        let mut rng = stream(seed, &[tag::MODEL_INIT]);
        let layers = widths
            .windows(2)
            .zip(names)
            .map(|(w, name)| {
                let (d_in, d_out) = (w[0], w[1]);
                let std = (1.0 / d_in as f64).sqrt();
                let weight = Matrix::from_fn(d_out, d_in, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    std * z
                });
                Layer { name: name.clone(), weight, frozen: false, adapter: None }
            })
            .collect();
        let model = LayeredModel { layers };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(config_err("model has no layers"));
        }
        for pair in self.layers.windows(2) {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::Shape(format!(
                    "layer {} outputs {} but {} expects {}",
                    pair[0].name,
                    pair[0].d_out(),
                    pair[1].name,
                    pair[1].d_in()
                )));
            }
        }
        let mut names: Vec<&str> = self.layers.iter().map(|l| l.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(config_err("duplicate layer names"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map(Layer::d_out).unwrap_or(0)
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut Layer> {
        self.layers.iter_mut().find(|l| l.name == name)
    }

    /// Base weights of every layer, frozen or not.
    pub fn num_base_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len()).sum()
    }

    /// Marks the named layers frozen. Unknown names are a config error.
    pub fn freeze(&mut self, names: &[String]) -> Result<()> {
        for n in names {
            self.layer_mut(n).ok_or_else(|| config_err(format!("unknown layer {n:?}")))?.frozen = true;
        }
        Ok(())
    }

    /// Trainable tensors in layer order: adapter `A`, `B` for adapted layers,
    /// the base weight for unfrozen ones.
    pub fn trainable(&self) -> ParamSet {
        let mut params = Vec::new();
        for l in &self.layers {
            if let Some(a) = &l.adapter {
                params.push(Param { name: format!("{}.lora_a", l.name), value: a.a.clone() });
                params.push(Param { name: format!("{}.lora_b", l.name), value: a.b.clone() });
            }
            if !l.frozen {
                params.push(Param { name: l.name.clone(), value: l.weight.clone() });
            }
        }
        ParamSet::new(params)
    }

    pub fn num_trainable(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.adapter.as_ref().map_or(0, LoraAdapter::num_params) + if l.frozen { 0 } else { l.weight.len() }
            })
            .sum()
    }

    /// Writes `params` (laid out as [`trainable`](Self::trainable)) back into the model.
    pub fn set_trainable(&mut self, params: &ParamSet) -> Result<()> {
        let mut it = params.params.iter();
        let mut next = |expected: &str, shape: (usize, usize)| -> Result<Matrix> {
            let p = it.next().ok_or_else(|| Error::Shape("too few trainable tensors".into()))?;
            if p.name != expected || p.value.shape() != shape {
                return Err(Error::Shape(format!(
                    "expected {expected} {shape:?}, got {} {:?}",
                    p.name,
                    p.value.shape()
                )));
            }
            Ok(p.value.clone())
        };
        for l in &mut self.layers {
            if let Some(a) = &mut l.adapter {
                a.a = next(&format!("{}.lora_a", l.name), a.a.shape())?;
                a.b = next(&format!("{}.lora_b", l.name), a.b.shape())?;
            }
            if !l.frozen {
                l.weight = next(&l.name, l.weight.shape())?;
            }
        }
        if it.next().is_some() {
            return Err(Error::Shape("too many trainable tensors".into()));
        }
        Ok(())
    }

    fn batch(&self, records: &[&Record]) -> Result<Matrix> {
        let d = self.input_dim();
        let mut data = Vec::with_capacity(records.len() * d);
        for r in records {
            if r.features.len() != d {
                return Err(Error::Shape(format!("record has {} features, model expects {d}", r.features.len())));
            }
            data.extend_from_slice(&r.features);
        }
        Matrix::from_vec(records.len(), d, data)
    }

    fn forward_trace(&self, x: Matrix) -> Trace {
        let weights: Vec<Matrix> = self.layers.iter().map(Layer::effective_weight).collect();
        let mut inputs = Vec::with_capacity(weights.len());
        let mut h = x;
        let last = weights.len() - 1;
        for (b, w) in weights.iter().enumerate() {
            let a = h.matmul_t(w);
            inputs.push(h);
            h = if b == last { a } else { a.map(f64::tanh) };
        }
        Trace { inputs, weights, logits: h }
    }

    /// Class logits for a feature batch (n × d_in).
    pub fn logits(&self, x: &Matrix) -> Matrix {
        self.forward_trace(x.clone()).logits
    }

    pub fn predict_proba(&self, features: &[f64]) -> Vec<f64> {
        let x = Matrix::from_vec(1, features.len(), features.to_vec()).expect("row vector");
        softmax_rows(&self.logits(&x)).row(0).to_vec()
    }

    /// Mean cross-entropy over `records`.
    pub fn loss(&self, records: &[&Record]) -> Result<f64> {
        if records.is_empty() {
            return Ok(0.0);
        }
        let x = self.batch(records)?;
        let probs = softmax_rows(&self.logits(&x));
        Ok(mean_nll(&probs, records))
    }

    /// Mean loss and its gradient over `records`, laid out as [`trainable`](Self::trainable).
    pub fn loss_and_gradient(&self, records: &[&Record]) -> Result<(f64, ParamSet)> {
        if records.is_empty() {
            return Err(config_err("gradient of an empty batch"));
        }
        let n = records.len() as f64;
        let trace = self.forward_trace(self.batch(records)?);
        let mut delta = softmax_rows(&trace.logits);
        let loss = mean_nll(&delta, records);
        for (i, r) in records.iter().enumerate() {
            if r.answer_id >= delta.cols() {
                return Err(Error::Shape(format!("label {} outside {} classes", r.answer_id, delta.cols())));
            }
            let v = delta.get(i, r.answer_id);
            delta.set(i, r.answer_id, v - 1.0);
        }
        delta.scale_mut(1.0 / n);

        let mut per_layer: Vec<Vec<Param>> = vec![Vec::new(); self.layers.len()];
        for b in (0..self.layers.len()).rev() {
            let layer = &self.layers[b];
            let h = &trace.inputs[b];
            let grad_w = delta.t_matmul(h); // d_out × d_in
            if b > 0 {
                let mut dh = delta.matmul(&trace.weights[b]);
                // tanh' = 1 − tanh²; inputs[b] holds tanh outputs of layer b−1
                for (g, t) in dh.as_mut_slice().iter_mut().zip(h.as_slice()) {
                    *g *= 1.0 - t * t;
                }
                delta = dh;
            }
            if let Some(a) = &layer.adapter {
                per_layer[b].push(Param {
                    name: format!("{}.lora_a", layer.name),
                    value: grad_w.matmul_t(&a.b).scale(a.scaling),
                });
                per_layer[b].push(Param {
                    name: format!("{}.lora_b", layer.name),
                    value: a.a.t_matmul(&grad_w).scale(a.scaling),
                });
            }
            if !layer.frozen {
                per_layer[b].push(Param { name: layer.name.clone(), value: grad_w });
            }
        }
        Ok((loss, ParamSet::new(per_layer.into_iter().flatten().collect())))
    }

    /// Gradient of the mean loss over one provider's records.
    pub fn group_gradient(&self, group: &crate::fedsim::ProviderGroup) -> Result<ParamSet> {
        let refs: Vec<&Record> = group.records.iter().collect();
        Ok(self.loss_and_gradient(&refs)?.1)
    }

    pub fn predict(&self, records: &[&Record]) -> Result<Vec<usize>> {
        if records.is_empty() {
            return Ok(Vec::new());
        }
        let logits = self.logits(&self.batch(records)?);
        Ok((0..logits.rows())
            .map(|i| {
                logits
                    .row(i)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (c, v)| if *v > best.1 { (c, *v) } else { best })
                    .0
            })
            .collect())
    }

    /// Validation loss plus accuracy/ANLS of the predicted answer strings.
    pub fn evaluate(&self, records: &[Record], labels: &[String], norm: Normalization) -> Result<(f64, EvalResult)> {
        let refs: Vec<&Record> = records.iter().collect();
        let loss = self.loss(&refs)?;
        let preds = self.predict(&refs)?;
        let result = evaluate(
            preds.iter().zip(records).map(|(p, r)| (labels[*p].as_str(), r.answer.as_str())),
            norm,
        );
        Ok((loss, result))
    }
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    let cols = out.cols();
    for row in out.as_mut_slice().chunks_mut(cols.max(1)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

fn mean_nll(probs: &Matrix, records: &[&Record]) -> f64 {
    let total: f64 = records
        .iter()
        .enumerate()
        .map(|(i, r)| -probs.get(i, r.answer_id.min(probs.cols() - 1)).max(1e-300).ln())
        .sum();
    total / records.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(features: Vec<f64>, class: usize) -> Record {
        Record { features, answer: format!("c{class}"), answer_id: class }
    }

    #[test]
    fn softmax_sums_to_one() {
        let m = LayeredModel::mlp(&[3, 5, 4], 1).unwrap();
        let p = m.predict_proba(&[0.3, -2.0, 10.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_weights_gradient_is_mean_of_softmax_minus_onehot() {
        let mut m = LayeredModel::mlp(&[2, 3], 0).unwrap();
        m.layers[0].weight = Matrix::zeros(3, 2);
        let recs = [rec(vec![1.0, 2.0], 0), rec(vec![-1.0, 0.5], 1), rec(vec![0.5, 0.5], 2)];
        let refs: Vec<&Record> = recs.iter().collect();
        let (_, g) = m.loss_and_gradient(&refs).unwrap();
        let g = g.get("layer0").unwrap();
        for c in 0..3 {
            for j in 0..2 {
                let expect: f64 = recs
                    .iter()
                    .map(|r| (1.0 / 3.0 - if r.answer_id == c { 1.0 } else { 0.0 }) * r.features[j])
                    .sum::<f64>()
                    / 3.0;
                assert!((g.get(c, j) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn duplicated_group_has_same_mean_gradient() {
        let m = LayeredModel::mlp(&[2, 4, 3], 5).unwrap();
        let recs = vec![rec(vec![1.0, 2.0], 0), rec(vec![-1.0, 0.5], 2)];
        let twice: Vec<Record> = recs.iter().chain(recs.iter()).cloned().collect();
        let g1 = m.loss_and_gradient(&recs.iter().collect::<Vec<_>>()).unwrap().1;
        let g2 = m.loss_and_gradient(&twice.iter().collect::<Vec<_>>()).unwrap().1;
        assert!(g1.sub(&g2).max_abs() < 1e-15);
    }

    #[test]
    fn frozen_layers_are_not_trainable() {
        let mut m = LayeredModel::mlp(&[4, 6, 3], 2).unwrap();
        m.freeze(&["layer0".to_string()]).unwrap();
        let t = m.trainable();
        assert_eq!(t.len(), 1);
        assert_eq!(t.params[0].name, "layer1");
        assert_eq!(m.num_trainable(), 18);
        assert!(m.freeze(&["nope".to_string()]).is_err());
        let mut t2 = t.clone();
        t2.scale_mut(2.0);
        m.set_trainable(&t2).unwrap();
        assert_eq!(m.trainable(), t2);
    }
}
