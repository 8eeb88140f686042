mod common;

use common::{finite_difference, random_case};
use pflkit::fedsim::Record;
use pflkit::learners::{lora_attach, lora_merge, LayeredModel, LoraConfig, OptimizerConfig, Param, ParamSet, ShampooConfig};
use pflkit::math::Matrix;
use proptest::prelude::*;

#[test]
fn gradients_match_central_differences_on_100_models() {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let (model, records) = random_case(seed);
        let refs: Vec<&Record> = records.iter().collect();
        let (_, g) = model.loss_and_gradient(&refs).unwrap();
        let fd = finite_difference(&model, &refs, 1e-5);
        for (a, b) in g.flatten().iter().zip(fd.flatten()) {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn lora_merge_preserves_forward() {
    for seed in 0..20 {
        let mut model = LayeredModel::mlp(&[6, 8, 8, 3], seed).unwrap();
        let cfg = LoraConfig { rank: 2, scaling: None, init_std: 0.3 };
        lora_attach(&mut model, |n| n != "layer2", &cfg, seed).unwrap();
        for l in &mut model.layers {
            if let Some(a) = &mut l.adapter {
                a.a = Matrix::from_fn(a.a.rows(), a.a.cols(), |i, j| ((i * 7 + j * 3 + seed as usize) % 11) as f64 / 11.0 - 0.5);
            }
        }
        let merged = lora_merge(&model);
        let x = Matrix::from_fn(16, 6, |i, j| ((i * 13 + j * 5) % 17) as f64 / 4.0 - 2.0);
        let diff = model.logits(&x).sub(&merged.logits(&x)).max_abs();
        assert!(diff < 1e-9, "merge changed outputs by {diff}");
    }
}

#[test]
fn shampoo_identity_preconditioner_reproduces_sgd_trajectory() {
    let (model, records) = random_case(7);
    let refs: Vec<&Record> = records.iter().collect();
    let shampoo = OptimizerConfig::Shampoo(ShampooConfig::new(0.05, None));
    let sgd = OptimizerConfig::Sgd { lr: 0.05 };
    let mut a = model.clone();
    let mut b = model.clone();
    let mut oa = shampoo.init(&a.trainable());
    let mut ob = sgd.init(&b.trainable());
    // before the first refresh at t = 100 the cached preconditioners are I
    for _ in 0..99 {
        for (m, o) in [(&mut a, &mut oa), (&mut b, &mut ob)] {
            let (_, g) = m.loss_and_gradient(&refs).unwrap();
            let mut p = m.trainable();
            o.step(&mut p, &g).unwrap();
            m.set_trainable(&p).unwrap();
        }
    }
    assert_eq!(a, b);
}

/// `f(W) = ½ Σ_ij h_i (W − W*)_ij²` with `h = (1, 100)`.
fn quadratic_iterations(cfg: OptimizerConfig, max_iters: usize) -> Option<usize> {
    let h = [1.0, 100.0];
    let target = Matrix::from_vec(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
    let mut w = ParamSet::new(vec![Param { name: "w".into(), value: Matrix::zeros(2, 2) }]);
    let mut opt = cfg.init(&w);
    for it in 0..max_iters {
        let e = w.params[0].value.sub(&target);
        let loss: f64 = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| 0.5 * h[i] * e.get(i, j).powi(2)).sum();
        if !loss.is_finite() {
            return None;
        }
        if loss < 1e-6 {
            return Some(it);
        }
        let g = ParamSet::new(vec![Param { name: "w".into(), value: Matrix::from_fn(2, 2, |i, j| h[i] * e.get(i, j)) }]);
        opt.step(&mut w, &g).unwrap();
    }
    None
}

#[test]
fn shampoo_beats_tuned_sgd_on_ill_conditioned_quadratic() {
    let lrs: Vec<f64> = (0..=40).map(|k| 10f64.powf(-4.0 + k as f64 * 0.1)).collect();
    let best = |make: &dyn Fn(f64) -> OptimizerConfig| {
        lrs.iter().filter_map(|&lr| quadratic_iterations(make(lr), 20_000)).min()
    };
    let sgd = best(&|lr| OptimizerConfig::Sgd { lr }).expect("sgd converges for some lr");
    let shampoo = best(&|lr| {
        OptimizerConfig::Shampoo(ShampooConfig { stat_interval: 1, precond_interval: 1, ..ShampooConfig::new(lr, None) })
    })
    .expect("shampoo converges for some lr");
    assert!(shampoo < sgd, "shampoo {shampoo} iterations vs sgd {sgd}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn forward_is_finite_and_normalized(seed in 0u64..10_000, scale in 0.0f64..1e3) {
        let (model, records) = random_case(seed);
        for r in &records {
            let x: Vec<f64> = r.features.iter().map(|v| v * scale).collect();
            let p = model.predict_proba(&x);
            prop_assert!(p.iter().all(|v| v.is_finite()));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
