//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code paths it is used to check.
#![allow(dead_code)]

use pflkit::fedsim::Record;
use pflkit::learners::{lora_attach, LayeredModel, LoraConfig, ParamSet};
use pflkit::math::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};
use rand_distr::{Distribution, StandardNormal};

/// Monte-Carlo estimate of `(1/(α−1))·ln E_{z∼N(0,σ²)}[(μ(z)/μ0(z))^α]` for the
/// mixture `μ = (1−q)·N(0,σ²) + q·N(1,σ²)`.
///
/// Writing `μ/μ0 = 1 + q·Y` with `Y = exp((2z−1)/(2σ²)) − 1` (mean zero under
/// μ0), the estimator targets `E[(1+qY)^α − 1 − αqY] = A − 1`, which is
/// non-negative and keeps tiny divergences resolvable. Samples are drawn by
/// importance sampling from an equal mixture of `N(j, (1.5σ)²)`,
/// `j = 0..=ceil(α)`, so the heavy right tail is covered.
pub fn mc_renyi_mixture(alpha: f64, q: f64, sigma: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..=alpha.ceil() as usize).map(|j| j as f64).collect();
    let s = 1.5 * sigma;
    let ln_norm = |x: f64, m: f64, sd: f64| -> f64 {
        let u = (x - m) / sd;
        -0.5 * u * u - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    };
    let mut sum = 0.0f64;
    for _ in 0..samples {
        let c = centers[rng.random_range(0..centers.len())];
        let n: f64 = StandardNormal.sample(&mut rng);
        let z = c + s * n;
        let y = ((2.0 * z - 1.0) / (2.0 * sigma * sigma)).exp_m1();
        let ratio = 1.0 + q * y;
        let f = ratio.powf(alpha) - 1.0 - alpha * q * y;
        if f <= 0.0 || !f.is_finite() {
            continue;
        }
        // log proposal density: mean of component densities
        let lp = {
            let logs: Vec<f64> = centers.iter().map(|m| ln_norm(z, *m, s)).collect();
            let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            mx + (logs.iter().map(|l| (l - mx).exp()).sum::<f64>() / centers.len() as f64).ln()
        };
        let lw = f.ln() + ln_norm(z, 0.0, sigma) - lp;
        sum += lw.exp();
    }
    let a_minus_one = sum / samples as f64;
    a_minus_one.ln_1p() / (alpha - 1.0)
}

/// Direct recursive edit distance with memoization.
pub fn levenshtein_recursive(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    fn go(i: usize, j: usize, a: &[char], b: &[char], memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if i == 0 {
            j
        } else if j == 0 {
            i
        } else {
            let sub = go(i - 1, j - 1, a, b, memo) + usize::from(a[i - 1] != b[j - 1]);
            let del = go(i - 1, j, a, b, memo) + 1;
            let ins = go(i, j - 1, a, b, memo) + 1;
            sub.min(del).min(ins)
        };
        memo[i][j] = Some(v);
        v
    }
    go(a.len(), b.len(), &a, &b, &mut memo)
}

/// Relative error helper.
pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

/// Rounds `value` to the number of significant digits carried by the printed
/// decimal string (a trailing zero without a decimal point is not significant).
pub fn matches_printed(value: f64, printed: &str) -> bool {
    let digits: String = printed.chars().filter(|c| c.is_ascii_digit()).collect();
    let trimmed = digits.trim_start_matches('0');
    let sig = if printed.contains('.') {
        trimmed.len()
    } else {
        trimmed.trim_end_matches('0').len()
    }
    .max(1);
    let target: f64 = printed.parse().unwrap();
    let mag = value.abs().log10().floor() as i32;
    let factor = 10f64.powi(sig as i32 - 1 - mag);
    ((value * factor).round() / factor - target).abs() <= 1e-9 * target.abs()
}

/// Small random MLP (sometimes with a LoRA adapter or a frozen layer) and a
/// handful of records for it.
pub fn random_case(seed: u64) -> (LayeredModel, Vec<Record>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3);
    let widths: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=5)).collect();
    let mut widths = widths;
    *widths.last_mut().unwrap() = rng.random_range(2..=4);
    let mut model = LayeredModel::mlp(&widths, seed).unwrap();
    for l in &mut model.layers {
        l.weight.as_mut_slice().iter_mut().for_each(|v| *v *= rng.random_range(0.5..2.0));
    }
    if rng.random_bool(0.5) {
        let target = format!("layer{}", rng.random_range(0..depth));
        let cfg = LoraConfig { rank: rng.random_range(1..=3), scaling: Some(rng.random_range(0.2..2.0)), init_std: 0.5 };
        lora_attach(&mut model, |n| n == target, &cfg, seed).unwrap();
        let ad = model.layer_mut(&target).unwrap().adapter.as_mut().unwrap();
        ad.a = Matrix::from_fn(ad.a.rows(), ad.a.cols(), |_, _| rng.random_range(-1.0..1.0));
    }
    if depth > 1 && rng.random_bool(0.3) {
        model.layers[depth - 1].frozen = true;
    }
    let n_classes = model.n_classes();
    let d = model.input_dim();
    let records = (0..rng.random_range(1..=6))
        .map(|_| {
            let c = rng.random_range(0..n_classes);
            Record { features: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(), answer: format!("a{c}"), answer_id: c }
        })
        .collect();
    (model, records)
}

/// Central differences of the mean loss over every trainable value.
pub fn finite_difference(model: &LayeredModel, records: &[&Record], h: f64) -> ParamSet {
    let base = model.trainable();
    let flat = base.flatten();
    let mut grad = vec![0.0; flat.len()];
    let mut m = model.clone();
    for i in 0..flat.len() {
        let mut p = flat.clone();
        p[i] = flat[i] + h;
        m.set_trainable(&base.unflatten(&p).unwrap()).unwrap();
        let up = m.loss(records).unwrap();
        p[i] = flat[i] - h;
        m.set_trainable(&base.unflatten(&p).unwrap()).unwrap();
        let down = m.loss(records).unwrap();
        grad[i] = (up - down) / (2.0 * h);
    }
    base.unflatten(&grad).unwrap()
}
