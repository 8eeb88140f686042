//! Pretrain, attach rank-6 adapters to the middle layers, federate only the
//! adapters, then merge them back and checkpoint the result.
//!
//! ```bash
//! cargo run --release -p pflkit --example lora_adapters
//! ```

use pflkit::fedsim::{generate_pretraining, generate_synthetic, Record, SyntheticConfig};
use pflkit::learners::{checkpoint, lora_attach_named, lora_merge, LayeredModel, LoraConfig, OptimizerConfig};
use pflkit::math::Matrix;
use pflkit::protocols::{run_fedavg, train_centralized, FedConfig, LocalSchedule};

fn main() -> pflkit::Result<()> {
    let cfg = SyntheticConfig::default();
    let ds = generate_synthetic(&cfg)?;
    let mut model = LayeredModel::mlp(&[16, 256, 256, 256, 8], 0)?;
    let pre = generate_pretraining(&cfg, 50, 30)?;
    let refs: Vec<&Record> = pre.iter().collect();
    train_centralized(&mut model, &refs, &LocalSchedule::epochs(1, Some(32)), &OptimizerConfig::adamw(0.001), 0)?;

    model.freeze(&["layer0".into(), "layer3".into()])?;
    let targets = ["layer1".to_string(), "layer2".to_string()];
    let trainable = lora_attach_named(&mut model, &targets, &LoraConfig { rank: 6, scaling: None, init_std: 0.01 }, 0)?;
    println!("{trainable} trainable of {} base parameters", model.num_base_params());

    let out = run_fedavg(&ds, model, &FedConfig::new(10, 2, LocalSchedule::steps(20, Some(16)), OptimizerConfig::adamw(0.003)))?;
    println!("final accuracy {:.4}, {} bytes moved", out.history.last().unwrap().val_accuracy, out.ledger.total_bytes());

    let merged = lora_merge(&out.model);
    let x = Matrix::from_fn(4, 16, |i, j| (i as f64 - j as f64) / 8.0);
    println!("merge changes logits by {:.2e}", out.model.logits(&x).sub(&merged.logits(&x)).max_abs());

    let bytes = checkpoint::encode(&merged);
    assert_eq!(checkpoint::decode(&bytes)?, merged);
    println!("merged checkpoint: {} bytes", bytes.len());
    Ok(())
}
