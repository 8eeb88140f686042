//! Federated averaging with AdamW clients and f32 transport.
//!
//! ```bash
//! cargo run --release -p pflkit --example fedavg
//! ```

use pflkit::fedsim::{generate_synthetic, SyntheticConfig};
use pflkit::learners::{LayeredModel, OptimizerConfig};
use pflkit::protocols::{run_fedavg, FedConfig, LocalSchedule};
use pflkit::wire::{ledger_total, GbConvention, Precision};

fn main() -> pflkit::Result<()> {
    let ds = generate_synthetic(&SyntheticConfig::default())?;
    let model = LayeredModel::mlp(&[ds.feature_dim, 32, ds.n_classes()], 0)?;

    let mut cfg = FedConfig::new(10, 2, LocalSchedule::steps(20, Some(16)), OptimizerConfig::adamw(0.007));
    cfg.precision = Precision::F32;
    let out = run_fedavg(&ds, model, &cfg)?;

    println!("round  clients  val_loss  accuracy  bytes");
    for r in &out.history.rounds {
        println!("{:>5}  {:>7}  {:>8.4}  {:>8.4}  {}", r.round, format!("{:?}", r.clients), r.val_loss, r.val_accuracy, r.round_bytes);
    }
    let total = ledger_total(&out.ledger, GbConvention::Decimal);
    println!("{} messages, {} bytes in total", total.messages, total.bytes);
    Ok(())
}
