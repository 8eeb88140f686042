//! FedShampoo against FedAvg on the same federation: local steps use
//! Kronecker-factored preconditioning `L^{-1/4} G R^{-1/4}`, statistics stay
//! on the clients and only weights travel.
//!
//! ```bash
//! cargo run --release -p pflkit --example fedshampoo
//! ```

use pflkit::fedsim::{generate_synthetic, SyntheticConfig};
use pflkit::learners::{LayeredModel, OptimizerConfig, ShampooConfig};
use pflkit::protocols::{run_fedavg, run_fedshampoo, FedConfig, LocalSchedule};

fn main() -> pflkit::Result<()> {
    let ds = generate_synthetic(&SyntheticConfig::default())?;
    let model = LayeredModel::mlp(&[ds.feature_dim, 32, ds.n_classes()], 0)?;
    let local = LocalSchedule::steps(20, Some(16));

    let sgd = run_fedavg(&ds, model.clone(), &FedConfig::new(10, 2, local, OptimizerConfig::Sgd { lr: 0.2 }))?;
    // desk-scale intervals: statistics every step, fresh roots every 10 steps
    let shampoo = ShampooConfig { stat_interval: 1, precond_interval: 10, ..ShampooConfig::new(0.3, Some(0.2)) };
    let fs = run_fedshampoo(&ds, model, &FedConfig::new(10, 2, local, OptimizerConfig::Shampoo(shampoo)))?;

    println!("round  fedavg  fedshampoo");
    for (a, b) in sgd.history.rounds.iter().zip(&fs.history.rounds) {
        println!("{:>5}  {:.4}  {:.4}", a.round, a.val_loss, b.val_loss);
    }
    let target = sgd.history.last().unwrap().val_loss;
    println!("FedShampoo reaches the FedAvg round-10 loss in round {:?}", fs.history.rounds_to_loss(target));
    Ok(())
}
