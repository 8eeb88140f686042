//! Noise calibration for the provider-level DP setting: K=2 of N=10 clients,
//! M=50 providers per client, at least 400 providers per client, 5 rounds.
//!
//! ```bash
//! cargo run -p pflkit --example privacy_budget
//! ```

use pflkit::accountant::{calibrate_sigma, compose_and_convert, group_sampling_rate, AlphaGrid, SgmParams};

fn main() -> pflkit::Result<()> {
    let grid = AlphaGrid::default();
    let delta = 1e-5;
    let rounds = 5;
    let q = group_sampling_rate(2.0 / 10.0, 50, 400)?;
    println!("group sampling rate q = {q}");

    for target in [1.0, 4.0, 8.0] {
        let sigma = calibrate_sigma(target, delta, q, rounds, &grid)?;
        let spend = compose_and_convert(&SgmParams::new(q, sigma, rounds)?, delta, &grid)?;
        println!(
            "target eps {target:>4}: sigma = {sigma:.5}  spent eps = {:.6} (best alpha {})",
            spend.epsilon, spend.best_alpha
        );
    }

    // the same noise for more rounds costs more
    let sigma = calibrate_sigma(4.0, delta, q, rounds, &grid)?;
    for steps in [5, 10, 20, 40] {
        let spend = compose_and_convert(&SgmParams::new(q, sigma, steps)?, delta, &grid)?;
        println!("sigma {sigma:.4}, {steps:>3} rounds -> eps {:.4}", spend.epsilon);
    }
    Ok(())
}
