//! Runs a bundled TOML config through the library, the same path the
//! `pflkit run` subcommand takes, and prints the summary.
//!
//! ```bash
//! cargo run --release -p pflkit --example experiment_config -- crates/core/configs/fl_group_dp.toml
//! ```

use std::path::{Path, PathBuf};

use pflkit::config::ExperimentConfig;
use pflkit::experiment::{dry_run, execute, prepare, summarize, Overrides};
use pflkit::wire::ledger_total;

fn main() -> pflkit::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/fedavg_tiny.toml"));
    let cfg = ExperimentConfig::load(&path)?;
    let prepared = prepare(&cfg, path.parent().unwrap_or(Path::new(".")), Overrides::default())?;

    let plan = dry_run(&prepared)?;
    println!("projected: {} bytes", ledger_total(&plan, prepared.gb).bytes);

    let out = execute(&prepared)?;
    let summary = summarize(&prepared, &out);
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
