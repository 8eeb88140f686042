use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use pflkit::accountant::{calibrate_sigma, compose_and_convert, AlphaGrid, SgmParams};
use pflkit::config::ExperimentConfig;
use pflkit::experiment::{self, Overrides, OUTPUT_ROOT_ENV};
use pflkit::wire::ledger_total;
use pflkit::Result;

#[derive(Parser)]
#[command(name = "pflkit", version, about = "Federated learning with group-level DP on a desk-scale simulator")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write history.csv, ledger.csv, summary.json, model.ckpt.
    Run {
        config: PathBuf,
        /// Worker threads for the clients of a round (results do not depend on it).
        #[arg(long)]
        jobs: Option<usize>,
        /// Override the experiment seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the per-round message plan and projected bytes without training.
        #[arg(long)]
        dry_run: bool,
    },
    /// Privacy spent by `steps` compositions of the subsampled Gaussian mechanism.
    Account {
        #[arg(long)]
        q: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
    },
    /// Smallest noise multiplier meeting a target epsilon.
    Calibrate {
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        steps: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run { config, jobs, seed, dry_run } => {
            let overrides = Overrides { seed: *seed, jobs: *jobs };
            let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from);
            if *dry_run {
                return plan(config, overrides, cli.json);
            }
            let (summary, dir) = experiment::run_config(config, root.as_deref(), overrides)?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                let f = &summary.final_metrics;
                println!("{} finished {} rounds -> {}", summary.protocol, summary.rounds, dir.display());
                println!("  val loss {:.4}  accuracy {:.4}  ANLS {:.4}", f.val_loss, f.accuracy, f.anls);
                let c = &summary.communication;
                println!("  {} messages, {} bytes ({:.6} GB)", c.messages, c.total_bytes, c.total_gb);
                if let Some(p) = summary.privacy {
                    println!("  epsilon {:.6} at delta {} (q {}, sigma {:.6}, steps {})", p.epsilon, p.delta, p.q, p.sigma, p.steps);
                }
            }
            Ok(())
        }
        Command::Account { q, sigma, steps, delta } => {
            let spend = compose_and_convert(&SgmParams::new(*q, *sigma, *steps)?, *delta, &AlphaGrid::default())?;
            if cli.json {
                let v = json!({"q": q, "sigma": sigma, "steps": steps, "delta": delta,
                               "epsilon": spend.epsilon, "best_alpha": spend.best_alpha});
                println!("{}", serde_json::to_string_pretty(&v)?);
            } else {
                println!("epsilon = {:.6} at delta = {delta} (best alpha {})", spend.epsilon, spend.best_alpha);
            }
            Ok(())
        }
        Command::Calibrate { epsilon, delta, q, steps } => {
            let grid = AlphaGrid::default();
            let sigma = calibrate_sigma(*epsilon, *delta, *q, *steps, &grid)?;
            let spent = compose_and_convert(&SgmParams::new(*q, sigma, *steps)?, *delta, &grid)?.epsilon;
            if cli.json {
                let v = json!({"target_epsilon": epsilon, "delta": delta, "q": q, "steps": steps,
                               "sigma": sigma, "epsilon": spent});
                println!("{}", serde_json::to_string_pretty(&v)?);
            } else {
                println!("sigma = {sigma:.6} (spends epsilon = {spent:.6} at delta = {delta})");
            }
            Ok(())
        }
    }
}

fn plan(config: &Path, overrides: Overrides, as_json: bool) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let prepared = experiment::prepare(&cfg, config.parent().unwrap_or(Path::new(".")), overrides)?;
    let ledger = experiment::dry_run(&prepared)?;
    let total = ledger_total(&ledger, prepared.gb);
    let rounds: Vec<_> = (1..=prepared.fed.rounds)
        .map(|r| {
            let msgs: Vec<_> = ledger.entries().iter().filter(|m| m.round == r).collect();
            (r, msgs.len(), msgs.first().map_or(0, |m| m.byte_size), ledger.round_bytes(r))
        })
        .collect();
    if as_json {
        let v = json!({
            "rounds": rounds.iter().map(|(r, n, size, bytes)| json!({"round": r, "messages": n, "message_bytes": size, "bytes": bytes})).collect::<Vec<_>>(),
            "total_bytes": total.bytes,
            "total_gb": total.gb,
            "messages": total.messages,
        });
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        println!("round  messages  message_bytes  round_bytes");
        for (r, n, size, bytes) in rounds {
            println!("{r:>5}  {n:>8}  {size:>13}  {bytes:>11}");
        }
        println!("projected total: {} bytes ({:.6} GB) in {} messages", total.bytes, total.gb, total.messages);
    }
    Ok(())
}
