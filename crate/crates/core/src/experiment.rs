//! Builds the dataset and model an [`ExperimentConfig`] describes, runs the
//! protocol and writes the run directory:
//!
//! | file           | content                                                  |
//! |----------------|----------------------------------------------------------|
//! | `history.csv`  | per-round validation metrics, bytes and ε                |
//! | `ledger.csv`   | `round,direction,sender,receiver,bytes` per message      |
//! | `summary.json` | final metrics, total traffic, privacy spend              |
//! | `model.ckpt`   | final global model (see [`checkpoint`](crate::learners::checkpoint)) |
//!
//! All four files are written to a temporary sibling directory that is
//! renamed into place only after every write succeeded.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ProtocolKind};
use crate::error::{config_err, Result};
use crate::fedsim::{generate_pretraining, generate_synthetic, FederatedDataset, Record};
use crate::learners::{checkpoint, lora_attach_named, LayeredModel};
use crate::protocols::{project_ledger, run, train_centralized, DualConfig, FedConfig, Protocol, RunOutput};
use crate::wire::{ledger_total, CommLedger, GbConvention};

pub const OUTPUT_ROOT_ENV: &str = "PFLKIT_OUTPUT_ROOT";

pub const ARTIFACTS: [&str; 4] = ["history.csv", "ledger.csv", "summary.json", "model.ckpt"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

/// Everything a run needs, fully materialized.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: FederatedDataset,
    pub model: LayeredModel,
    pub fed: FedConfig,
    pub protocol: Protocol,
    pub gb: GbConvention,
}

/// `base_dir` anchors a relative dataset path (normally the config file's directory).
pub fn prepare(cfg: &ExperimentConfig, base_dir: &Path, overrides: Overrides) -> Result<Prepared> {
    cfg.validate()?;
    let seed = overrides.seed.unwrap_or(cfg.seed);
    let dataset = match (&cfg.dataset.path, &cfg.dataset.synthetic) {
        (Some(p), _) => {
            let path = if p.is_relative() { base_dir.join(p) } else { p.clone() };
            FederatedDataset::read_jsonl(BufReader::new(File::open(&path)?))?
        }
        (None, Some(s)) => generate_synthetic(s)?,
        (None, None) => return Err(config_err("dataset: set `path` or `synthetic`")),
    };
    dataset.validate()?;

    let mut widths = vec![dataset.feature_dim];
    widths.extend(&cfg.model.hidden);
    widths.push(dataset.n_classes());
    let mut model = LayeredModel::mlp(&widths, seed)?;
    if let Some(pt) = &cfg.model.pretrain {
        let synth = cfg
            .dataset
            .synthetic
            .as_ref()
            .ok_or_else(|| config_err("model.pretrain needs a synthetic dataset"))?;
        let records = generate_pretraining(synth, pt.providers, pt.records_per_provider)?;
        let refs: Vec<&Record> = records.iter().collect();
        train_centralized(&mut model, &refs, &pt.local, &pt.optimizer, seed)?;
    }
    model.freeze(&cfg.model.frozen)?;
    if let Some(l) = &cfg.model.lora {
        lora_attach_named(&mut model, &l.targets, &l.lora_config(), seed)?;
    }

    let fed = FedConfig {
        rounds: cfg.federation.rounds,
        clients_per_round: cfg.federation.clients_per_round,
        sampling: cfg.federation.sampling,
        local: cfg.federation.local,
        optimizer: cfg.optimizer,
        precision: cfg.federation.precision,
        seed,
        jobs: overrides.jobs.unwrap_or(cfg.federation.jobs),
        normalization: cfg.report.normalization,
    };
    let dp = || cfg.dp.ok_or_else(|| config_err("missing [dp] section"));
    let protocol = match cfg.protocol {
        ProtocolKind::Fedavg => Protocol::FedAvg,
        ProtocolKind::Fedshampoo => Protocol::FedShampoo,
        ProtocolKind::FlGroupDp => Protocol::FlGroupDp(dp()?),
        ProtocolKind::DpClgecl => Protocol::DpClgecl { dp: dp()?, dual: cfg.dual.unwrap_or_else(DualConfig::default) },
    };
    Ok(Prepared { dataset, model, fed, protocol, gb: cfg.report.gb })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub round: u32,
    pub val_loss: f64,
    pub accuracy: f64,
    pub anls: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Communication {
    pub total_bytes: u64,
    pub total_gb: f64,
    pub gb_convention: GbConvention,
    pub messages: usize,
    pub trainable_params: usize,
    pub bits_per_param: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub protocol: String,
    pub seed: u64,
    pub rounds: u32,
    pub clients_per_round: usize,
    pub model_params: usize,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    pub communication: Communication,
    pub privacy: Option<crate::protocols::PrivacyReport>,
}

pub fn summarize(prepared: &Prepared, out: &RunOutput) -> Summary {
    let last = out.history.last().expect("at least one round");
    let total = ledger_total(&out.ledger, prepared.gb);
    Summary {
        protocol: prepared.protocol.name().to_string(),
        seed: prepared.fed.seed,
        rounds: prepared.fed.rounds,
        clients_per_round: prepared.fed.clients_per_round,
        model_params: out.model.num_base_params(),
        final_metrics: FinalMetrics {
            round: last.round,
            val_loss: last.val_loss,
            accuracy: last.val_accuracy,
            anls: last.val_anls,
        },
        communication: Communication {
            total_bytes: total.bytes,
            total_gb: total.gb,
            gb_convention: prepared.gb,
            messages: total.messages,
            trainable_params: prepared.model.num_trainable(),
            bits_per_param: prepared.fed.precision.bit_width().bits(),
        },
        privacy: out.privacy,
    }
}

pub fn dry_run(prepared: &Prepared) -> Result<CommLedger> {
    project_ledger(&prepared.dataset, &prepared.model, &prepared.fed, &prepared.protocol)
}

pub fn execute(prepared: &Prepared) -> Result<RunOutput> {
    run(&prepared.dataset, prepared.model.clone(), &prepared.fed, &prepared.protocol, None)
}

/// Writes the four artifacts into `dir`, replacing an existing run directory.
pub fn write_artifacts(dir: &Path, summary: &Summary, out: &RunOutput) -> Result<()> {
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent)?;
    let tmp = tempfile::Builder::new().prefix(".pflkit-run-").tempdir_in(&parent)?;
    let write = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> Result<()>| -> Result<()> {
        let mut w = BufWriter::new(File::create(tmp.path().join(name))?);
        f(&mut w)?;
        w.flush()?;
        Ok(())
    };
    write("history.csv", &|w| out.history.write_csv(w))?;
    write("ledger.csv", &|w| out.ledger.write_csv(w))?;
    write("summary.json", &|w| {
        serde_json::to_writer_pretty(&mut *w, summary)?;
        w.write_all(b"\n")?;
        Ok(())
    })?;
    write("model.ckpt", &|w| checkpoint::write(&out.model, w))?;
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    let staged = tmp.keep();
    if let Err(e) = std::fs::rename(&staged, dir) {
        let _ = std::fs::remove_dir_all(&staged);
        return Err(e.into());
    }
    Ok(())
}

/// Loads, runs and writes one experiment. Returns the summary and the run directory.
pub fn run_config(path: &Path, output_root: Option<&Path>, overrides: Overrides) -> Result<(Summary, PathBuf)> {
    let cfg = ExperimentConfig::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let prepared = prepare(&cfg, base, overrides)?;
    let out = execute(&prepared)?;
    let summary = summarize(&prepared, &out);
    let dir = cfg.resolve_output(output_root);
    write_artifacts(&dir, &summary, &out)?;
    Ok((summary, dir))
}
