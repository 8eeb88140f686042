use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::accountant::PrivacySpend;
use crate::error::Result;

/// Global-model validation metrics and traffic after one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub clients: Vec<usize>,
    pub noise_only: bool,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_anls: f64,
    pub round_bytes: u64,
    pub total_bytes: u64,
    /// Spend after this many rounds (DP protocols only).
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub rounds: Vec<RoundRecord>,
}

impl History {
    pub fn last(&self) -> Option<&RoundRecord> {
        self.rounds.last()
    }

    /// First round whose validation loss is at or below `target`.
    pub fn rounds_to_loss(&self, target: f64) -> Option<u32> {
        self.rounds.iter().find(|r| r.val_loss <= target).map(|r| r.round)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "round",
            "clients",
            "noise_only",
            "val_loss",
            "val_accuracy",
            "val_anls",
            "round_bytes",
            "total_bytes",
            "epsilon",
        ])?;
        for r in &self.rounds {
            let clients = r.clients.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
            wtr.write_record([
                r.round.to_string(),
                clients,
                r.noise_only.to_string(),
                r.val_loss.to_string(),
                r.val_accuracy.to_string(),
                r.val_anls.to_string(),
                r.round_bytes.to_string(),
                r.total_bytes.to_string(),
                r.epsilon.map(|e| e.to_string()).unwrap_or_default(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Exact accountant inputs used by a DP run and the resulting spend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub q: f64,
    pub sigma: f64,
    pub steps: u64,
    pub delta: f64,
    pub epsilon: f64,
    pub best_alpha: f64,
    pub target_epsilon: Option<f64>,
}

impl PrivacyReport {
    pub fn new(q: f64, sigma: f64, steps: u64, spend: PrivacySpend, target_epsilon: Option<f64>) -> Self {
        Self {
            q,
            sigma,
            steps,
            delta: spend.delta,
            epsilon: spend.epsilon,
            best_alpha: spend.best_alpha,
            target_epsilon,
        }
    }
}
