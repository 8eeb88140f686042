use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::fedsim::Record;
use crate::learners::{LayeredModel, Optimizer};
use crate::rng::StreamRng;

/// How much local work one participation performs: whole epochs over the
/// local records, or a fixed number of mini-batch steps (cycling through
/// reshuffled epochs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalSchedule {
    #[serde(default)]
    pub epochs: Option<u32>,
    #[serde(default)]
    pub steps: Option<u32>,
    /// `None` uses the full local dataset as one batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl LocalSchedule {
    pub fn epochs(epochs: u32, batch_size: Option<usize>) -> Self {
        Self { epochs: Some(epochs), steps: None, batch_size }
    }

    pub fn steps(steps: u32, batch_size: Option<usize>) -> Self {
        Self { epochs: None, steps: Some(steps), batch_size }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.epochs, self.steps) {
            (Some(0), _) | (_, Some(0)) => Err(config_err("local: epochs/steps must be at least 1")),
            (Some(_), None) | (None, Some(_)) => {
                if self.batch_size == Some(0) {
                    Err(config_err("local.batch_size must be at least 1"))
                } else {
                    Ok(())
                }
            }
            _ => Err(config_err("local: set exactly one of epochs and steps")),
        }
    }

    /// Index batches over `n` records, reshuffled each pass.
    pub fn batches(&self, n: usize, rng: &mut StreamRng) -> Vec<Vec<usize>> {
        if n == 0 {
            return Vec::new();
        }
        let bs = self.batch_size.unwrap_or(n).min(n);
        let mut out = Vec::new();
        let mut order: Vec<usize> = (0..n).collect();
        let mut pass = |out: &mut Vec<Vec<usize>>| {
            order.shuffle(rng);
            out.extend(order.chunks(bs).map(<[usize]>::to_vec));
        };
        match (self.epochs, self.steps) {
            (Some(e), _) => (0..e).for_each(|_| pass(&mut out)),
            (None, Some(s)) => {
                while out.len() < s as usize {
                    pass(&mut out);
                }
                out.truncate(s as usize);
            }
            (None, None) => {}
        }
        out
    }
}

/// Trains the model's trainable tensors in place.
pub fn local_train(
    model: &mut LayeredModel,
    records: &[&Record],
    schedule: &LocalSchedule,
    optimizer: &mut Optimizer,
    rng: &mut StreamRng,
) -> Result<()> {
    let mut params = model.trainable();
    let mut batch: Vec<&Record> = Vec::new();
    for idx in schedule.batches(records.len(), rng) {
        batch.clear();
        batch.extend(idx.iter().map(|&i| records[i]));
        let (_, grads) = model.loss_and_gradient(&batch)?;
        optimizer.step(&mut params, &grads)?;
        model.set_trainable(&params)?;
    }
    Ok(())
}
