//! Federation data model and a synthetic, provider-grouped, non-i.i.d.
//! classification task.
//!
//! Each record is a feature vector with a short string answer. Records are
//! grouped by provider and providers are partitioned across clients, so the
//! unit of privacy (a provider) is always a whole [`ProviderGroup`].

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::math::Matrix;
use crate::rng::{stream, tag, StreamRng};

/// Provider counts per client in the competition's training split.
pub const COMPETITION_PROVIDER_COUNTS: [usize; 10] = [400, 418, 404, 414, 429, 423, 423, 416, 401, 421];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub features: Vec<f64>,
    pub answer: String,
    pub answer_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderGroup {
    pub provider_id: u32,
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client_id: usize,
    pub groups: Vec<ProviderGroup>,
}

impl ClientDataset {
    pub fn records(&self) -> impl Iterator<Item = &Record> {
        self.groups.iter().flat_map(|g| g.records.iter())
    }

    pub fn num_records(&self) -> usize {
        self.groups.iter().map(|g| g.records.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedDataset {
    pub clients: Vec<ClientDataset>,
    pub validation: Vec<Record>,
    pub seed: u64,
    pub feature_dim: usize,
    /// Answer string of each class id.
    pub labels: Vec<String>,
}

impl FederatedDataset {
    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_records(&self) -> usize {
        self.clients.iter().map(ClientDataset::num_records).sum()
    }

    /// Copy of the dataset with every record of `provider_id` removed.
    pub fn without_provider(&self, provider_id: u32) -> FederatedDataset {
        let mut out = self.clone();
        for c in &mut out.clients {
            c.groups.retain(|g| g.provider_id != provider_id);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients.is_empty() {
            return Err(config_err("dataset has no clients"));
        }
        let mut seen = HashSet::new();
        for c in &self.clients {
            for g in &c.groups {
                if !seen.insert(g.provider_id) {
                    return Err(config_err(format!("provider {} appears twice", g.provider_id)));
                }
                if g.records.is_empty() {
                    return Err(config_err(format!("provider {} has no records", g.provider_id)));
                }
                for r in &g.records {
                    if r.features.len() != self.feature_dim || r.features.iter().any(|v| !v.is_finite()) {
                        return Err(config_err(format!("bad features in provider {}", g.provider_id)));
                    }
                    if r.answer.is_empty() || r.answer_id >= self.labels.len() {
                        return Err(config_err(format!("bad answer in provider {}", g.provider_id)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes the dataset as JSON lines: one metadata line, then one line per record.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let meta = JsonlMeta {
            format: JSONL_FORMAT.to_string(),
            version: 1,
            seed: self.seed,
            feature_dim: self.feature_dim,
            labels: self.labels.clone(),
        };
        serde_json::to_writer(&mut w, &meta)?;
        w.write_all(b"\n")?;
        for c in &self.clients {
            for g in &c.groups {
                for r in &g.records {
                    let line = JsonlRecord {
                        split: Split::Train,
                        client_id: Some(c.client_id),
                        provider_id: Some(g.provider_id),
                        features: r.features.clone(),
                        answer: r.answer.clone(),
                        answer_id: r.answer_id,
                    };
                    serde_json::to_writer(&mut w, &line)?;
                    w.write_all(b"\n")?;
                }
            }
        }
        for r in &self.validation {
            let line = JsonlRecord {
                split: Split::Validation,
                client_id: None,
                provider_id: None,
                features: r.features.clone(),
                answer: r.answer.clone(),
                answer_id: r.answer_id,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<FederatedDataset> {
        let mut lines = r.lines();
        let meta_line = lines.next().ok_or_else(|| Error::Decode("empty dataset file".into()))??;
        let meta: JsonlMeta = serde_json::from_str(&meta_line)?;
        if meta.format != JSONL_FORMAT {
            return Err(Error::Decode(format!("unexpected format tag {:?}", meta.format)));
        }
        let mut clients: Vec<ClientDataset> = Vec::new();
        let mut validation = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: JsonlRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Decode(format!("line {}: {e}", lineno + 2)))?;
            let record = Record { features: rec.features, answer: rec.answer, answer_id: rec.answer_id };
            match rec.split {
                Split::Validation => validation.push(record),
                Split::Train => {
                    let (cid, pid) = rec
                        .client_id
                        .zip(rec.provider_id)
                        .ok_or_else(|| Error::Decode(format!("line {}: train record without ids", lineno + 2)))?;
                    while clients.len() <= cid {
                        clients.push(ClientDataset { client_id: clients.len(), groups: Vec::new() });
                    }
                    let groups = &mut clients[cid].groups;
                    match groups.last_mut() {
                        Some(g) if g.provider_id == pid => g.records.push(record),
                        _ => groups.push(ProviderGroup { provider_id: pid, records: vec![record] }),
                    }
                }
            }
        }
        let ds = FederatedDataset {
            clients,
            validation,
            seed: meta.seed,
            feature_dim: meta.feature_dim,
            labels: meta.labels,
        };
        ds.validate()?;
        Ok(ds)
    }
}

const JSONL_FORMAT: &str = "pflkit-dataset";

#[derive(Serialize, Deserialize)]
struct JsonlMeta {
    format: String,
    version: u32,
    seed: u64,
    feature_dim: usize,
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum Split {
    Train,
    Validation,
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    split: Split,
    client_id: Option<usize>,
    provider_id: Option<u32>,
    features: Vec<f64>,
    answer: String,
    answer_id: usize,
}

/// `min_k |G_k|`: the smallest number of provider groups held by any client.
pub fn min_group_count(ds: &FederatedDataset) -> usize {
    ds.clients.iter().map(|c| c.groups.len()).min().unwrap_or(0)
}

/// Records per provider: a constant or a uniform integer range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecordCount {
    Fixed(usize),
    Uniform { min: usize, max: usize },
}

impl RecordCount {
    fn sample(&self, rng: &mut StreamRng) -> usize {
        match *self {
            RecordCount::Fixed(n) => n,
            RecordCount::Uniform { min, max } => rng.random_range(min..=max),
        }
    }

    fn min(&self) -> usize {
        match *self {
            RecordCount::Fixed(n) => n,
            RecordCount::Uniform { min, .. } => min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub providers_per_client: Vec<usize>,
    pub records_per_provider: RecordCount,
    pub feature_dim: usize,
    pub n_classes: usize,
    /// 0 gives statistically identical providers; 1 gives strong per-provider
    /// class-mean shifts and label skew.
    pub heterogeneity: f64,
    /// Scale of the class means relative to the unit within-class noise.
    pub class_separation: f64,
    /// Scale of the provider offsets at `heterogeneity = 1`.
    pub provider_shift: f64,
    /// Ratio between the largest and smallest axis of the feature map; 1 is isotropic.
    pub feature_condition: f64,
    pub validation_size: usize,
    /// Share of validation records drawn from providers never seen in training.
    pub unseen_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            providers_per_client: vec![20; 10],
            records_per_provider: RecordCount::Fixed(30),
            feature_dim: 16,
            n_classes: 8,
            heterogeneity: 0.5,
            class_separation: 0.6,
            provider_shift: 0.6,
            feature_condition: 1.0,
            validation_size: 1000,
            unseen_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn competition_shape(seed: u64) -> Self {
        Self { providers_per_client: COMPETITION_PROVIDER_COUNTS.to_vec(), seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.providers_per_client.is_empty() {
            return Err(config_err("dataset.providers_per_client must list at least one client"));
        }
        if let Some(i) = self.providers_per_client.iter().position(|&p| p == 0) {
            return Err(config_err(format!("dataset.providers_per_client[{i}] is zero")));
        }
        if self.records_per_provider.min() == 0 {
            return Err(config_err("dataset.records_per_provider must be >= 1"));
        }
        if let RecordCount::Uniform { min, max } = self.records_per_provider {
            if min > max {
                return Err(config_err("dataset.records_per_provider: min > max"));
            }
        }
        if self.feature_dim == 0 || self.n_classes < 2 {
            return Err(config_err("dataset needs feature_dim >= 1 and n_classes >= 2"));
        }
        if !(0.0..=1.0).contains(&self.heterogeneity) {
            return Err(config_err("dataset.heterogeneity must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.unseen_fraction) {
            return Err(config_err("dataset.unseen_fraction must lie in [0, 1]"));
        }
        if !(self.feature_condition >= 1.0) {
            return Err(config_err("dataset.feature_condition must be >= 1"));
        }
        Ok(())
    }
}

const ANSWER_WORDS: [&str; 16] = [
    "total", "invoice", "date", "amount", "tax", "vendor", "balance", "due", "order", "account", "net",
    "gross", "ref", "unit", "item", "sum",
];

/// Task-level structure shared by every provider: class means, labels and
/// the linear feature map.
struct Task {
    means: Vec<Vec<f64>>,
    labels: Vec<String>,
    feature_map: Option<Matrix>,
}

impl Task {
    fn new(cfg: &SyntheticConfig) -> Task {
        let mut rng = stream(cfg.seed, &[tag::TASK]);
        let d = cfg.feature_dim;
        let means = (0..cfg.n_classes)
            .map(|_| (0..d).map(|_| cfg.class_separation * normal(&mut rng)).collect())
            .collect();
        let mut labels = Vec::with_capacity(cfg.n_classes);
        let mut used = HashSet::new();
        for c in 0..cfg.n_classes {
            loop {
                let word = ANSWER_WORDS[(c + labels.len() / ANSWER_WORDS.len()) % ANSWER_WORDS.len()];
                let label = format!("{word} {}", rng.random_range(10..1000));
                if used.insert(label.clone()) {
                    labels.push(label);
                    break;
                }
            }
        }
        let feature_map = (cfg.feature_condition > 1.0).then(|| {
            let q = random_orthogonal(&mut rng, d);
            let scales: Vec<f64> = (0..d)
                .map(|i| cfg.feature_condition.powf(-(i as f64) / (d.max(2) - 1) as f64))
                .collect();
            Matrix::from_fn(d, d, |r, c| q.get(r, c) * scales[c])
        });
        Task { means, labels, feature_map }
    }

    fn sample(&self, rng: &mut StreamRng, class: usize, offset: &[f64]) -> Record {
        let z: Vec<f64> = self.means[class]
            .iter()
            .zip(offset)
            .map(|(m, o)| m + o + normal(rng))
            .collect();
        let features = match &self.feature_map {
            Some(a) => (0..z.len()).map(|r| a.row(r).iter().zip(&z).map(|(x, y)| x * y).sum()).collect(),
            None => z,
        };
        Record { features, answer: self.labels[class].clone(), answer_id: class }
    }
}

/// Offsets and class weights of one provider, drawn from its own stream.
struct ProviderProfile {
    offsets: Vec<Vec<f64>>,
    class_weights: Vec<f64>,
}

impl ProviderProfile {
    fn draw(cfg: &SyntheticConfig, rng: &mut StreamRng) -> Self {
        let h = cfg.heterogeneity;
        let offsets = (0..cfg.n_classes)
            .map(|_| (0..cfg.feature_dim).map(|_| h * cfg.provider_shift * normal(rng)).collect())
            .collect();
        let gamma = Gamma::new(1.0, 1.0).expect("valid gamma");
        let raw: Vec<f64> = (0..cfg.n_classes).map(|_| gamma.sample(rng)).collect();
        let total: f64 = raw.iter().sum();
        let uniform = 1.0 / cfg.n_classes as f64;
        let class_weights = raw.iter().map(|g| (1.0 - h) * uniform + h * g / total).collect();
        Self { offsets, class_weights }
    }

    fn draw_class(&self, rng: &mut StreamRng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (c, w) in self.class_weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return c;
            }
        }
        self.class_weights.len() - 1
    }
}

fn normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_orthogonal(rng: &mut StreamRng, n: usize) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
        for u in &cols {
            let d: f64 = v.iter().zip(u).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            cols.push(v);
        }
    }
    Matrix::from_fn(n, n, |i, j| cols[j][i])
}

/// Generates the federation described by `cfg`. Pure function of the config.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<FederatedDataset> {
    cfg.validate()?;
    let task = Task::new(cfg);
    let mut clients = Vec::with_capacity(cfg.providers_per_client.len());
    let mut provider_id: u32 = 0;
    for (client_id, &n_providers) in cfg.providers_per_client.iter().enumerate() {
        let mut groups = Vec::with_capacity(n_providers);
        for _ in 0..n_providers {
            let mut rng = stream(cfg.seed, &[tag::PROVIDER, u64::from(provider_id)]);
            let profile = ProviderProfile::draw(cfg, &mut rng);
            let n = cfg.records_per_provider.sample(&mut rng);
            let records = (0..n)
                .map(|_| {
                    let c = profile.draw_class(&mut rng);
                    task.sample(&mut rng, c, &profile.offsets[c])
                })
                .collect();
            groups.push(ProviderGroup { provider_id, records });
            provider_id += 1;
        }
        clients.push(ClientDataset { client_id, groups });
    }

    let total_providers = provider_id;
    let validation = (0..cfg.validation_size)
        .map(|i| {
            let mut rng = stream(cfg.seed, &[tag::VALIDATION, i as u64]);
            let unseen = rng.random::<f64>() < cfg.unseen_fraction;
            let profile = if unseen {
                ProviderProfile::draw(cfg, &mut rng)
            } else {
                let pid = rng.random_range(0..total_providers);
                ProviderProfile::draw(cfg, &mut stream(cfg.seed, &[tag::PROVIDER, u64::from(pid)]))
            };
            let c = profile.draw_class(&mut rng);
            task.sample(&mut rng, c, &profile.offsets[c])
        })
        .collect();

    Ok(FederatedDataset {
        clients,
        validation,
        seed: cfg.seed,
        feature_dim: cfg.feature_dim,
        labels: task.labels,
    })
}

/// Records from providers outside the federation, for centralized pretraining.
pub fn generate_pretraining(cfg: &SyntheticConfig, n_providers: usize, records_per_provider: usize) -> Result<Vec<Record>> {
    cfg.validate()?;
    let task = Task::new(cfg);
    let mut out = Vec::with_capacity(n_providers * records_per_provider);
    for p in 0..n_providers {
        let mut rng = stream(cfg.seed, &[tag::PRETRAIN, p as u64]);
        let profile = ProviderProfile::draw(cfg, &mut rng);
        for _ in 0..records_per_provider {
            let c = profile.draw_class(&mut rng);
            out.push(task.sample(&mut rng, c, &profile.offsets[c]));
        }
    }
    Ok(out)
}
