//! Round-based federated training: FedAvg, FedShampoo, FL-GROUP-DP and
//! DP-CLGECL over simulated clients.
//!
//! Every random draw comes from a stream addressed by `(seed, purpose,
//! round, client, …)`, so results do not depend on how many worker threads
//! execute the clients of a round. Uploads are summed in client-id order.

mod history;
mod local;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::{calibrate_sigma, compose_and_convert, group_sampling_rate, AlphaGrid, SgmParams};
use crate::error::{config_err, Error, Result};
use crate::fedsim::{min_group_count, FederatedDataset, ProviderGroup, Record};
use crate::learners::{GradClip, LayeredModel, Optimizer, OptimizerConfig, ParamSet};
use crate::metrics::Normalization;
use crate::rng::{stream, tag};
use crate::wire::{transmit, CommLedger, Direction, Precision, UpdateMessage};

pub use history::{History, PrivacyReport, RoundRecord};
pub use local::{local_train, LocalSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientSampling {
    /// Exactly `K` distinct clients per round.
    #[default]
    Fixed,
    /// Each client joins independently with probability `K/N`.
    Bernoulli,
}

/// Settings shared by all four protocols.
#[derive(Debug, Clone, PartialEq)]
pub struct FedConfig {
    pub rounds: u32,
    pub clients_per_round: usize,
    pub sampling: ClientSampling,
    pub local: LocalSchedule,
    pub optimizer: OptimizerConfig,
    pub precision: Precision,
    pub seed: u64,
    /// Worker threads for the clients of one round; 0 lets rayon decide.
    pub jobs: usize,
    pub normalization: Normalization,
}

impl FedConfig {
    pub fn new(rounds: u32, clients_per_round: usize, local: LocalSchedule, optimizer: OptimizerConfig) -> Self {
        Self {
            rounds,
            clients_per_round,
            sampling: ClientSampling::Fixed,
            local,
            optimizer,
            precision: Precision::F64,
            seed: 0,
            jobs: 1,
            normalization: Normalization::default(),
        }
    }

    /// Client participation probability used for accounting.
    pub fn client_rate(&self, n_clients: usize) -> f64 {
        self.clients_per_round as f64 / n_clients as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
    /// Noise standard deviation relative to `clip_norm`.
    #[serde(default)]
    pub noise_multiplier: Option<f64>,
    #[serde(default)]
    pub target_epsilon: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub providers_per_round: usize,
    /// Debug switch: `false` skips the Gaussian noise and the accounting.
    #[serde(default = "default_true")]
    pub noise: bool,
}

fn default_clip_norm() -> f64 {
    0.5
}
fn default_delta() -> f64 {
    1e-5
}
fn default_true() -> bool {
    true
}

impl DpConfig {
    pub fn with_target(target_epsilon: f64, providers_per_round: usize) -> Self {
        Self {
            clip_norm: default_clip_norm(),
            noise_multiplier: None,
            target_epsilon: Some(target_epsilon),
            delta: default_delta(),
            providers_per_round,
            noise: true,
        }
    }

    pub fn with_sigma(sigma: f64, providers_per_round: usize) -> Self {
        Self { noise_multiplier: Some(sigma), target_epsilon: None, ..Self::with_target(1.0, providers_per_round) }
    }

    pub fn without_noise(providers_per_round: usize) -> Self {
        Self { noise: false, ..Self::with_sigma(1.0, providers_per_round) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Standard deviation of the random initial dual variable.
    #[serde(default = "default_dual_std")]
    pub init_std: f64,
}

fn default_dual_std() -> f64 {
    1e-3
}

impl Default for DualConfig {
    fn default() -> Self {
        Self { enabled: true, init_std: default_dual_std() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Protocol {
    FedAvg,
    FedShampoo,
    FlGroupDp(DpConfig),
    DpClgecl { dp: DpConfig, dual: DualConfig },
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::FedAvg => "fedavg",
            Protocol::FedShampoo => "fedshampoo",
            Protocol::FlGroupDp(_) => "fl-group-dp",
            Protocol::DpClgecl { .. } => "dp-clgecl",
        }
    }

    pub fn dp(&self) -> Option<&DpConfig> {
        match self {
            Protocol::FlGroupDp(dp) | Protocol::DpClgecl { dp, .. } => Some(dp),
            _ => None,
        }
    }
}

/// Clients (ascending) and, for DP protocols, the providers each of them
/// trains on this round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub round: u32,
    pub clients: Vec<usize>,
    pub providers: Vec<Vec<u32>>,
}

pub fn plan_round(ds: &FederatedDataset, cfg: &FedConfig, providers_per_round: Option<usize>, round: u32) -> RoundPlan {
    let n = ds.n_clients();
    let mut rng = stream(cfg.seed, &[tag::CLIENT_SAMPLING, u64::from(round)]);
    let mut clients: Vec<usize> = match cfg.sampling {
        ClientSampling::Fixed => sample(&mut rng, n, cfg.clients_per_round.min(n)).into_vec(),
        ClientSampling::Bernoulli => {
            let p = cfg.client_rate(n);
            (0..n).filter(|_| rng.random_bool(p.clamp(0.0, 1.0))).collect()
        }
    };
    clients.sort_unstable();
    let providers = clients
        .iter()
        .map(|&c| match providers_per_round {
            None => Vec::new(),
            Some(m) => {
                let groups = &ds.clients[c].groups;
                let mut prng = stream(cfg.seed, &[tag::PROVIDER_SAMPLING, u64::from(round), c as u64]);
                let mut ids: Vec<u32> = sample(&mut prng, groups.len(), m.min(groups.len()))
                    .into_iter()
                    .map(|i| groups[i].provider_id)
                    .collect();
                ids.sort_unstable();
                ids
            }
        })
        .collect();
    RoundPlan { round, clients, providers }
}

/// Observation points inside a run, for tests and diagnostics.
#[derive(Debug)]
pub enum Event<'a> {
    /// A clipped per-provider contribution about to enter a client's sum.
    Contribution { round: u32, client: usize, provider: u32, norm: f64 },
    /// A client's upload before encoding; `pre_noise` is the clipped sum for DP protocols.
    Upload { round: u32, client: usize, update: &'a ParamSet, pre_noise: Option<&'a ParamSet> },
    /// The full-precision update the server adds to the global model.
    Aggregate { round: u32, update: &'a ParamSet },
}

pub type Hook<'h> = &'h (dyn Fn(&Event<'_>) + Sync);

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: LayeredModel,
    pub history: History,
    pub ledger: CommLedger,
    pub privacy: Option<PrivacyReport>,
}

#[derive(Debug, Clone, Default)]
struct ClientState {
    optimizer: Option<Optimizer>,
    lambda: Option<ParamSet>,
    w_prime: Option<ParamSet>,
}

/// Noise multiplier and sampling rate a DP run will use.
pub fn resolve_dp(ds: &FederatedDataset, cfg: &FedConfig, dp: &DpConfig) -> Result<(f64, f64)> {
    if !(dp.clip_norm > 0.0) {
        return Err(config_err("dp.clip_norm must be positive"));
    }
    if !(dp.delta > 0.0 && dp.delta < 1.0) {
        return Err(config_err("dp.delta must lie in (0, 1)"));
    }
    let min_groups = min_group_count(ds);
    if dp.providers_per_round > min_groups {
        return Err(config_err(format!(
            "dp.providers_per_round = {} exceeds the smallest client's {min_groups} providers",
            dp.providers_per_round
        )));
    }
    let q = group_sampling_rate(cfg.client_rate(ds.n_clients()).min(1.0), dp.providers_per_round, min_groups)?;
    let sigma = match (dp.noise_multiplier, dp.target_epsilon) {
        (Some(_), Some(_)) => return Err(config_err("dp: set noise_multiplier or target_epsilon, not both")),
        (Some(s), None) if s > 0.0 => s,
        (Some(_), None) => return Err(config_err("dp.noise_multiplier must be positive")),
        (None, Some(eps)) => calibrate_sigma(eps, dp.delta, q, u64::from(cfg.rounds), &AlphaGrid::default())?,
        (None, None) => return Err(config_err("dp: noise_multiplier or target_epsilon is required")),
    };
    Ok((q, sigma))
}

fn validate(ds: &FederatedDataset, model: &LayeredModel, cfg: &FedConfig, protocol: &Protocol) -> Result<()> {
    ds.validate()?;
    model.validate()?;
    cfg.local.validate()?;
    cfg.optimizer.validate()?;
    if cfg.rounds == 0 {
        return Err(config_err("rounds must be at least 1"));
    }
    if cfg.clients_per_round == 0 || cfg.clients_per_round > ds.n_clients() {
        return Err(config_err(format!(
            "clients_per_round = {} must lie in 1..={}",
            cfg.clients_per_round,
            ds.n_clients()
        )));
    }
    if model.input_dim() != ds.feature_dim || model.n_classes() != ds.n_classes() {
        return Err(config_err(format!(
            "model maps {} → {} but the dataset has {} features and {} classes",
            model.input_dim(),
            model.n_classes(),
            ds.feature_dim,
            ds.n_classes()
        )));
    }
    if model.num_trainable() == 0 {
        return Err(config_err("model has no trainable parameters"));
    }
    match protocol {
        Protocol::FedShampoo if !matches!(cfg.optimizer, OptimizerConfig::Shampoo(_)) => {
            Err(config_err("fedshampoo requires optimizer.kind = \"shampoo\""))
        }
        Protocol::DpClgecl { dual, .. } if !(dual.init_std >= 0.0) => Err(config_err("dual.init_std must be >= 0")),
        _ => Ok(()),
    }
}

/// Ledger of a run computed without training. Round plans depend only on
/// the seed, so this equals the ledger of the real run.
pub fn project_ledger(
    ds: &FederatedDataset,
    model: &LayeredModel,
    cfg: &FedConfig,
    protocol: &Protocol,
) -> Result<CommLedger> {
    validate(ds, model, cfg, protocol)?;
    let mut ledger = CommLedger::new();
    let payload = vec![(model.num_trainable() as u64, cfg.precision.bit_width())];
    let m = protocol.dp().map(|d| d.providers_per_round);
    for round in 1..=cfg.rounds {
        log_round(&mut ledger, &plan_round(ds, cfg, m, round), &payload);
    }
    Ok(ledger)
}

fn log_round(ledger: &mut CommLedger, plan: &RoundPlan, payload: &[(u64, crate::wire::BitWidth)]) {
    for dir in [Direction::Down, Direction::Up] {
        for &c in &plan.clients {
            ledger.record(UpdateMessage::new(plan.round, dir, c as u32, payload.to_vec()));
        }
    }
}

pub fn run_fedavg(ds: &FederatedDataset, model: LayeredModel, cfg: &FedConfig) -> Result<RunOutput> {
    run(ds, model, cfg, &Protocol::FedAvg, None)
}

/// FedAvg whose clients run Shampoo; frozen layers of `model` are neither
/// trained nor transmitted.
pub fn run_fedshampoo(ds: &FederatedDataset, model: LayeredModel, cfg: &FedConfig) -> Result<RunOutput> {
    run(ds, model, cfg, &Protocol::FedShampoo, None)
}

pub fn run_fl_group_dp(ds: &FederatedDataset, model: LayeredModel, cfg: &FedConfig, dp: DpConfig) -> Result<RunOutput> {
    run(ds, model, cfg, &Protocol::FlGroupDp(dp), None)
}

pub fn run_dp_clgecl(
    ds: &FederatedDataset,
    model: LayeredModel,
    cfg: &FedConfig,
    dp: DpConfig,
    dual: DualConfig,
) -> Result<RunOutput> {
    run(ds, model, cfg, &Protocol::DpClgecl { dp, dual }, None)
}

/// Runs `protocol` for `cfg.rounds` rounds, evaluating the global model on
/// the validation split after each one.
pub fn run(
    ds: &FederatedDataset,
    mut model: LayeredModel,
    cfg: &FedConfig,
    protocol: &Protocol,
    hook: Option<Hook<'_>>,
) -> Result<RunOutput> {
    validate(ds, &model, cfg, protocol)?;
    let dp = match protocol.dp() {
        Some(dp) => Some((*dp, resolve_dp(ds, cfg, dp)?)),
        None => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| config_err(format!("thread pool: {e}")))?;

    let mut states = vec![ClientState::default(); ds.n_clients()];
    let mut ledger = CommLedger::new();
    let mut history = History::default();
    let payload = vec![(model.num_trainable() as u64, cfg.precision.bit_width())];
    let grid = AlphaGrid::default();

    for round in 1..=cfg.rounds {
        let plan = plan_round(ds, cfg, dp.map(|(d, _)| d.providers_per_round), round);
        let global = model.trainable();
        let received = transmit(&global, cfg.precision, round, Direction::Down)?;
        let mut rx_model = model.clone();
        rx_model.set_trainable(&received)?;
        log_round(&mut ledger, &plan, &payload);

        let mut taken: Vec<(usize, Vec<u32>, ClientState)> = plan
            .clients
            .iter()
            .zip(&plan.providers)
            .map(|(&c, p)| (c, p.clone(), std::mem::take(&mut states[c])))
            .collect();
        let ctx = RoundCtx { ds, cfg, protocol, dp, round, rx_model: &rx_model, received: &received, hook };
        let results: Vec<Result<ParamSet>> = pool.install(|| {
            taken.par_iter_mut().map(|(c, providers, state)| ctx.client(*c, providers, state)).collect()
        });
        let mut uploads = Vec::with_capacity(results.len());
        for ((c, _, state), r) in taken.into_iter().zip(results) {
            states[c] = state;
            uploads.push(transmit(&r?, cfg.precision, round, Direction::Up)?);
        }

        let noise_only = uploads.is_empty();
        let update = if noise_only {
            match dp {
                Some((d, (_, sigma))) if d.noise => {
                    let mut u = global.zeros_like();
                    add_noise(&mut u, d.clip_norm * sigma, cfg.seed, &[tag::NOISE, u64::from(round), u64::MAX]);
                    u.scale_mut(1.0 / d.providers_per_round as f64);
                    Some(u)
                }
                _ => None,
            }
        } else {
            let mut sum = uploads[0].clone();
            uploads[1..].iter().for_each(|u| sum.add_assign(u));
            sum.scale_mut(1.0 / uploads.len() as f64);
            Some(sum)
        };
        if let Some(u) = update {
            if let Some(h) = hook {
                h(&Event::Aggregate { round, update: &u });
            }
            let mut next = global;
            next.add_assign(&u);
            if !next.is_finite() {
                return Err(Error::Domain(format!("global model diverged in round {round}")));
            }
            model.set_trainable(&next)?;
        }

        let (val_loss, eval) = model.evaluate(&ds.validation, &ds.labels, cfg.normalization)?;
        let epsilon = match dp {
            Some((d, (q, sigma))) if d.noise => {
                Some(compose_and_convert(&SgmParams::new(q, sigma, u64::from(round))?, d.delta, &grid)?.epsilon)
            }
            _ => None,
        };
        let total_bytes = ledger.total_bytes();
        let prev_total = history.last().map_or(0, |r| r.total_bytes);
        history.rounds.push(RoundRecord {
            round,
            clients: plan.clients.clone(),
            noise_only,
            val_loss,
            val_accuracy: eval.accuracy,
            val_anls: eval.anls,
            round_bytes: total_bytes - prev_total,
            total_bytes,
            epsilon,
        });
    }

    let privacy = match dp {
        Some((d, (q, sigma))) if d.noise => {
            let steps = u64::from(cfg.rounds);
            let spend = compose_and_convert(&SgmParams::new(q, sigma, steps)?, d.delta, &grid)?;
            Some(PrivacyReport::new(q, sigma, steps, spend, d.target_epsilon))
        }
        _ => None,
    };
    Ok(RunOutput { model, history, ledger, privacy })
}

struct RoundCtx<'a> {
    ds: &'a FederatedDataset,
    cfg: &'a FedConfig,
    protocol: &'a Protocol,
    dp: Option<(DpConfig, (f64, f64))>,
    round: u32,
    rx_model: &'a LayeredModel,
    received: &'a ParamSet,
    hook: Option<Hook<'a>>,
}

impl RoundCtx<'_> {
    fn client(&self, client: usize, providers: &[u32], state: &mut ClientState) -> Result<ParamSet> {
        let path = [tag::LOCAL_TRAINING, u64::from(self.round), client as u64];
        let Some((dp, (_, sigma))) = self.dp else {
            let mut local = self.rx_model.clone();
            let opt = state.optimizer.get_or_insert_with(|| self.cfg.optimizer.init(self.received));
            let records: Vec<&Record> = self.ds.clients[client].records().collect();
            local_train(&mut local, &records, &self.cfg.local, opt, &mut stream(self.cfg.seed, &path))?;
            let delta = local.trainable().sub(self.received);
            if let Some(h) = self.hook {
                h(&Event::Upload { round: self.round, client, update: &delta, pre_noise: None });
            }
            return Ok(delta);
        };

        let lambda = match self.protocol {
            Protocol::DpClgecl { dual, .. } if dual.enabled => {
                let lambda = match (state.lambda.take(), &state.w_prime) {
                    (Some(mut l), Some(wp)) => {
                        l.add_assign(&self.received.sub(wp));
                        l
                    }
                    _ => {
                        let mut l = self.received.zeros_like();
                        add_noise(&mut l, dual.init_std, self.cfg.seed, &[tag::DUAL_INIT, client as u64]);
                        l
                    }
                };
                Some(lambda)
            }
            _ => None,
        };
        let groups: Vec<&ProviderGroup> = self.ds.clients[client]
            .groups
            .iter()
            .filter(|g| providers.binary_search(&g.provider_id).is_ok())
            .collect();
        let upload = dp_client_update(&DpClientInput {
            rx_model: self.rx_model,
            received: self.received,
            groups: &groups,
            lambda: lambda.as_ref(),
            dp: &dp,
            sigma,
            cfg: self.cfg,
            round: self.round,
            client,
            hook: self.hook,
        })?;
        if let Some(h) = self.hook {
            h(&Event::Upload {
                round: self.round,
                client,
                update: &upload.update,
                pre_noise: Some(&upload.clipped_sum),
            });
        }
        if lambda.is_some() {
            state.w_prime = Some(self.received.add(&upload.update));
        }
        state.lambda = lambda;
        Ok(upload.update)
    }
}

/// Inputs of one DP client update.
pub struct DpClientInput<'a> {
    /// Global model as received.
    pub rx_model: &'a LayeredModel,
    /// Its trainable tensors, `w_{t-1}`.
    pub received: &'a ParamSet,
    /// Sampled provider groups, in provider-id order.
    pub groups: &'a [&'a ProviderGroup],
    pub lambda: Option<&'a ParamSet>,
    pub dp: &'a DpConfig,
    pub sigma: f64,
    pub cfg: &'a FedConfig,
    pub round: u32,
    pub client: usize,
    pub hook: Option<Hook<'a>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpUpload {
    /// `Σ_G clip(Δw^G, S)`
    pub clipped_sum: ParamSet,
    /// `(clipped_sum + N(0, (Sσ)² I)) / |𝕄|`
    pub update: ParamSet,
}

/// Contributions are clipped slightly inside `S` so that rounding in the
/// sum over groups cannot push a single group's influence past `S`.
const CLIP_MARGIN: f64 = 1.0 - 1e-9;

/// Per-group local training from `w_{t-1}`, l2 clipping to `S`, summation,
/// Gaussian noise and division by the number of sampled groups. Each group's
/// training stream is keyed by its provider id, so dropping a group leaves
/// the other contributions unchanged.
pub fn dp_client_update(input: &DpClientInput<'_>) -> Result<DpUpload> {
    let s = input.dp.clip_norm;
    let clip = GradClip::L2Norm(s * CLIP_MARGIN);
    let mut sum = input.received.zeros_like();
    for g in input.groups {
        let mut local = input.rx_model.clone();
        let mut opt = input.cfg.optimizer.init(input.received);
        let records: Vec<&Record> = g.records.iter().collect();
        let path = [tag::LOCAL_TRAINING, u64::from(input.round), input.client as u64, u64::from(g.provider_id)];
        local_train(&mut local, &records, &input.cfg.local, &mut opt, &mut stream(input.cfg.seed, &path))?;
        let mut delta = local.trainable().sub(input.received);
        if let Some(l) = input.lambda {
            delta.add_assign(l);
        }
        clip.apply_mut(&mut delta);
        let norm = delta.l2_norm();
        assert!(norm <= s * (1.0 + 1e-12), "clipped contribution has norm {norm} > {s}");
        if let Some(h) = input.hook {
            h(&Event::Contribution { round: input.round, client: input.client, provider: g.provider_id, norm });
        }
        sum.add_assign(&delta);
    }
    let mut update = sum.clone();
    if input.dp.noise {
        let path = [tag::NOISE, u64::from(input.round), input.client as u64];
        add_noise(&mut update, s * input.sigma, input.cfg.seed, &path);
    }
    update.scale_mut(1.0 / input.groups.len().max(1) as f64);
    Ok(DpUpload { clipped_sum: sum, update })
}

fn add_noise(p: &mut ParamSet, std: f64, seed: u64, path: &[u64]) {
    let mut rng = stream(seed, path);
    p.for_each_value_mut(|v| {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += std * z;
    });
}

/// Centralized training on pooled records (used for pre-training and as a
/// reference for the degenerate one-client federation).
pub fn train_centralized(
    model: &mut LayeredModel,
    records: &[&Record],
    schedule: &LocalSchedule,
    optimizer: &OptimizerConfig,
    seed: u64,
) -> Result<()> {
    schedule.validate()?;
    optimizer.validate()?;
    let mut opt = optimizer.init(&model.trainable());
    local_train(model, records, schedule, &mut opt, &mut stream(seed, &[tag::PRETRAIN]))
}
