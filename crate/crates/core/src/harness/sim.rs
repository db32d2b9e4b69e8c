//! The periodic retraining loop.
//!
//! Each round on the logical clock:
//! 1. unregistered clients send `Register`;
//! 2. the hub opens a round and broadcasts the current model;
//! 3. every client that received it trains locally from the broadcast
//!    parameters, sanitizes its delta and submits it (one tick of compute);
//! 4. the hub accepts on-time, authentic updates and acknowledges them;
//! 5. the hub aggregates and runs the validation gate, or abandons the
//!    round when too few updates arrived.
//!
//! Client training runs on a rayon pool; results are consumed in delivery
//! order so the worker count never changes any output.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, SimConfig};
use super::generator::{generate_client, generate_learners, generate_validation, ClientDataset, DriftPlan};
use super::metrics::{export_metrics, write_file, MetricsRecord};
use super::model_io::{model_bytes, save_model};
use super::HarnessError;
use crate::hub::{AcceptancePolicy, ClientUpdate, Decision, GlobalModel, Hub, HubError, SubmitStatus};
use crate::privacy::{gaussian_epsilon_bound, sanitize, NoiseConfig, DEFAULT_DELTA};
use crate::scoring::{Granularity, TrackingSnapshot};
use crate::trainer::{
    accuracy, gradient_descent, prepare_local, standardize, FeatureMatrix, LogisticModel, PerformanceLabel,
    PreparedData, TrainConfig,
};
use crate::transport::{open_bytes, Direction, Envelope, MsgType, ParamPayload, ParticipantId, Sealer, SimChannel};

/// Ticks a client spends training before it sends its update.
pub const COMPUTE_TICKS: u64 = 1;

/// A labelled evaluation set in the model's feature space.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub matrix: FeatureMatrix,
    pub labels: Vec<PerformanceLabel>,
}

impl EvalSet {
    /// Standardizes `snapshots` with their own statistics.
    pub fn from_snapshots(
        snapshots: &[TrackingSnapshot],
        labels: Vec<PerformanceLabel>,
        cfg: &SimConfig,
    ) -> Result<Self, HarnessError> {
        let raw = FeatureMatrix::from_snapshots(snapshots, cfg.features)?;
        Ok(EvalSet {
            matrix: standardize(&raw)?,
            labels,
        })
    }

    pub fn evaluate(&self, params: &[f64]) -> Result<f64, String> {
        let mut model = LogisticModel::zeros(self.matrix.feature_names().to_vec(), self.matrix.granularity());
        model.set_params(params).map_err(|e| e.to_string())?;
        accuracy(&model, &self.matrix, &self.labels).map_err(|e| e.to_string())
    }
}

/// Ordered record of one sealed message, kept when tracing is on.
#[derive(Debug, Clone)]
pub struct WireRecord {
    pub plaintext: Vec<u8>,
    pub envelope: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSetup {
    /// First round that trains and validates on shifted data.
    pub round: u32,
    pub plan: DriftPlan,
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    pub trace_wire: bool,
    pub drift: Option<DriftSetup>,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub records: Vec<MetricsRecord>,
    pub final_model: GlobalModel,
    pub feature_names: Vec<String>,
    pub centralized_accuracy: Option<f64>,
    pub hub_log: String,
    pub channel_log: String,
    /// Every sealed message, in send order; empty unless tracing.
    pub wire: Vec<WireRecord>,
    /// Accuracy of the current model re-measured on the shifted validation set.
    pub drift_baseline_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub rounds: usize,
    pub final_version: u32,
    pub final_validation_accuracy: Option<f64>,
    pub centralized_accuracy: Option<f64>,
    pub accepted_rounds: usize,
    pub rolled_back_or_skipped: usize,
}

impl SimOutcome {
    pub fn final_model_bytes(&self) -> Vec<u8> {
        model_bytes(&self.final_model).expect("finite accepted model")
    }

    pub fn summary(&self) -> RunSummary {
        let accepted = self.records.iter().filter(|r| r.accepted).count();
        RunSummary {
            rounds: self.records.len(),
            final_version: self.final_model.version,
            final_validation_accuracy: self.final_model.validation_accuracy,
            centralized_accuracy: self.centralized_accuracy,
            accepted_rounds: accepted,
            rolled_back_or_skipped: self.records.len() - accepted,
        }
    }

    /// Writes metrics, the final model with its sidecar, the hub and channel
    /// audit logs and a summary into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        export_metrics(&self.records, dir)?;
        save_model(
            &dir.join("final_model.bin"),
            &self.final_model,
            &self.feature_names,
            Granularity::Weekly,
        )?;
        write_file(&dir.join("hub_log.jsonl"), self.hub_log.as_bytes())?;
        write_file(&dir.join("channel_log.jsonl"), self.channel_log.as_bytes())?;
        let summary = serde_json::to_string_pretty(&self.summary()).expect("serializable") + "\n";
        write_file(&dir.join("summary.json"), summary.as_bytes())
    }
}

struct ClientState {
    index: usize,
    id: ParticipantId,
    dataset: ClientDataset,
    data: PreparedData,
    sealer: Sealer,
}

fn client_err(round: Option<u32>, client: usize, e: impl Into<HarnessError>) -> HarnessError {
    HarnessError::Client {
        round,
        client,
        source: Box::new(e.into()),
    }
}

fn prepare_client(cfg: &SimConfig, dataset: &ClientDataset, round: Option<u32>) -> Result<PreparedData, HarnessError> {
    let seed = derive_seed(cfg.master_seed, &format!("kmeans/client/{}", dataset.client_index));
    prepare_local(&dataset.snapshots, cfg.features, seed).map_err(|e| client_err(round, dataset.client_index, e))
}

struct LocalResult {
    payload: ParamPayload,
    local_accuracy: f64,
}

fn train_client(
    cfg: &SimConfig,
    client: usize,
    data: &PreparedData,
    global: &ParamPayload,
    round_id: u32,
) -> Result<LocalResult, HarnessError> {
    let run = gradient_descent(&global.params, &data.matrix, &data.labels, &cfg.train)?;
    let mut local = LogisticModel::zeros(data.matrix.feature_names().to_vec(), data.matrix.granularity());
    local.set_params(&run.params)?;
    let local_accuracy = accuracy(&local, &data.matrix, &data.labels)?;
    let delta: Vec<f64> = run.params.iter().zip(&global.params).map(|(l, g)| l - g).collect();
    let noise = NoiseConfig {
        noise_multiplier: cfg.noise.noise_multiplier,
        seed: derive_seed(
            cfg.master_seed,
            &format!("noise/{}/client/{client}/round/{round_id}", cfg.noise.seed),
        ),
    };
    let sanitized = sanitize(&delta, &cfg.clip, &noise)?;
    Ok(LocalResult {
        payload: ParamPayload {
            params: sanitized.delta,
            sample_count: u32::try_from(data.matrix.n_rows())
                .map_err(|_| HarnessError::Config("client dataset too large".into()))?,
            base_version: global.base_version,
        },
        local_accuracy,
    })
}

struct Network {
    channel: SimChannel,
    psk: [u8; 32],
    trace: bool,
    wire: Vec<WireRecord>,
}

impl Network {
    fn seal_send(
        &mut self,
        sealer: &mut Sealer,
        to: ParticipantId,
        msg_type: MsgType,
        round_id: u32,
        plaintext: &[u8],
        now: u64,
    ) -> Result<(), HarnessError> {
        let env: Envelope = sealer.seal_bytes(msg_type, round_id, plaintext)?;
        if self.trace {
            self.wire.push(WireRecord {
                plaintext: plaintext.to_vec(),
                envelope: env.to_bytes(),
            });
        }
        self.channel.send(sealer.sender(), to, &env, now);
        Ok(())
    }
}

pub fn run_simulation(cfg: &SimConfig) -> Result<SimOutcome, HarnessError> {
    simulate(cfg, &SimOptions::default())
}

pub fn simulate(cfg: &SimConfig, opts: &SimOptions) -> Result<SimOutcome, HarnessError> {
    cfg.validate()?;
    let feature_names = cfg.features.names();
    let n_params = feature_names.len() + 1;
    let psk = cfg.psk();

    let mut clients = Vec::with_capacity(cfg.n_clients);
    for dataset in generate_learners(cfg) {
        let id = ParticipantId::client(dataset.client_index as u32);
        clients.push(ClientState {
            index: dataset.client_index,
            id,
            data: prepare_client(cfg, &dataset, None)?,
            sealer: Sealer::new(&psk, id, Direction::ClientToHub),
            dataset,
        });
    }
    let (val_snaps, val_truth) = generate_validation(cfg, None);
    let mut validation = EvalSet::from_snapshots(&val_snaps, val_truth, cfg)?;

    let mut hub = Hub::new(vec![0.0; n_params]);
    let mut hub_sealer = Sealer::new(&psk, ParticipantId::HUB, Direction::HubToClient);
    let mut channel_cfg = cfg.channel;
    channel_cfg.seed = derive_seed(cfg.master_seed, &format!("channel/{}", cfg.channel.seed));
    let mut net = Network {
        channel: SimChannel::new(channel_cfg),
        psk,
        trace: opts.trace_wire,
        wire: Vec::new(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let policy: AcceptancePolicy = cfg.acceptance.clone();
    let epsilon_bound = gaussian_epsilon_bound(cfg.noise.noise_multiplier, DEFAULT_DELTA);

    let mut clock: u64 = 0;
    let mut records = Vec::with_capacity(cfg.rounds as usize);
    let mut drift_baseline_accuracy = None;

    for round in 0..cfg.rounds {
        if let Some(d) = opts.drift.filter(|d| d.round == round) {
            for c in clients.iter_mut() {
                c.dataset = generate_client(cfg, c.index, Some(d.plan));
                c.data = prepare_client(cfg, &c.dataset, Some(round))?;
            }
            let (s, t) = generate_validation(
                cfg,
                Some(DriftPlan {
                    from_period: 0,
                    ..d.plan
                }),
            );
            validation = EvalSet::from_snapshots(&s, t, cfg)?;
            let acc = hub
                .rebaseline(|p| validation.evaluate(p))
                .map_err(HarnessError::Evaluation)?;
            drift_baseline_accuracy = Some(acc);
        }

        let start = clock;
        let bytes_before = net.channel.bytes_sent();

        // registration
        let registered: BTreeSet<ParticipantId> = hub.clients().clone();
        let register = crate::transport::encode_payload(&ParamPayload::empty(0))?;
        for c in clients.iter_mut().filter(|c| !registered.contains(&c.id)) {
            net.seal_send(
                &mut c.sealer,
                ParticipantId::HUB,
                MsgType::Register,
                round,
                &register,
                clock,
            )?;
        }
        for d in net.channel.drain() {
            clock = clock.max(d.at);
            if let Ok((header, _)) = open_bytes(&d.bytes, &net.psk) {
                if header.msg_type == MsgType::Register {
                    hub.register_client(header.sender_id);
                }
            }
        }

        // broadcast
        let state = hub.open_round(cfg.min_clients, cfg.deadline_ticks)?;
        let round_id = state.round_id;
        let broadcast_at = clock;
        for b in hub.distribute()? {
            net.seal_send(
                &mut hub_sealer,
                b.to,
                MsgType::ModelBroadcast,
                round_id,
                &b.payload,
                clock,
            )?;
        }
        let mut inbox: Vec<(usize, u64, ParamPayload)> = Vec::new();
        for d in net.channel.drain() {
            clock = clock.max(d.at);
            let Some(idx) = d.to.client_index().map(|i| i as usize) else {
                continue;
            };
            match open_bytes(&d.bytes, &net.psk) {
                Ok((h, p)) if h.msg_type == MsgType::ModelBroadcast && h.sender_id == ParticipantId::HUB => {
                    inbox.push((idx, d.at, p));
                }
                _ => log::debug!("client {idx} discarded an unauthenticated broadcast"),
            }
        }

        // local training
        let results: Vec<Result<LocalResult, HarnessError>> = pool.install(|| {
            inbox
                .par_iter()
                .map(|(idx, _, p)| {
                    train_client(cfg, *idx, &clients[*idx].data, p, round_id)
                        .map_err(|e| client_err(Some(round_id), *idx, e))
                })
                .collect()
        });
        let mut local_accs = Vec::new();
        for ((idx, at, _), res) in inbox.iter().zip(results) {
            let r = res?;
            local_accs.push(r.local_accuracy);
            let bytes = crate::transport::encode_payload(&r.payload)?;
            let c = &mut clients[*idx];
            net.seal_send(
                &mut c.sealer,
                ParticipantId::HUB,
                MsgType::UpdateSubmit,
                round_id,
                &bytes,
                at + COMPUTE_TICKS,
            )?;
        }

        // collection
        let deadline = broadcast_at + cfg.deadline_ticks;
        for d in net.channel.drain() {
            clock = clock.max(d.at);
            if d.at > deadline {
                log::debug!("late update from {} at tick {}", d.from, d.at);
                continue;
            }
            let Ok((h, p)) = open_bytes(&d.bytes, &net.psk) else {
                log::debug!("discarded unauthenticated update from {}", d.from);
                continue;
            };
            if h.msg_type != MsgType::UpdateSubmit {
                continue;
            }
            let status = hub.submit_update(ClientUpdate {
                client_id: h.sender_id,
                base_version: p.base_version,
                delta: p.params,
                sample_count: p.sample_count,
                round_id: h.round_id,
            });
            let reply = if status == SubmitStatus::Accepted {
                MsgType::Ack
            } else {
                MsgType::Error
            };
            let ack = crate::transport::encode_payload(&ParamPayload::empty(hub.current_model().version))?;
            net.seal_send(&mut hub_sealer, h.sender_id, reply, round_id, &ack, d.at)?;
        }
        for d in net.channel.drain() {
            clock = clock.max(d.at);
        }

        let participating = hub.round().map_or(0, |r| r.received.len());
        let accepted = match hub.aggregate() {
            Ok(candidate) => {
                let decision = hub.consensus_accept(candidate, &policy, |p| validation.evaluate(p))?;
                matches!(decision, Decision::Accepted(_))
            }
            Err(HubError::InsufficientParticipation { .. }) => {
                hub.abandon_round()?;
                false
            }
            Err(e) => return Err(e.into()),
        };
        let current = hub.current_model();
        let global_validation_accuracy = match current.validation_accuracy {
            Some(a) => Some(a),
            None => validation.evaluate(&current.params).ok(),
        };
        records.push(MetricsRecord {
            round_id,
            global_version: current.version,
            global_validation_accuracy,
            mean_client_local_accuracy: (!local_accs.is_empty())
                .then(|| local_accs.iter().sum::<f64>() / local_accs.len() as f64),
            accepted,
            participating_clients: participating,
            bytes_on_wire: net.channel.bytes_sent() - bytes_before,
            epsilon_bound: if participating > 0 { epsilon_bound } else { None },
            wall_ticks: clock - start,
        });
    }

    let centralized_accuracy = if cfg.centralized_oracle {
        let datasets: Vec<&ClientDataset> = clients.iter().map(|c| &c.dataset).collect();
        Some(centralized_baseline(cfg, &datasets, &validation)?)
    } else {
        None
    };

    Ok(SimOutcome {
        records,
        final_model: hub.current_model().clone(),
        feature_names,
        centralized_accuracy,
        hub_log: hub.log_jsonl(),
        channel_log: net.channel.audit_jsonl(),
        wire: net.wire,
        drift_baseline_accuracy,
    })
}

/// Validation accuracy of one model trained on all clients' data pooled,
/// with the same total epoch budget as the federated run.
pub fn centralized_baseline(
    cfg: &SimConfig,
    datasets: &[&ClientDataset],
    validation: &EvalSet,
) -> Result<f64, HarnessError> {
    let pooled: Vec<TrackingSnapshot> = datasets.iter().flat_map(|d| d.snapshots.iter().cloned()).collect();
    let data = prepare_local(&pooled, cfg.features, derive_seed(cfg.master_seed, "kmeans/pooled"))?;
    let train = TrainConfig {
        epochs: cfg.train.epochs * (cfg.rounds.max(1) as usize),
        ..cfg.train
    };
    let zeros = vec![0.0; data.matrix.n_cols() + 1];
    let run = gradient_descent(&zeros, &data.matrix, &data.labels, &train)?;
    validation.evaluate(&run.params).map_err(HarnessError::Evaluation)
}
