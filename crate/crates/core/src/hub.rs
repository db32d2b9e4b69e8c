//! Federation hub: client registry, synchronous rounds, sample-weighted
//! federated averaging and validation-gated acceptance of the aggregate.
//!
//! The hub is a single state machine. [`SharedHub`] serializes access from
//! concurrent client tasks behind one lock, so commands apply in the order
//! they acquire it.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transport::{encode_payload, ParamPayload, ParticipantId, TransportError};

pub type ClientId = ParticipantId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HubError {
    #[error("round {0} is already open")]
    RoundAlreadyOpen(u32),
    #[error("no round is open")]
    NoOpenRound,
    #[error("round {round_id} is {status:?}, expected {expected:?}")]
    WrongStatus {
        round_id: u32,
        status: RoundStatus,
        expected: RoundStatus,
    },
    #[error("insufficient participation: {received} updates, {required} required")]
    InsufficientParticipation { received: usize, required: usize },
    #[error("min_clients must be at least 1")]
    InvalidMinClients,
    #[error(transparent)]
    Encode(#[from] TransportError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    pub version: u32,
    pub params: Vec<f64>,
    pub validation_accuracy: Option<f64>,
    pub created_round: Option<u32>,
}

/// A sanitized parameter delta from one client. Parameter space only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: ClientId,
    pub base_version: u32,
    pub delta: Vec<f64>,
    pub sample_count: u32,
    pub round_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundStatus {
    Open,
    Aggregating,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round_id: u32,
    pub base_version: u32,
    pub received: BTreeMap<ClientId, ClientUpdate>,
    pub min_clients: usize,
    pub deadline_ticks: u64,
    pub status: RoundStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcceptancePolicy {
    /// Allowed drop in validation accuracy.
    pub epsilon_tol: f64,
    pub validation_set_ref: String,
}

impl Default for AcceptancePolicy {
    fn default() -> Self {
        AcceptancePolicy {
            epsilon_tol: 0.02,
            validation_set_ref: "server-validation".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason")]
pub enum SubmitStatus {
    Accepted,
    RejectedStale,
    RejectedDuplicate,
    RejectedMalformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Decision {
    Accepted(GlobalModel),
    RolledBack {
        reason: String,
        previous_accuracy: Option<f64>,
        candidate_accuracy: Option<f64>,
    },
}

impl Decision {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Decision::Accepted(_))
    }
}

/// A model broadcast addressed to one registered client.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub to: ClientId,
    pub version: u32,
    /// Encoded [`ParamPayload`], identical for every recipient.
    pub payload: Vec<u8>,
}

/// One audit-log entry. Ids, counts and accuracies only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum HubEvent {
    ClientRegistered {
        client: String,
        version: u32,
    },
    RoundOpened {
        round_id: u32,
        base_version: u32,
        min_clients: usize,
    },
    UpdateAccepted {
        round_id: u32,
        client: String,
        sample_count: u32,
    },
    UpdateRejected {
        round_id: Option<u32>,
        client: String,
        status: SubmitStatus,
    },
    Aggregated {
        round_id: u32,
        participants: usize,
        total_samples: u64,
    },
    ModelAccepted {
        round_id: u32,
        version: u32,
        previous_accuracy: Option<f64>,
        candidate_accuracy: f64,
    },
    RolledBack {
        round_id: u32,
        version: u32,
        reason: String,
        previous_accuracy: Option<f64>,
        candidate_accuracy: Option<f64>,
    },
    RoundAbandoned {
        round_id: u32,
        received: usize,
        required: usize,
    },
    Rebaselined {
        version: u32,
        accuracy: f64,
    },
    Broadcast {
        version: u32,
        recipients: usize,
    },
}

/// Neumaier-compensated sum.
#[derive(Debug, Default, Clone, Copy)]
struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

/// `base + sum_k (n_k / N) * delta_k`, summed in ascending client-id order
/// with compensated summation.
pub fn federated_average(base: &[f64], updates: &BTreeMap<ClientId, ClientUpdate>) -> Vec<f64> {
    let total: u64 = updates.values().map(|u| u64::from(u.sample_count)).sum();
    let mut acc = vec![KahanSum::default(); base.len()];
    for u in updates.values() {
        let w = u.sample_count as f64 / total as f64;
        for (a, d) in acc.iter_mut().zip(&u.delta) {
            a.add(w * d);
        }
    }
    base.iter().zip(acc).map(|(b, a)| b + a.value()).collect()
}

#[derive(Debug)]
pub struct Hub {
    model: GlobalModel,
    clients: BTreeSet<ClientId>,
    round: Option<RoundState>,
    next_round_id: u32,
    log: Vec<HubEvent>,
}

impl Hub {
    pub fn new(initial_params: Vec<f64>) -> Self {
        Hub {
            model: GlobalModel {
                version: 0,
                params: initial_params,
                validation_accuracy: None,
                created_round: None,
            },
            clients: BTreeSet::new(),
            round: None,
            next_round_id: 0,
            log: Vec::new(),
        }
    }

    pub fn current_model(&self) -> &GlobalModel {
        &self.model
    }

    pub fn round(&self) -> Option<&RoundState> {
        self.round.as_ref()
    }

    pub fn clients(&self) -> &BTreeSet<ClientId> {
        &self.clients
    }

    pub fn log(&self) -> &[HubEvent] {
        &self.log
    }

    pub fn log_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.log {
            s.push_str(&serde_json::to_string(e).expect("serializable"));
            s.push('\n');
        }
        s
    }

    /// Records the client and returns the latest accepted model. Idempotent.
    pub fn register_client(&mut self, id: ClientId) -> GlobalModel {
        if self.clients.insert(id) {
            self.log.push(HubEvent::ClientRegistered {
                client: id.to_string(),
                version: self.model.version,
            });
        }
        self.model.clone()
    }

    pub fn open_round(&mut self, min_clients: usize, deadline_ticks: u64) -> Result<RoundState, HubError> {
        if min_clients == 0 {
            return Err(HubError::InvalidMinClients);
        }
        if let Some(r) = &self.round {
            if r.status != RoundStatus::Closed {
                return Err(HubError::RoundAlreadyOpen(r.round_id));
            }
        }
        let state = RoundState {
            round_id: self.next_round_id,
            base_version: self.model.version,
            received: BTreeMap::new(),
            min_clients,
            deadline_ticks,
            status: RoundStatus::Open,
        };
        self.next_round_id += 1;
        self.log.push(HubEvent::RoundOpened {
            round_id: state.round_id,
            base_version: state.base_version,
            min_clients,
        });
        self.round = Some(state.clone());
        Ok(state)
    }

    fn reject(&mut self, u: &ClientUpdate, status: SubmitStatus) -> SubmitStatus {
        self.log.push(HubEvent::UpdateRejected {
            round_id: self.round.as_ref().map(|r| r.round_id),
            client: u.client_id.to_string(),
            status: status.clone(),
        });
        status
    }

    pub fn submit_update(&mut self, u: ClientUpdate) -> SubmitStatus {
        let n_params = self.model.params.len();
        let Some(round) = self.round.as_ref() else {
            return self.reject(&u, SubmitStatus::RejectedMalformed("no round is open".into()));
        };
        if round.status != RoundStatus::Open {
            let msg = format!("round {} is {:?}", round.round_id, round.status);
            return self.reject(&u, SubmitStatus::RejectedMalformed(msg));
        }
        if u.round_id != round.round_id {
            let msg = format!("update for round {}, open round is {}", u.round_id, round.round_id);
            return self.reject(&u, SubmitStatus::RejectedMalformed(msg));
        }
        if u.delta.len() != n_params {
            let msg = format!("delta has {} values, model has {}", u.delta.len(), n_params);
            return self.reject(&u, SubmitStatus::RejectedMalformed(msg));
        }
        if u.delta.iter().any(|x| !x.is_finite()) {
            return self.reject(&u, SubmitStatus::RejectedMalformed("non-finite delta".into()));
        }
        if u.sample_count == 0 {
            return self.reject(&u, SubmitStatus::RejectedMalformed("sample_count is zero".into()));
        }
        if u.base_version != round.base_version {
            return self.reject(&u, SubmitStatus::RejectedStale);
        }
        if round.received.contains_key(&u.client_id) {
            return self.reject(&u, SubmitStatus::RejectedDuplicate);
        }
        let round = self.round.as_mut().expect("checked above");
        self.log.push(HubEvent::UpdateAccepted {
            round_id: round.round_id,
            client: u.client_id.to_string(),
            sample_count: u.sample_count,
        });
        round.received.insert(u.client_id, u);
        SubmitStatus::Accepted
    }

    fn open_round_mut(&mut self) -> Result<&mut RoundState, HubError> {
        let round = self.round.as_mut().ok_or(HubError::NoOpenRound)?;
        if round.status != RoundStatus::Open {
            return Err(HubError::WrongStatus {
                round_id: round.round_id,
                status: round.status,
                expected: RoundStatus::Open,
            });
        }
        Ok(round)
    }

    /// Federated average of the received deltas applied to the base model.
    /// Moves the round to `Aggregating`; on insufficient participation the
    /// round stays open.
    pub fn aggregate(&mut self) -> Result<Vec<f64>, HubError> {
        let base = self.model.params.clone();
        let round = self.open_round_mut()?;
        if round.received.len() < round.min_clients {
            return Err(HubError::InsufficientParticipation {
                received: round.received.len(),
                required: round.min_clients,
            });
        }
        round.status = RoundStatus::Aggregating;
        let candidate = federated_average(&base, &round.received);
        let event = HubEvent::Aggregated {
            round_id: round.round_id,
            participants: round.received.len(),
            total_samples: round.received.values().map(|u| u64::from(u.sample_count)).sum(),
        };
        self.log.push(event);
        Ok(candidate)
    }

    /// Closes an open round without aggregating.
    pub fn abandon_round(&mut self) -> Result<(), HubError> {
        let round = self.open_round_mut()?;
        round.status = RoundStatus::Closed;
        let event = HubEvent::RoundAbandoned {
            round_id: round.round_id,
            received: round.received.len(),
            required: round.min_clients,
        };
        self.log.push(event);
        Ok(())
    }

    /// Re-measures the current model's validation accuracy, e.g. after the
    /// validation set changed.
    pub fn rebaseline<E>(&mut self, evaluator: E) -> Result<f64, String>
    where
        E: FnOnce(&[f64]) -> Result<f64, String>,
    {
        let acc = evaluator(&self.model.params)?;
        self.model.validation_accuracy = Some(acc);
        self.log.push(HubEvent::Rebaselined {
            version: self.model.version,
            accuracy: acc,
        });
        Ok(acc)
    }

    /// Accepts the candidate iff its validation accuracy is at least the
    /// current model's minus `epsilon_tol`. Closes the round either way.
    pub fn consensus_accept<E>(
        &mut self,
        candidate: Vec<f64>,
        policy: &AcceptancePolicy,
        evaluator: E,
    ) -> Result<Decision, HubError>
    where
        E: Fn(&[f64]) -> Result<f64, String>,
    {
        let round = self.round.as_mut().ok_or(HubError::NoOpenRound)?;
        if round.status != RoundStatus::Aggregating {
            return Err(HubError::WrongStatus {
                round_id: round.round_id,
                status: round.status,
                expected: RoundStatus::Aggregating,
            });
        }
        round.status = RoundStatus::Closed;
        let round_id = round.round_id;

        let previous = match self.model.validation_accuracy {
            Some(a) => Ok(a),
            None => evaluator(&self.model.params),
        };
        let outcome = match previous {
            Err(e) => Err((format!("evaluator failed on current model: {e}"), None, None)),
            Ok(prev) => {
                if candidate.len() != self.model.params.len() || candidate.iter().any(|x| !x.is_finite()) {
                    Err(("candidate is malformed or non-finite".to_string(), Some(prev), None))
                } else {
                    match evaluator(&candidate) {
                        Err(e) => Err((format!("evaluator failed on candidate: {e}"), Some(prev), None)),
                        Ok(acc) if acc >= prev - policy.epsilon_tol => Ok((prev, acc)),
                        Ok(acc) => Err((
                            format!("validation accuracy {acc:.6} below {prev:.6} - {}", policy.epsilon_tol),
                            Some(prev),
                            Some(acc),
                        )),
                    }
                }
            }
        };
        match outcome {
            Ok((prev, acc)) => {
                self.model = GlobalModel {
                    version: self.model.version + 1,
                    params: candidate,
                    validation_accuracy: Some(acc),
                    created_round: Some(round_id),
                };
                self.log.push(HubEvent::ModelAccepted {
                    round_id,
                    version: self.model.version,
                    previous_accuracy: Some(prev),
                    candidate_accuracy: acc,
                });
                Ok(Decision::Accepted(self.model.clone()))
            }
            Err((reason, previous_accuracy, candidate_accuracy)) => {
                if self.model.validation_accuracy.is_none() {
                    self.model.validation_accuracy = previous_accuracy;
                }
                self.log.push(HubEvent::RolledBack {
                    round_id,
                    version: self.model.version,
                    reason: reason.clone(),
                    previous_accuracy,
                    candidate_accuracy,
                });
                Ok(Decision::RolledBack {
                    reason,
                    previous_accuracy,
                    candidate_accuracy,
                })
            }
        }
    }

    /// One broadcast per registered client, all carrying the same bytes.
    pub fn distribute(&mut self) -> Result<Vec<Broadcast>, HubError> {
        let payload = encode_payload(&ParamPayload {
            params: self.model.params.clone(),
            sample_count: 0,
            base_version: self.model.version,
        })?;
        self.log.push(HubEvent::Broadcast {
            version: self.model.version,
            recipients: self.clients.len(),
        });
        Ok(self
            .clients
            .iter()
            .map(|&to| Broadcast {
                to,
                version: self.model.version,
                payload: payload.clone(),
            })
            .collect())
    }
}

/// Thread-safe handle; every command is applied atomically in lock order.
#[derive(Debug, Clone)]
pub struct SharedHub(Arc<Mutex<Hub>>);

impl SharedHub {
    pub fn new(hub: Hub) -> Self {
        SharedHub(Arc::new(Mutex::new(hub)))
    }

    pub fn lock(&self) -> MutexGuard<'_, Hub> {
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn submit_update(&self, u: ClientUpdate) -> SubmitStatus {
        self.lock().submit_update(u)
    }

    pub fn register_client(&self, id: ClientId) -> GlobalModel {
        self.lock().register_client(id)
    }

    pub fn current_model(&self) -> GlobalModel {
        self.lock().current_model().clone()
    }

    pub fn round_status(&self) -> Option<RoundStatus> {
        self.lock().round().map(|r| r.status)
    }
}
