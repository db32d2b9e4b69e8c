//! Model-management experiments on top of the simulator: A/B comparison,
//! hyperparameter sweeps, drift resilience and the per-client local report.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::config::{derive_seed, SimConfig};
use super::generator::{generate_population, DriftPlan};
use super::sim::{simulate, DriftSetup, SimOptions, SimOutcome};
use super::HarnessError;
use crate::scoring::Granularity;
use crate::trainer::{accuracy, train_local, FeatureMatrix, LocalReport, LogisticModel, PerformanceLabel, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    A,
    B,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbReport {
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    /// `accuracy_b - accuracy_a`.
    pub delta: f64,
    pub winner: Winner,
    pub n: usize,
}

/// Evaluates both models on the same rows.
pub fn ab_test(
    model_a: &LogisticModel,
    model_b: &LogisticModel,
    eval: &FeatureMatrix,
    labels: &[PerformanceLabel],
) -> Result<AbReport, HarnessError> {
    if labels.is_empty() {
        return Err(HarnessError::Config("empty evaluation set".into()));
    }
    if model_a.weights.len() != model_b.weights.len() {
        return Err(HarnessError::Config(format!(
            "models differ in dimensionality: {} vs {}",
            model_a.weights.len(),
            model_b.weights.len()
        )));
    }
    let accuracy_a = accuracy(model_a, eval, labels)?;
    let accuracy_b = accuracy(model_b, eval, labels)?;
    let winner = match accuracy_a.partial_cmp(&accuracy_b) {
        Some(Ordering::Greater) => Winner::A,
        Some(Ordering::Less) => Winner::B,
        _ => Winner::Tie,
    };
    Ok(AbReport {
        accuracy_a,
        accuracy_b,
        delta: accuracy_b - accuracy_a,
        winner,
        n: labels.len(),
    })
}

/// Candidate values per training field; absent fields keep the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub learning_rate: Option<Vec<f64>>,
    pub epochs: Option<Vec<usize>>,
    pub l2_lambda: Option<Vec<f64>>,
    pub convergence_tol: Option<Vec<f64>>,
}

impl SweepGrid {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Cartesian product, learning_rate outermost, then epochs, l2_lambda,
    /// convergence_tol.
    pub fn points(&self, base: &TrainConfig) -> Result<Vec<TrainConfig>, HarnessError> {
        let axis = |v: &Option<Vec<f64>>, dflt: f64| v.clone().unwrap_or_else(|| vec![dflt]);
        let lrs = axis(&self.learning_rate, base.learning_rate);
        let epochs = self.epochs.clone().unwrap_or_else(|| vec![base.epochs]);
        let l2s = axis(&self.l2_lambda, base.l2_lambda);
        let tols = axis(&self.convergence_tol, base.convergence_tol);
        if [lrs.len(), epochs.len(), l2s.len(), tols.len()].contains(&0) {
            return Err(HarnessError::Config("sweep grid has an empty axis".into()));
        }
        let mut out = Vec::new();
        for &learning_rate in &lrs {
            for &ep in &epochs {
                for &l2_lambda in &l2s {
                    for &convergence_tol in &tols {
                        out.push(TrainConfig {
                            learning_rate,
                            epochs: ep,
                            l2_lambda,
                            convergence_tol,
                            seed: base.seed,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rank: usize,
    pub grid_index: usize,
    pub train: TrainConfig,
    pub final_accuracy: Option<f64>,
    pub error: Option<String>,
}

/// One full simulation per grid point, ranked by final validation accuracy
/// (ties: fewer epochs, then grid order; failed points last).
///
/// All points share the run's data and network streams; only the training
/// seed is derived per grid index.
pub fn hyperparameter_sweep(grid: &SweepGrid, cfg: &SimConfig) -> Result<Vec<SweepResult>, HarnessError> {
    let points = grid.points(&cfg.train)?;
    let mut results: Vec<SweepResult> = points
        .into_iter()
        .enumerate()
        .map(|(i, mut train)| {
            train.seed = derive_seed(cfg.master_seed, &format!("sweep/{i}"));
            let point_cfg = SimConfig {
                train,
                centralized_oracle: false,
                ..cfg.clone()
            };
            match simulate(&point_cfg, &SimOptions::default()) {
                Ok(out) => SweepResult {
                    rank: 0,
                    grid_index: i,
                    train,
                    final_accuracy: out.final_model.validation_accuracy,
                    error: None,
                },
                Err(e) => SweepResult {
                    rank: 0,
                    grid_index: i,
                    train,
                    final_accuracy: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    results.sort_by(|a, b| {
        let acc = |r: &SweepResult| r.final_accuracy.unwrap_or(f64::NEG_INFINITY);
        acc(b)
            .total_cmp(&acc(a))
            .then(a.train.epochs.cmp(&b.train.epochs))
            .then(a.grid_index.cmp(&b.grid_index))
    });
    for (rank, r) in results.iter_mut().enumerate() {
        r.rank = rank + 1;
    }
    Ok(results)
}

pub fn sweep_csv(results: &[SweepResult]) -> String {
    let mut s = String::from("rank,grid_index,learning_rate,epochs,l2_lambda,convergence_tol,final_accuracy,error\n");
    for r in results {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.rank,
            r.grid_index,
            super::metrics::format_sig9(r.train.learning_rate),
            r.train.epochs,
            super::metrics::format_sig9(r.train.l2_lambda),
            super::metrics::format_sig9(r.train.convergence_tol),
            r.final_accuracy.map(super::metrics::format_sig9).unwrap_or_default(),
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub drift_week: u32,
    pub drift_round: u32,
    pub factor: f64,
    /// Global accuracy after the last pre-drift round.
    pub pre_drift_accuracy: Option<f64>,
    /// The same model re-measured on the shifted validation set.
    pub post_drift_baseline: Option<f64>,
    pub min_post_accuracy: Option<f64>,
    pub final_accuracy: Option<f64>,
    /// Rounds from the drift until accuracy is back within 0.02 of the
    /// pre-drift level; `None` if it never recovers.
    pub recovery_rounds: Option<u32>,
}

pub const RECOVERY_TOLERANCE: f64 = 0.02;

/// First round whose data reflects `drift_week`; rounds spread evenly over weeks.
pub fn drift_round(cfg: &SimConfig, drift_week: u32) -> u32 {
    (u64::from(drift_week) * u64::from(cfg.rounds)).div_ceil(u64::from(cfg.weeks)) as u32
}

/// Shifts every archetype toward the archetype centroid by `factor` from
/// `drift_week` onward and keeps retraining.
pub fn drift_scenario(
    cfg: &SimConfig,
    drift_week: u32,
    factor: f64,
) -> Result<(SimOutcome, DriftReport), HarnessError> {
    if drift_week >= cfg.weeks {
        return Err(HarnessError::Config(format!(
            "drift_week {drift_week} must be below weeks {}",
            cfg.weeks
        )));
    }
    if !(0.0..=1.0).contains(&factor) {
        return Err(HarnessError::Config(format!("drift factor {factor} outside [0,1]")));
    }
    let round = drift_round(cfg, drift_week);
    let out = simulate(
        cfg,
        &SimOptions {
            trace_wire: false,
            drift: Some(DriftSetup {
                round,
                plan: DriftPlan {
                    from_period: drift_week,
                    factor,
                },
            }),
        },
    )?;
    let pre = round
        .checked_sub(1)
        .and_then(|r| out.records.get(r as usize))
        .and_then(|r| r.global_validation_accuracy);
    let post: Vec<f64> = out
        .records
        .iter()
        .skip(round as usize)
        .filter_map(|r| r.global_validation_accuracy)
        .collect();
    let recovery_rounds = pre.and_then(|p| {
        post.iter()
            .position(|a| *a >= p - RECOVERY_TOLERANCE)
            .map(|i| i as u32 + 1)
    });
    let report = DriftReport {
        drift_week,
        drift_round: round,
        factor,
        pre_drift_accuracy: pre,
        post_drift_baseline: out.drift_baseline_accuracy,
        min_post_accuracy: post.iter().cloned().reduce(f64::min),
        final_accuracy: out.final_model.validation_accuracy,
        recovery_rounds,
    };
    Ok((out, report))
}

/// Weekly and daily local models for one client, trained independently.
#[derive(Debug, Clone)]
pub struct LocalModelsReport {
    pub weekly: LocalReport,
    pub daily: LocalReport,
}

pub fn local_report(cfg: &SimConfig, client: usize, folds: usize) -> Result<LocalModelsReport, HarnessError> {
    cfg.validate()?;
    let role = format!("client/{client}");
    let (weekly, _, _) = generate_population(
        cfg,
        &role,
        cfg.learners_per_client,
        cfg.weeks,
        Granularity::Weekly,
        None,
    );
    let (daily, _, _) = generate_population(
        cfg,
        &format!("{role}/daily"),
        cfg.learners_per_client,
        cfg.weeks * 7,
        Granularity::Daily,
        None,
    );
    Ok(LocalModelsReport {
        weekly: train_local(&weekly, cfg.features, folds, &cfg.train)?,
        daily: train_local(&daily, cfg.features, folds, &cfg.train)?,
    })
}
