//! Simulation harness: synthetic learners, the federated round loop over a
//! simulated network, metrics export and experiments.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::hub::HubError;
use crate::privacy::PrivacyError;
use crate::trainer::TrainError;
use crate::transport::TransportError;

pub mod config;
pub mod experiments;
pub mod generator;
pub mod leakscan;
pub mod metrics;
pub mod model_io;
pub mod sim;

pub use config::{derive_seed, SimConfig};
pub use experiments::{
    ab_test, drift_scenario, hyperparameter_sweep, local_report, AbReport, DriftReport, SweepGrid, SweepResult, Winner,
};
pub use generator::{default_archetypes, ArchetypeSpec, ClientDataset};
pub use leakscan::{LeakReport, LeakScanner};
pub use metrics::{export_metrics, MetricsRecord};
pub use model_io::{load_model, save_model};
pub use sim::{run_simulation, simulate, SimOptions, SimOutcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Hub(#[from] HubError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error("{}client {client}: {source}", round.map(|r| format!("round {r}, ")).unwrap_or_default())]
    Client {
        round: Option<u32>,
        client: usize,
        source: Box<HarnessError>,
    },
    #[error("evaluation failed: {0}")]
    Evaluation(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
