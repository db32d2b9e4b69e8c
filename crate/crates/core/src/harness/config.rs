use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::generator::{default_archetypes, ArchetypeSpec};
use super::HarnessError;
use crate::hub::AcceptancePolicy;
use crate::privacy::{ClipConfig, NoiseConfig};
use crate::trainer::{FeatureSet, TrainConfig};
use crate::transport::ChannelConfig;

/// Child seed `first 8 bytes LE of SHA-256(master_seed LE || role)`.
///
/// Roles are path-like strings (`"client/3/learner/7/week/2"`), so adding
/// clients or learners never perturbs existing streams.
pub fn derive_seed(master_seed: u64, role: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(role.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Complete, deterministic description of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_clients: usize,
    pub learners_per_client: usize,
    pub weeks: u32,
    pub rounds: u32,
    pub master_seed: u64,
    /// Learners in the server-side validation set.
    pub validation_learners: usize,
    pub min_clients: usize,
    /// Updates arriving later than this many ticks after the broadcast are discarded.
    pub deadline_ticks: u64,
    /// Worker threads for client training. Outputs do not depend on it.
    pub workers: usize,
    pub features: FeatureSet,
    /// Archetype name -> proportion of learners.
    pub archetype_mix: BTreeMap<String, f64>,
    pub archetypes: Vec<ArchetypeSpec>,
    pub train: TrainConfig,
    pub clip: ClipConfig,
    pub noise: NoiseConfig,
    pub channel: ChannelConfig,
    pub acceptance: AcceptancePolicy,
    /// Also train a model on the pooled data for comparison.
    pub centralized_oracle: bool,
    pub output_dir: PathBuf,
}

impl Default for SimConfig {
    fn default() -> Self {
        let archetypes = default_archetypes();
        let share = 1.0 / archetypes.len() as f64;
        SimConfig {
            n_clients: 10,
            learners_per_client: 50,
            weeks: 12,
            rounds: 20,
            master_seed: 42,
            validation_learners: 200,
            min_clients: 2,
            deadline_ticks: 100,
            workers: 1,
            features: FeatureSet::Raw,
            archetype_mix: archetypes.iter().map(|a| (a.name.clone(), share)).collect(),
            archetypes,
            train: TrainConfig::default(),
            clip: ClipConfig::default(),
            noise: NoiseConfig::default(),
            channel: ChannelConfig::default(),
            acceptance: AcceptancePolicy::default(),
            centralized_oracle: true,
            output_dir: PathBuf::from("pli-out"),
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let cfg: SimConfig = toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.n_clients == 0 || self.learners_per_client == 0 || self.weeks == 0 {
            return bad("n_clients, learners_per_client and weeks must be positive".into());
        }
        if self.validation_learners == 0 {
            return bad("validation_learners must be positive".into());
        }
        if self.min_clients == 0 {
            return bad("min_clients must be positive".into());
        }
        if self.workers == 0 {
            return bad("workers must be positive".into());
        }
        if self.archetypes.is_empty() {
            return bad("at least one archetype is required".into());
        }
        let total: f64 = self.archetype_mix.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("archetype_mix proportions sum to {total}, expected 1"));
        }
        for (name, p) in &self.archetype_mix {
            if p.is_nan() || *p < 0.0 {
                return bad(format!("archetype_mix[{name}] is negative"));
            }
            if !self.archetypes.iter().any(|a| &a.name == name) {
                return bad(format!("archetype_mix names unknown archetype {name}"));
            }
        }
        for a in &self.archetypes {
            a.validate().map_err(HarnessError::Config)?;
        }
        self.train.validate()?;
        self.clip.validate()?;
        self.noise.validate()?;
        self.channel.validate().map_err(HarnessError::Config)?;
        if self.acceptance.epsilon_tol.is_nan() || self.acceptance.epsilon_tol < 0.0 {
            return bad("acceptance.epsilon_tol must be non-negative".into());
        }
        Ok(())
    }

    /// Pre-shared AEAD key for the run, derived from the master seed.
    pub fn psk(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"pli-sim-psk/v1");
        h.update(self.master_seed.to_le_bytes());
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = SimConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string();
        assert_eq!(SimConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = SimConfig::from_toml_str("rounds = 3\n[train]\nlearning_rate = 0.5\n").unwrap();
        assert_eq!(cfg.rounds, 3);
        assert_eq!(cfg.train.learning_rate, 0.5);
        assert_eq!(cfg.train.epochs, 200);
        assert_eq!(cfg.n_clients, 10);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(SimConfig::from_toml_str("n_clients = 0").is_err());
        assert!(SimConfig::from_toml_str("[archetype_mix]\nhigh_engaged = 0.7\nlow_engaged = 0.7").is_err());
        assert!(SimConfig::from_toml_str("[archetype_mix]\nnobody = 1.0").is_err());
        assert!(SimConfig::from_toml_str("[channel]\nloss_probability = 1.5").is_err());
        assert!(SimConfig::from_toml_str("unknown_key = 1").is_err());
    }

    #[test]
    fn seed_derivation_is_stable_and_role_sensitive() {
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
    }
}
