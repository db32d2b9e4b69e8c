//! Model files: the parameter vector in the wire payload layout, plus a
//! JSON sidecar (`<name>.json`) carrying metadata.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::write_file;
use super::HarnessError;
use crate::hub::GlobalModel;
use crate::scoring::Granularity;
use crate::trainer::{LogisticModel, Standardizer};
use crate::transport::{decode_payload, encode_payload, ParamPayload};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub version: u32,
    pub feature_names: Vec<String>,
    pub granularity: Granularity,
    pub validation_accuracy: Option<f64>,
    pub created_round: Option<u32>,
    /// Features are standardized per dataset before scoring.
    pub feature_space: String,
}

pub fn sidecar_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("json")
}

pub fn model_bytes(model: &GlobalModel) -> Result<Vec<u8>, HarnessError> {
    Ok(encode_payload(&ParamPayload {
        params: model.params.clone(),
        sample_count: 0,
        base_version: model.version,
    })?)
}

pub fn save_model(
    path: &Path,
    model: &GlobalModel,
    feature_names: &[String],
    granularity: Granularity,
) -> Result<(), HarnessError> {
    if model.params.len() != feature_names.len() + 1 {
        return Err(HarnessError::Config(format!(
            "model has {} params for {} features",
            model.params.len(),
            feature_names.len()
        )));
    }
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    write_file(path, &model_bytes(model)?)?;
    let meta = ModelMetadata {
        version: model.version,
        feature_names: feature_names.to_vec(),
        granularity,
        validation_accuracy: model.validation_accuracy,
        created_round: model.created_round,
        feature_space: "per-dataset standardized".into(),
    };
    let json = serde_json::to_string_pretty(&meta).expect("serializable") + "\n";
    write_file(&sidecar_path(path), json.as_bytes())
}

pub fn load_model(path: &Path) -> Result<(LogisticModel, ModelMetadata), HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let payload = decode_payload(&bytes)?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| HarnessError::io(&side, e))?;
    let meta: ModelMetadata = serde_json::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
    let n = meta.feature_names.len();
    if payload.params.len() != n + 1 {
        return Err(HarnessError::Config(format!(
            "{} holds {} params but sidecar lists {} features",
            path.display(),
            payload.params.len(),
            n
        )));
    }
    let model = LogisticModel {
        weights: payload.params[..n].to_vec(),
        bias: payload.params[n],
        feature_names: meta.feature_names.clone(),
        trained_on: meta.granularity,
        standardizer: Standardizer::identity(n),
        version: u64::from(payload.base_version),
    };
    Ok((model, meta))
}
