//! Client-side sanitization of parameter updates: L2 clipping followed by
//! the Gaussian mechanism.
//!
//! Noise is drawn from a `ChaCha20Rng` seeded per call; normal variates use
//! the ziggurat sampler of `rand_distr::StandardNormal`, scaled by
//! `noise_multiplier * max_norm`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrivacyError {
    #[error("update contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid privacy configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipConfig {
    pub max_norm: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig { max_norm: 1.0 }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<(), PrivacyError> {
        if self.max_norm > 0.0 && self.max_norm.is_finite() {
            Ok(())
        } else {
            Err(PrivacyError::InvalidConfig("max_norm must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct NoiseConfig {
    /// Noise standard deviation as a multiple of `max_norm`. Zero disables noise.
    pub noise_multiplier: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), PrivacyError> {
        if self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite() {
            Ok(())
        } else {
            Err(PrivacyError::InvalidConfig(
                "noise_multiplier must be non-negative".into(),
            ))
        }
    }

    pub fn enabled(&self) -> bool {
        self.noise_multiplier > 0.0
    }
}

/// A parameter delta ready to leave the client. Holds parameter-space
/// values only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanitizedUpdate {
    pub delta: Vec<f64>,
    pub clipped: bool,
    pub pre_clip_norm: f64,
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `delta` by `min(1, max_norm / |delta|)`.
pub fn clip_update(delta: &[f64], clip: &ClipConfig) -> Result<(Vec<f64>, bool, f64), PrivacyError> {
    clip.validate()?;
    if let Some(i) = delta.iter().position(|x| !x.is_finite()) {
        return Err(PrivacyError::NonFinite(i));
    }
    let norm = l2_norm(delta);
    if norm <= clip.max_norm {
        return Ok((delta.to_vec(), false, norm));
    }
    let scale = clip.max_norm / norm;
    let mut out: Vec<f64> = delta.iter().map(|x| x * scale).collect();
    // rounding can leave the norm a hair above the bound
    let mut n = l2_norm(&out);
    while n > clip.max_norm {
        let s = clip.max_norm / n * (1.0 - f64::EPSILON);
        out.iter_mut().for_each(|x| *x *= s);
        n = l2_norm(&out);
    }
    Ok((out, true, norm))
}

/// Adds i.i.d. `Normal(0, (noise_multiplier * max_norm)^2)` noise to each coordinate.
pub fn add_gaussian_noise(v: &[f64], clip: &ClipConfig, noise: &NoiseConfig) -> Vec<f64> {
    if !noise.enabled() {
        return v.to_vec();
    }
    let std = noise.noise_multiplier * clip.max_norm;
    let mut rng = ChaCha20Rng::seed_from_u64(noise.seed);
    v.iter()
        .map(|x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x + std * z
        })
        .collect()
}

pub fn sanitize(delta: &[f64], clip: &ClipConfig, noise: &NoiseConfig) -> Result<SanitizedUpdate, PrivacyError> {
    noise.validate()?;
    let (clipped_delta, clipped, pre_clip_norm) = clip_update(delta, clip)?;
    Ok(SanitizedUpdate {
        delta: add_gaussian_noise(&clipped_delta, clip, noise),
        clipped,
        pre_clip_norm,
    })
}

pub const DEFAULT_DELTA: f64 = 1e-5;

/// Per-round epsilon of the classic Gaussian mechanism,
/// `sqrt(2 ln(1.25/delta)) / noise_multiplier`, for L2 sensitivity `max_norm`.
///
/// This is an upper bound for a single release with no composition across
/// rounds; the classic analysis only holds for epsilon < 1, so larger values
/// are reported as-is but carry no formal guarantee. Returns `None` when
/// noise is disabled.
pub fn gaussian_epsilon_bound(noise_multiplier: f64, delta: f64) -> Option<f64> {
    if noise_multiplier > 0.0 && delta > 0.0 && delta < 1.0 {
        Some((2.0 * (1.25 / delta).ln()).sqrt() / noise_multiplier)
    } else {
        None
    }
}
