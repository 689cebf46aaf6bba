//! Run configuration shared by the tracker, benchmark and CLI.
//!
//! Every key is required when read from a file; [`RunConfig::default`]
//! is the documented default and can be emitted as a complete file.

use serde::{Deserialize, Serialize};

use crate::codec::DEFAULT_PATCH;
use crate::conditioning::DEFAULT_SIGMA;
use crate::denoiser::DenoiserConfig;
use crate::engine::{Inversion, OperatorKind, ProcessKind, DESK_STEPS, PAPER_LR};
use crate::error::{Error, Result};
use crate::extraction::ExtractionConfig;
use crate::schedule::ScheduleConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub patch: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { embed_dim: 32, layers: 2, patch: DEFAULT_PATCH }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub process: ProcessKind,
    pub operator: OperatorKind,
    pub inversion: Inversion,
    pub finetune_steps: usize,
    pub lr: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            process: ProcessKind::Interpolate,
            operator: OperatorKind::OffsetClean,
            inversion: Inversion::Network,
            finetune_steps: DESK_STEPS,
            lr: PAPER_LR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditioningConfig {
    /// Gaussian width of point tokens, in latent cells.
    pub sigma: f64,
    /// Append a background token pooled over everything outside the targets.
    pub background_token: bool,
}

impl Default for ConditioningConfig {
    fn default() -> Self {
        Self { sigma: DEFAULT_SIGMA, background_token: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauSource {
    /// Rebuild the condition from the latest indicators and frame.
    Current,
    /// Keep the condition built from the first frame's indicators.
    Initial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerConfig {
    pub tau_source: TauSource,
    /// Continue finetuned parameters across pairs instead of restarting.
    pub warm_start: bool,
    /// Boxes kept from a text bootstrap.
    pub text_targets: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { tau_source: TauSource::Current, warm_start: false, text_targets: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub engine: EngineConfig,
    pub extraction: ExtractionConfig,
    pub conditioning: ConditioningConfig,
    pub tracker: TrackerConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.build()?;
        self.denoiser_config().validate()?;
        self.extraction.validate()?;
        if self.model.patch == 0 {
            return Err(Error::Config("model.patch must be positive".into()));
        }
        if !(self.engine.lr >= 0.0 && self.engine.lr.is_finite()) {
            return Err(Error::Config(format!("engine.lr must be finite and >= 0, got {}", self.engine.lr)));
        }
        if !(self.conditioning.sigma > 0.0) {
            return Err(Error::Config("conditioning.sigma must be > 0".into()));
        }
        if self.tracker.text_targets == 0 {
            return Err(Error::Config("tracker.text_targets must be >= 1".into()));
        }
        Ok(())
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            embed_dim: self.model.embed_dim,
            layers: self.model.layers,
            channels: 3 * self.model.patch * self.model.patch,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_validates() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert!(text.contains("\"T\":50"));
        assert!(text.contains("\"operator\":\"offset_clean\""));
    }

    #[test]
    fn unknown_and_missing_keys_rejected() {
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        v["engine"]["T"] = serde_json::json!(50);
        assert!(serde_json::from_value::<RunConfig>(v.clone()).is_err());
        v["engine"].as_object_mut().unwrap().remove("T");
        v["engine"].as_object_mut().unwrap().remove("lr");
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }
}
