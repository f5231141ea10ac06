use std::path::Path;

use posecraft::diffusion::ToyConfig;
use posecraft::{PipelineConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SEED_ENV: &str = "POSECRAFT_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Toy,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Prediction of the constant model.
    pub constant_value: f64,
    pub hidden: usize,
    pub attention_scale: f64,
    pub conditioning_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let toy = ToyConfig::default();
        Self {
            kind: ModelKind::Toy,
            constant_value: 0.0,
            hidden: toy.hidden,
            attention_scale: toy.attention_scale,
            conditioning_scale: toy.conditioning_scale,
        }
    }
}

/// Pipeline fields at the top level, plus model and training sections.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::input(format!("{}: invalid config: {e}", path.display())))
    }

    /// Toy model shape for latents with `latent_channels` channels.
    pub fn toy_config(&self, latent_channels: usize) -> ToyConfig {
        ToyConfig {
            latent_channels,
            hidden: self.model.hidden,
            prompt_dim: self.pipeline.prompt_dim,
            train_timesteps: self.pipeline.schedule.train_timesteps,
            seed: self.pipeline.seed,
            attention_scale: self.model.attention_scale,
            conditioning_scale: self.model.conditioning_scale,
        }
    }
}

/// The seed from the environment, if set.
pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            v.trim().parse().map(Some).map_err(|_| {
                CliError::input(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
            })
        }
        Err(_) => Ok(None),
    }
}

/// Flag overrides shared by the model-driven commands.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// JSON config mirroring the pipeline field names.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ddim_steps: Option<usize>,
    #[arg(long)]
    pub guidance_scale: Option<f64>,
    #[arg(long)]
    pub key_index: Option<usize>,
    #[arg(long)]
    pub edit_step: Option<usize>,
    #[arg(long, value_parser = ["toy", "constant"])]
    pub model: Option<String>,
    #[arg(long)]
    pub train_steps: Option<usize>,
}

impl Overrides {
    /// Config file, then flags, then the seed environment variable.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.pipeline.seed = s;
        }
        if let Some(s) = self.ddim_steps {
            cfg.pipeline.ddim_steps = s;
        }
        if let Some(s) = self.guidance_scale {
            cfg.pipeline.guidance_scale = s;
        }
        if let Some(k) = self.key_index {
            cfg.pipeline.key_index = k;
        }
        if let Some(a) = self.edit_step {
            cfg.pipeline.edit_step = a;
        }
        if let Some(m) = &self.model {
            cfg.model.kind = if m == "toy" {
                ModelKind::Toy
            } else {
                ModelKind::Constant
            };
        }
        if let Some(n) = self.train_steps {
            cfg.training.max_steps = Some(n);
        }
        if let Some(s) = env_seed()? {
            cfg.pipeline.seed = s;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"ddim_steps": 20, "model": {"kind": "constant"}}"#).unwrap();
        assert_eq!(cfg.pipeline.ddim_steps, 20);
        assert_eq!(cfg.pipeline.key_index, 1);
        assert_eq!(cfg.model.kind, ModelKind::Constant);
        assert_eq!(cfg.training.learning_rate, 0.003);
    }

    #[test]
    fn config_round_trips() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}
