//! Denoiser construction and parameter files.
//!
//! A saved model is a directory with `params.pct`, every parameter
//! concatenated into one rank-1 container, and `params.json`, which lists
//! each parameter's name, shape and offset together with the model config.

use std::path::Path;

use posecraft::diffusion::{Conditioning, ToyConfig};
use posecraft::formats::{read_container, write_container};
use posecraft::{ConstantDenoiser, Denoiser, LatentVideo, ToyDenoiser};
use serde::{Deserialize, Serialize};

use crate::config::{ModelKind, RunConfig};
use crate::error::CliError;

pub const PARAMS_FILE: &str = "params.pct";
pub const PARAMS_MANIFEST: &str = "params.json";
const FORMAT: &str = "posecraft-toy";

pub enum Model {
    Toy(Box<ToyDenoiser>),
    Constant(ConstantDenoiser),
}

impl Denoiser for Model {
    fn predict_noise(
        &self,
        z: &LatentVideo,
        t: usize,
        cond: &Conditioning,
    ) -> posecraft::Result<LatentVideo> {
        match self {
            Model::Toy(m) => m.predict_noise(z, t, cond),
            Model::Constant(m) => m.predict_noise(z, t, cond),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamManifest {
    format: String,
    config: ToyConfig,
    parameters: Vec<ParamEntry>,
}

/// Freshly initialized model for latents with `latent_channels` channels.
pub fn build_model(cfg: &RunConfig, latent_channels: usize) -> Result<Model, CliError> {
    Ok(match cfg.model.kind {
        ModelKind::Constant => Model::Constant(ConstantDenoiser::new(cfg.model.constant_value)),
        ModelKind::Toy => Model::Toy(Box::new(ToyDenoiser::new(cfg.toy_config(latent_channels))?)),
    })
}

pub fn save_toy(model: &ToyDenoiser, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    let mut flat = Vec::new();
    let mut parameters = Vec::new();
    for (name, shape, values) in model.named_parameters() {
        parameters.push(ParamEntry {
            name,
            shape,
            offset: flat.len(),
        });
        flat.extend_from_slice(values);
    }
    write_container(dir.join(PARAMS_FILE), &[flat.len()], &flat)?;
    let manifest = ParamManifest {
        format: FORMAT.into(),
        config: *model.config(),
        parameters,
    };
    let path = dir.join(PARAMS_MANIFEST);
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn load_toy(dir: &Path) -> Result<ToyDenoiser, CliError> {
    let mpath = dir.join(PARAMS_MANIFEST);
    let text = std::fs::read_to_string(&mpath)
        .map_err(|e| CliError::input(format!("{}: {e}", mpath.display())))?;
    let manifest: ParamManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::input(format!("{}: {e}", mpath.display())))?;
    if manifest.format != FORMAT {
        return Err(CliError::input(format!(
            "{}: unknown parameter format {:?}",
            mpath.display(),
            manifest.format
        )));
    }
    let flat = read_container(dir.join(PARAMS_FILE))?;
    if flat.rank() != 1 {
        return Err(CliError::input("parameter container must be rank 1"));
    }
    let data = flat.data();
    let mut named = Vec::with_capacity(manifest.parameters.len());
    for p in &manifest.parameters {
        let len: usize = p.shape.iter().product();
        let values = data.get(p.offset..p.offset + len).ok_or_else(|| {
            CliError::input(format!(
                "parameter {} runs past the end of the container",
                p.name
            ))
        })?;
        named.push((p.name.clone(), values.to_vec()));
    }
    ToyDenoiser::from_named_parameters(manifest.config, &named).map_err(CliError::from)
}

/// A saved toy model if `params` is given, otherwise a fresh one.
pub fn resolve_model(
    cfg: &RunConfig,
    params: Option<&Path>,
    latent_channels: usize,
) -> Result<Model, CliError> {
    match params {
        Some(dir) => {
            let m = load_toy(dir)?;
            if m.config().latent_channels != latent_channels {
                return Err(CliError::domain(format!(
                    "model expects {} latent channels, data has {latent_channels}",
                    m.config().latent_channels
                )));
            }
            Ok(Model::Toy(Box::new(m)))
        }
        None => build_model(cfg, latent_channels),
    }
}
