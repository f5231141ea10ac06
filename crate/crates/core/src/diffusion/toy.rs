//! A small conditional noise predictor built around the two attention
//! blocks.
//!
//! Latent cells become tokens. Each token is lifted into a hidden space by a
//! frozen linear map, receives the pose heatmap, the prompt and a time
//! embedding, passes through key-frame attention and then temporal
//! attention (both residual), and is projected back by a second frozen map.
//! Only the conditioning injection and the attention projections train.

use serde::{Deserialize, Serialize};

use crate::attention::{attention_backward, attention_forward, AttentionKind, AttentionWeights};
use crate::diffusion::conditioning::{Conditioning, POSE_CHANNELS};
use crate::diffusion::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::latent::LatentVideo;
use crate::rng::{normal_vec, stream, streams};
use crate::tensor::{add_assign, matmul, matmul_nt, matmul_tn, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub latent_channels: usize,
    pub hidden: usize,
    pub prompt_dim: usize,
    pub train_timesteps: usize,
    pub seed: u64,
    /// Standard deviation of the attention projections at initialization.
    pub attention_scale: f64,
    /// Standard deviation of the pose and prompt injection weights.
    pub conditioning_scale: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            latent_channels: 8,
            hidden: 16,
            prompt_dim: 8,
            train_timesteps: 1000,
            seed: 0,
            attention_scale: 0.1,
            conditioning_scale: 0.1,
        }
    }
}

/// Gradients with respect to the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGradients {
    pub pose_in: Vec<f64>,
    pub prompt_in: Vec<f64>,
    pub key_frame: AttentionWeights,
    pub temporal: AttentionWeights,
}

impl ToyGradients {
    /// Flattened in the order of [`ToyDenoiser::trainable`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.pose_in);
        out.extend_from_slice(&self.prompt_in);
        for m in self.key_frame.matrices() {
            out.extend_from_slice(m);
        }
        for m in self.temporal.matrices() {
            out.extend_from_slice(m);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    config: ToyConfig,
    backbone_in: Vec<f64>,
    backbone_in_bias: Vec<f64>,
    backbone_out: Vec<f64>,
    backbone_out_bias: Vec<f64>,
    pose_in: Vec<f64>,
    prompt_in: Vec<f64>,
    key_frame: AttentionWeights,
    temporal: AttentionWeights,
}

/// Forward intermediates needed by the backward pass.
struct Trace {
    dims: (usize, usize, usize),
    pose_tokens: Vec<f64>,
    prompts: Vec<f64>,
    x: Tensor,
    h1: Tensor,
    key: usize,
    out: Vec<f64>,
}

fn scaled(v: Vec<f64>, s: f64) -> Vec<f64> {
    v.into_iter().map(|x| x * s).collect()
}

/// `(c, d)` channel planes to `(d, c)` tokens.
fn to_tokens(plane: &[f64], c: usize, d: usize, out: &mut Vec<f64>) {
    for p in 0..d {
        for ch in 0..c {
            out.push(plane[ch * d + p]);
        }
    }
}

impl ToyDenoiser {
    /// Seeded initialization. The frozen maps are scaled to keep hidden
    /// activations near unit variance.
    pub fn new(config: ToyConfig) -> Result<Self> {
        let ToyConfig {
            latent_channels: c,
            hidden: hid,
            prompt_dim: e,
            ..
        } = config;
        if c == 0 || hid == 0 || config.train_timesteps == 0 {
            return Err(Error::InvalidInput(
                "toy denoiser dimensions must be positive".into(),
            ));
        }
        let mut rng = stream(config.seed, streams::MODEL_INIT);
        let backbone_in = scaled(normal_vec(&mut rng, c * hid), 1.0 / (c as f64).sqrt());
        let backbone_out = scaled(normal_vec(&mut rng, hid * c), 1.0 / (hid as f64).sqrt());
        let pose_in = scaled(
            normal_vec(&mut rng, POSE_CHANNELS * hid),
            config.conditioning_scale,
        );
        let prompt_in = scaled(normal_vec(&mut rng, e * hid), config.conditioning_scale);
        let key_frame = AttentionWeights::random(hid, config.attention_scale, true, &mut rng);
        let temporal = AttentionWeights::random(hid, config.attention_scale, true, &mut rng);
        Ok(Self {
            config,
            backbone_in,
            backbone_in_bias: vec![0.0; hid],
            backbone_out,
            backbone_out_bias: vec![0.0; c],
            pose_in,
            prompt_in,
            key_frame,
            temporal,
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn key_frame_weights(&self) -> &AttentionWeights {
        &self.key_frame
    }

    pub fn temporal_weights(&self) -> &AttentionWeights {
        &self.temporal
    }

    pub fn parameter_count(&self) -> usize {
        self.named_parameters()
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }

    /// Trainable parameters, flattened: pose injection, prompt injection,
    /// key-frame projections, temporal projections.
    pub fn trainable(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.pose_in);
        out.extend_from_slice(&self.prompt_in);
        for m in self.key_frame.matrices() {
            out.extend_from_slice(m);
        }
        for m in self.temporal.matrices() {
            out.extend_from_slice(m);
        }
        out
    }

    pub fn trainable_len(&self) -> usize {
        self.pose_in.len()
            + self.prompt_in.len()
            + self.key_frame.parameter_count()
            + self.temporal.parameter_count()
    }

    pub fn set_trainable(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.trainable_len() {
            return Err(Error::Shape(format!(
                "expected {} trainable values, got {}",
                self.trainable_len(),
                values.len()
            )));
        }
        let mut rest = values;
        let mut take = |dst: &mut Vec<f64>| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(&mut self.pose_in);
        take(&mut self.prompt_in);
        for m in self.key_frame.matrices_mut() {
            take(m);
        }
        for m in self.temporal.matrices_mut() {
            take(m);
        }
        Ok(())
    }

    /// Every parameter as `(name, shape, values)`, frozen ones included.
    pub fn named_parameters(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let (c, hid, e) = (
            self.config.latent_channels,
            self.config.hidden,
            self.config.prompt_dim,
        );
        let mut out: Vec<(String, Vec<usize>, &[f64])> = vec![
            ("backbone_in".into(), vec![c, hid], &self.backbone_in),
            ("backbone_in_bias".into(), vec![hid], &self.backbone_in_bias),
            ("backbone_out".into(), vec![hid, c], &self.backbone_out),
            ("backbone_out_bias".into(), vec![c], &self.backbone_out_bias),
            ("pose_in".into(), vec![POSE_CHANNELS, hid], &self.pose_in),
            ("prompt_in".into(), vec![e, hid], &self.prompt_in),
        ];
        for (prefix, w) in [("key_frame", &self.key_frame), ("temporal", &self.temporal)] {
            for (suffix, m) in ["wq", "wk", "wv", "wo"].iter().zip(w.matrices()) {
                out.push((format!("{prefix}.{suffix}"), vec![hid, hid], m));
            }
        }
        out
    }

    /// Rebuilds a model from [`named_parameters`](Self::named_parameters)
    /// output.
    pub fn from_named_parameters(config: ToyConfig, params: &[(String, Vec<f64>)]) -> Result<Self> {
        let mut model = Self::new(config)?;
        let lookup = |name: &str, len: usize| -> Result<Vec<f64>> {
            let (_, v) = params
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
            if v.len() != len {
                return Err(Error::Format(format!(
                    "parameter {name} has {} values, expected {len}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Format(format!("parameter {name} is not finite")));
            }
            Ok(v.clone())
        };
        model.backbone_in = lookup("backbone_in", model.backbone_in.len())?;
        model.backbone_in_bias = lookup("backbone_in_bias", model.backbone_in_bias.len())?;
        model.backbone_out = lookup("backbone_out", model.backbone_out.len())?;
        model.backbone_out_bias = lookup("backbone_out_bias", model.backbone_out_bias.len())?;
        model.pose_in = lookup("pose_in", model.pose_in.len())?;
        model.prompt_in = lookup("prompt_in", model.prompt_in.len())?;
        for (prefix, w) in [
            ("key_frame", &mut model.key_frame),
            ("temporal", &mut model.temporal),
        ] {
            for (suffix, m) in ["wq", "wk", "wv", "wo"].iter().zip(w.matrices_mut()) {
                *m = lookup(&format!("{prefix}.{suffix}"), m.len())?;
            }
        }
        Ok(model)
    }

    /// `sin`/`cos` features of `t/T` at increasing frequencies.
    fn time_embedding(&self, t: usize) -> Vec<f64> {
        let u = t as f64 / self.config.train_timesteps as f64;
        (0..self.config.hidden)
            .map(|m| {
                let phase = std::f64::consts::PI * (m / 2 + 1) as f64 * u;
                if m % 2 == 0 {
                    phase.sin()
                } else {
                    phase.cos()
                }
            })
            .collect()
    }

    fn check_inputs(&self, z: &LatentVideo, cond: &Conditioning) -> Result<()> {
        if z.channels != self.config.latent_channels {
            return Err(Error::Shape(format!(
                "model expects {} latent channels, got {}",
                self.config.latent_channels, z.channels
            )));
        }
        if cond.frames.len() != z.frames {
            return Err(Error::Shape(format!(
                "{} conditioning frames for {} latent frames",
                cond.frames.len(),
                z.frames
            )));
        }
        let d = z.height * z.width;
        for (i, cv) in cond.frames.iter().enumerate() {
            if cv.pose_map.len() != POSE_CHANNELS * d {
                return Err(Error::Shape(format!(
                    "frame {}: pose map has {} values, expected {}",
                    i + 1,
                    cv.pose_map.len(),
                    POSE_CHANNELS * d
                )));
            }
            if cv.prompt.len() != self.config.prompt_dim {
                return Err(Error::Shape(format!(
                    "frame {}: prompt has {} values, expected {}",
                    i + 1,
                    cv.prompt.len(),
                    self.config.prompt_dim
                )));
            }
        }
        Ok(())
    }

    fn forward(&self, z: &LatentVideo, t: usize, cond: &Conditioning) -> Result<Trace> {
        self.check_inputs(z, cond)?;
        let (f, c, d) = (z.frames, z.channels, z.height * z.width);
        let (hid, e) = (self.config.hidden, self.config.prompt_dim);
        let n = f * d;

        let mut z_tokens = Vec::with_capacity(n * c);
        let mut pose_tokens = Vec::with_capacity(n * POSE_CHANNELS);
        let mut prompts = Vec::with_capacity(f * e);
        for i in 0..f {
            to_tokens(z.frame_data(i), c, d, &mut z_tokens);
            to_tokens(&cond.frames[i].pose_map, POSE_CHANNELS, d, &mut pose_tokens);
            prompts.extend_from_slice(&cond.frames[i].prompt);
        }

        let mut x = matmul(&z_tokens, &self.backbone_in, n, c, hid);
        add_assign(
            &mut x,
            &matmul(&pose_tokens, &self.pose_in, n, POSE_CHANNELS, hid),
        );
        let prompt_h = matmul(&prompts, &self.prompt_in, f, e, hid);
        let temb = self.time_embedding(t);
        for (r, row) in x.chunks_mut(hid).enumerate() {
            let ph = &prompt_h[(r / d) * hid..(r / d + 1) * hid];
            for m in 0..hid {
                row[m] += self.backbone_in_bias[m] + ph[m] + temb[m];
            }
        }
        let x = Tensor::new(vec![f, d, hid], x)?;

        let key = cond.key_frame;
        let mut h1 = attention_forward(AttentionKind::KeyFrame { key }, &x, &self.key_frame)?;
        add_assign(h1.data_mut(), x.data());
        let mut h2 = attention_forward(AttentionKind::Temporal, &h1, &self.temporal)?;
        add_assign(h2.data_mut(), h1.data());

        let mut tokens_out = matmul(h2.data(), &self.backbone_out, n, hid, c);
        for row in tokens_out.chunks_mut(c) {
            add_assign(row, &self.backbone_out_bias);
        }
        let mut out = vec![0.0; n * c];
        for i in 0..f {
            for p in 0..d {
                for ch in 0..c {
                    out[(i * c + ch) * d + p] = tokens_out[(i * d + p) * c + ch];
                }
            }
        }
        Ok(Trace {
            dims: (f, c, d),
            pose_tokens,
            prompts,
            x,
            h1,
            key,
            out,
        })
    }

    /// Gradients of `⟨upstream, ε_θ(z, t, cond)⟩` for the trainable
    /// parameters; `upstream` is shaped like `z`.
    pub fn backward(
        &self,
        z: &LatentVideo,
        t: usize,
        cond: &Conditioning,
        upstream: &LatentVideo,
    ) -> Result<ToyGradients> {
        z.ensure_same_shape(upstream)?;
        let tr = self.forward(z, t, cond)?;
        self.backward_from(&tr, &upstream.data)
    }

    fn backward_from(&self, tr: &Trace, upstream: &[f64]) -> Result<ToyGradients> {
        let (f, c, d) = tr.dims;
        let (hid, e) = (self.config.hidden, self.config.prompt_dim);
        let n = f * d;
        let mut d_tokens = vec![0.0; n * c];
        for i in 0..f {
            for p in 0..d {
                for ch in 0..c {
                    d_tokens[(i * d + p) * c + ch] = upstream[(i * c + ch) * d + p];
                }
            }
        }
        let dh2 = matmul_nt(&d_tokens, &self.backbone_out, n, c, hid);
        let dh2 = Tensor::new(vec![f, d, hid], dh2)?;

        let ta = attention_backward(AttentionKind::Temporal, &tr.h1, &self.temporal, &dh2)?;
        let mut dh1 = ta.x;
        add_assign(dh1.data_mut(), dh2.data());

        let kfa = attention_backward(
            AttentionKind::KeyFrame { key: tr.key },
            &tr.x,
            &self.key_frame,
            &dh1,
        )?;
        let mut dx = kfa.x.into_data();
        add_assign(&mut dx, dh1.data());

        let pose_in = matmul_tn(&tr.pose_tokens, &dx, n, POSE_CHANNELS, hid);
        let mut dx_frame = vec![0.0; f * hid];
        for (r, row) in dx.chunks(hid).enumerate() {
            add_assign(&mut dx_frame[(r / d) * hid..(r / d + 1) * hid], row);
        }
        let prompt_in = matmul_tn(&tr.prompts, &dx_frame, f, e, hid);
        Ok(ToyGradients {
            pose_in,
            prompt_in,
            key_frame: kfa.weights,
            temporal: ta.weights,
        })
    }

    /// Mean squared error against `target` and its gradients.
    pub fn mse_and_gradients(
        &self,
        z: &LatentVideo,
        t: usize,
        cond: &Conditioning,
        target: &LatentVideo,
    ) -> Result<(f64, ToyGradients)> {
        z.ensure_same_shape(target)?;
        let tr = self.forward(z, t, cond)?;
        let n = tr.out.len() as f64;
        let mut loss = 0.0;
        let upstream: Vec<f64> = tr
            .out
            .iter()
            .zip(&target.data)
            .map(|(o, y)| {
                let r = o - y;
                loss += r * r;
                2.0 * r / n
            })
            .collect();
        let grads = self.backward_from(&tr, &upstream)?;
        Ok((loss / n, grads))
    }
}

impl Denoiser for ToyDenoiser {
    fn predict_noise(&self, z: &LatentVideo, t: usize, cond: &Conditioning) -> Result<LatentVideo> {
        let tr = self.forward(z, t, cond)?;
        LatentVideo::new(z.frames, z.channels, z.height, z.width, tr.out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::conditioning::ConditioningVector;

    fn setup(seed: u64) -> (ToyDenoiser, LatentVideo, Conditioning) {
        let cfg = ToyConfig {
            latent_channels: 3,
            hidden: 4,
            prompt_dim: 2,
            seed,
            attention_scale: 0.5,
            ..ToyConfig::default()
        };
        let model = ToyDenoiser::new(cfg).unwrap();
        let mut rng = stream(seed, 9);
        let z = LatentVideo::new(3, 3, 2, 2, normal_vec(&mut rng, 36)).unwrap();
        let cond = Conditioning {
            frames: (0..3)
                .map(|_| ConditioningVector {
                    pose_map: normal_vec(&mut rng, 16),
                    prompt: normal_vec(&mut rng, 2),
                    is_null: false,
                })
                .collect(),
            key_frame: 2,
        };
        (model, z, cond)
    }

    #[test]
    fn default_model_is_small() {
        let m = ToyDenoiser::new(ToyConfig::default()).unwrap();
        assert!(m.parameter_count() < 100_000);
        assert_eq!(m.trainable().len(), m.trainable_len());
    }

    #[test]
    fn prediction_is_deterministic_and_shape_preserving() {
        let (m, z, cond) = setup(1);
        let a = m.predict_noise(&z, 500, &cond).unwrap();
        assert!(a.same_shape(&z));
        assert_eq!(a, m.predict_noise(&z, 500, &cond).unwrap());
        assert_ne!(a, m.predict_noise(&z, 10, &cond).unwrap());
        let short = cond.select(&[0, 1], 1);
        assert!(matches!(
            m.predict_noise(&z, 500, &short),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn trainable_round_trip() {
        let (mut m, _, _) = setup(2);
        let mut v = m.trainable();
        v[0] += 1.0;
        m.set_trainable(&v).unwrap();
        assert_eq!(m.trainable(), v);
        assert!(m.set_trainable(&v[1..]).is_err());
    }

    #[test]
    fn named_parameters_rebuild_the_model() {
        let (m, _, _) = setup(3);
        let named: Vec<(String, Vec<f64>)> = m
            .named_parameters()
            .into_iter()
            .map(|(n, _, v)| (n, v.to_vec()))
            .collect();
        let mut other_cfg = *m.config();
        other_cfg.seed = 99;
        let rebuilt = ToyDenoiser::from_named_parameters(other_cfg, &named).unwrap();
        assert_eq!(rebuilt.trainable(), m.trainable());
        assert!(ToyDenoiser::from_named_parameters(*m.config(), &named[1..]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (m, z, cond) = setup(4);
        let target = LatentVideo::new(3, 3, 2, 2, normal_vec(&mut stream(4, 10), 36)).unwrap();
        let (_, g) = m.mse_and_gradients(&z, 300, &cond, &target).unwrap();
        let analytic = g.flatten();
        let base = m.trainable();
        let h = 1e-5;
        for idx in (0..base.len()).step_by(7) {
            let mut probe = m.clone();
            let mut v = base.clone();
            v[idx] += h;
            probe.set_trainable(&v).unwrap();
            let lp = probe.mse_and_gradients(&z, 300, &cond, &target).unwrap().0;
            v[idx] -= 2.0 * h;
            probe.set_trainable(&v).unwrap();
            let lm = probe.mse_and_gradients(&z, 300, &cond, &target).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let err = (fd - analytic[idx]).abs() / fd.abs().max(analytic[idx].abs()).max(1e-8);
            assert!(
                err < 1e-5,
                "param {idx}: fd {fd} analytic {}",
                analytic[idx]
            );
        }
    }
}
