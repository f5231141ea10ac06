//! End-to-end inference: reference selection, a single inversion, per-frame
//! latent editing, reference-pose insertion, guided sampling and removal of
//! the inserted frame.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::affine::{apply_latent_edit, plan_latent_edit, EditConfig, GroupEdit};
use crate::diffusion::{
    build_conditioning, ddim_invert, ddim_sample_with, encode, prompt_embedding, Denoiser,
    ScheduleConfig,
};
use crate::error::{Error, Result};
use crate::latent::{LatentGrid, LatentVideo, Video};
use crate::pose::{PoseSequence, DEFAULT_VALIDITY_THRESHOLD};
use crate::reference::{drop_inserted_frame, insert_reference_pose, select_reference_frame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// 1-based position of the inserted reference pose.
    pub key_index: usize,
    /// 1-based sampling step before which latent edits are applied.
    pub edit_step: usize,
    pub ddim_steps: usize,
    pub guidance_scale: f64,
    pub attribute_guidance_scale: f64,
    pub edit_face: bool,
    pub edit_left_hand: bool,
    pub edit_right_hand: bool,
    pub padding_cells: usize,
    pub min_points: usize,
    pub validity_threshold: f64,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub encoder_factor: usize,
    pub prompt_dim: usize,
    pub source_prompt: String,
    pub target_prompt: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            key_index: 1,
            edit_step: 1,
            ddim_steps: 50,
            guidance_scale: 1.0,
            attribute_guidance_scale: 3.0,
            edit_face: true,
            edit_left_hand: true,
            edit_right_hand: true,
            padding_cells: 0,
            min_points: 3,
            validity_threshold: DEFAULT_VALIDITY_THRESHOLD,
            seed: 0,
            schedule: ScheduleConfig::default(),
            encoder_factor: 2,
            prompt_dim: 8,
            source_prompt: "a person".into(),
            target_prompt: None,
        }
    }
}

impl PipelineConfig {
    pub fn edit_config(&self) -> EditConfig {
        EditConfig {
            edit_face: self.edit_face,
            edit_left_hand: self.edit_left_hand,
            edit_right_hand: self.edit_right_hand,
            padding_cells: self.padding_cells,
            min_points: self.min_points,
            validity_threshold: self.validity_threshold,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.edit_step == 0 || self.edit_step > self.ddim_steps {
            return Err(Error::InvalidInput(format!(
                "edit step {} not in 1..={}",
                self.edit_step, self.ddim_steps
            )));
        }
        if self.key_index == 0 || self.key_index > m + 1 {
            return Err(Error::InvalidInput(format!(
                "key index {} not in 1..={}",
                self.key_index,
                m + 1
            )));
        }
        for (name, s) in [
            ("guidance_scale", self.guidance_scale),
            ("attribute_guidance_scale", self.attribute_guidance_scale),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and non-negative, got {s}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameEdits {
    /// 1-based index into the inference poses.
    pub frame: usize,
    pub groups: Vec<GroupEdit>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PipelineReport {
    pub reference_index: Option<usize>,
    pub reference_distance: Option<f64>,
    pub key_index: usize,
    pub edit_step: usize,
    pub guidance_scale: f64,
    pub frame_edits: Vec<FrameEdits>,
    pub inversion_count: usize,
    pub inversion_steps: usize,
    pub sampling_steps: usize,
    pub sampled_frames: usize,
    pub output_frames: usize,
    /// Wall-clock time per completed stage. Everything else in the report is
    /// deterministic.
    pub timings: Vec<StageTiming>,
}

impl PipelineReport {
    /// The report with timings cleared, for reproducibility comparisons.
    pub fn without_timings(&self) -> PipelineReport {
        PipelineReport {
            timings: Vec::new(),
            ..self.clone()
        }
    }
}

/// A failed run: the stage and frame where it stopped, the cause, and the
/// report up to that point.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: &'static str,
    /// 1-based inference frame, when the failure is tied to one.
    pub frame: Option<usize>,
    pub source: Error,
    pub report: Box<PipelineReport>,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.frame {
            Some(i) => write!(f, "{} stage, frame {i}: {}", self.stage, self.source),
            None => write!(f, "{} stage: {}", self.stage, self.source),
        }
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

/// `m` copies of `z_r` along the frame axis.
pub fn build_pseudo_reference(z_r: &LatentGrid, m: usize) -> Result<LatentVideo> {
    if m == 0 {
        return Err(Error::InvalidInput(
            "pseudo reference needs at least one frame".into(),
        ));
    }
    Video::from_frames(&vec![z_r.clone(); m])
}

struct Run {
    report: PipelineReport,
    clock: Instant,
}

impl Run {
    fn stage<T>(
        &mut self,
        stage: &'static str,
        frame: Option<usize>,
        r: Result<T>,
    ) -> Result<T, PipelineError> {
        match r {
            Ok(v) => Ok(v),
            Err(source) => Err(PipelineError {
                stage,
                frame,
                source,
                report: Box::new(self.report.clone()),
            }),
        }
    }

    fn finish(&mut self, stage: &str) {
        self.report.timings.push(StageTiming {
            stage: stage.into(),
            seconds: self.clock.elapsed().as_secs_f64(),
        });
        self.clock = Instant::now();
    }
}

fn run_pipeline<D: Denoiser + ?Sized>(
    train_frames: &Video,
    train_poses: &PoseSequence,
    infer_poses: &PoseSequence,
    denoiser: &D,
    config: &PipelineConfig,
    sample_prompt: &str,
    guidance_scale: f64,
) -> Result<(LatentVideo, PipelineReport), PipelineError> {
    let m = infer_poses.len();
    let k = config.key_index;
    let thr = config.validity_threshold;
    let mut run = Run {
        report: PipelineReport {
            key_index: k,
            edit_step: config.edit_step,
            guidance_scale,
            ..PipelineReport::default()
        },
        clock: Instant::now(),
    };

    let checked = config.validate(m).and_then(|_| {
        if train_frames.frames != train_poses.len() {
            return Err(Error::Shape(format!(
                "{} training frames but {} training poses",
                train_frames.frames,
                train_poses.len()
            )));
        }
        config.schedule.build(config.ddim_steps)
    });
    let schedule = run.stage("validate", None, checked)?;
    run.finish("validate");

    let choice = run.stage(
        "select",
        None,
        select_reference_frame(train_poses, infer_poses, thr),
    )?;
    run.report.reference_index = Some(choice.r);
    run.report.reference_distance = Some(choice.total_distance);
    let q_r = train_poses.poses()[choice.r - 1].clone();
    run.finish("select");

    let source_prompt = prompt_embedding(&config.source_prompt, config.prompt_dim, config.seed);
    let inverted = encode(
        &train_frames.select_frames(&[choice.r - 1]),
        config.encoder_factor,
    )
    .and_then(|x_r| {
        let cond = build_conditioning(
            std::slice::from_ref(&q_r),
            &source_prompt,
            x_r.height,
            x_r.width,
            thr,
            1,
        )?;
        ddim_invert(&x_r, denoiser, &cond, &schedule, 1.0)
    });
    let z_bar = run.stage("invert", None, inverted)?.frame(0);
    run.report.inversion_count = 1;
    run.report.inversion_steps = schedule.sampling_steps();
    run.finish("invert");

    let (h, w) = (z_bar.height, z_bar.width);
    let edit_cfg = config.edit_config();
    let mut plans = Vec::with_capacity(m);
    for (i, p) in infer_poses.poses().iter().enumerate() {
        let plan = run.stage(
            "edit",
            Some(i + 1),
            plan_latent_edit(&q_r, p, h, w, &edit_cfg),
        )?;
        run.report.frame_edits.push(FrameEdits {
            frame: i + 1,
            groups: plan.clone(),
        });
        plans.push(plan);
    }
    run.finish("edit");

    let inserted = run.stage("insert", None, insert_reference_pose(infer_poses, &q_r, k))?;
    let mut z_init = run.stage("insert", None, build_pseudo_reference(&z_bar, m + 1))?;
    run.report.sampled_frames = m + 1;
    let apply_edits =
        |z: &mut LatentVideo, plans: &[Vec<GroupEdit>]| -> Result<(), (usize, Error)> {
            for (i, plan) in plans.iter().enumerate() {
                let slot = if i < k - 1 { i } else { i + 1 };
                let edited = apply_latent_edit(&z.frame(slot), plan).map_err(|e| (i + 1, e))?;
                z.set_frame(slot, &edited).map_err(|e| (i + 1, e))?;
            }
            Ok(())
        };
    if config.edit_step == 1 {
        if let Err((frame, source)) = apply_edits(&mut z_init, &plans) {
            return Err(PipelineError {
                stage: "edit",
                frame: Some(frame),
                source,
                report: Box::new(run.report.clone()),
            });
        }
    }
    run.finish("insert");

    let prompt = prompt_embedding(sample_prompt, config.prompt_dim, config.seed);
    let cond = run.stage(
        "sample",
        None,
        build_conditioning(inserted.poses.poses(), &prompt, h, w, thr, k),
    )?;
    let mut edit_failure = None;
    let sampled = ddim_sample_with(
        &z_init,
        denoiser,
        &cond,
        &schedule,
        guidance_scale,
        |step, z| {
            if step == config.edit_step && step > 1 {
                if let Err((frame, e)) = apply_edits(z, &plans) {
                    edit_failure = Some(frame);
                    return Err(e);
                }
            }
            Ok(())
        },
    );
    let sampled = match sampled {
        Ok(v) => v,
        Err(source) => {
            let (stage, frame) = match edit_failure {
                Some(f) => ("edit", Some(f)),
                None => ("sample", None),
            };
            return Err(PipelineError {
                stage,
                frame,
                source,
                report: Box::new(run.report.clone()),
            });
        }
    };
    run.report.sampling_steps = schedule.sampling_steps();
    run.finish("sample");

    let out = run.stage("drop", None, drop_inserted_frame(&sampled, k))?;
    run.report.output_frames = out.frames;
    run.finish("drop");
    Ok((out, run.report))
}

/// Generates latents for `infer_poses` in the appearance of the training
/// video, sampling with the source prompt and `config.guidance_scale`.
pub fn run_inference<D: Denoiser + ?Sized>(
    train_frames: &Video,
    train_poses: &PoseSequence,
    infer_poses: &PoseSequence,
    denoiser: &D,
    config: &PipelineConfig,
) -> Result<(LatentVideo, PipelineReport), PipelineError> {
    run_pipeline(
        train_frames,
        train_poses,
        infer_poses,
        denoiser,
        config,
        &config.source_prompt,
        config.guidance_scale,
    )
}

/// Same pipeline, sampling with `target_prompt` and
/// `config.attribute_guidance_scale`. Inversion still uses the source prompt.
pub fn attribute_edit_inference<D: Denoiser + ?Sized>(
    train_frames: &Video,
    train_poses: &PoseSequence,
    infer_poses: &PoseSequence,
    denoiser: &D,
    config: &PipelineConfig,
    target_prompt: &str,
) -> Result<(LatentVideo, PipelineReport), PipelineError> {
    run_pipeline(
        train_frames,
        train_poses,
        infer_poses,
        denoiser,
        config,
        target_prompt,
        config.attribute_guidance_scale,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{decode, ConstantDenoiser, ToyConfig, ToyDenoiser};
    use crate::synthetic::synthetic_video;

    fn fast() -> PipelineConfig {
        PipelineConfig {
            ddim_steps: 10,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn pseudo_reference_copies() {
        let z = LatentGrid::from_fn(2, 3, 3, |c, i, j| (c + i * j) as f64);
        let v = build_pseudo_reference(&z, 5).unwrap();
        assert_eq!(v.frames, 5);
        assert!(v.frame_grids().iter().all(|g| g == &z));
        assert_eq!(build_pseudo_reference(&z, 1).unwrap().frame(0), z);
        assert!(build_pseudo_reference(&z, 0).is_err());
    }

    #[test]
    fn identity_scenario_reconstructs_reference() {
        let v = synthetic_video(6, 16, 16, 1).unwrap();
        let r = 3;
        let infer = PoseSequence::new(vec![v.poses[r - 1].clone(); 3]).unwrap();
        let cfg = fast();
        let (out, report) = run_inference(
            &v.frames,
            &v.poses,
            &infer,
            &ConstantDenoiser::new(0.2),
            &cfg,
        )
        .unwrap();
        assert_eq!(report.reference_index, Some(r));
        assert_eq!(report.inversion_count, 1);
        assert_eq!(report.sampled_frames, 4);
        assert_eq!(out.frames, 3);
        let decoded = decode(&out, 2).unwrap();
        let x_r = v.frames.select_frames(&[r - 1]);
        for i in 0..3 {
            let f = decoded.select_frames(&[i]);
            assert!(f.max_abs_diff(&x_r) < 1e-5);
        }
    }

    #[test]
    fn late_edits_and_errors_carry_stage() {
        let v = synthetic_video(4, 16, 16, 2).unwrap();
        let model = ToyDenoiser::new(ToyConfig::default()).unwrap();
        let cfg = PipelineConfig {
            edit_step: 4,
            key_index: 2,
            ..fast()
        };
        let (out, report) = run_inference(&v.frames, &v.poses, &v.poses, &model, &cfg).unwrap();
        assert_eq!(out.frames, 4);
        assert_eq!(report.frame_edits.len(), 4);
        let bad = PipelineConfig {
            edit_step: 11,
            ..fast()
        };
        let err = run_inference(&v.frames, &v.poses, &v.poses, &model, &bad).unwrap_err();
        assert_eq!(err.stage, "validate");
        assert!(err.to_string().contains("edit step"));
    }

    #[test]
    fn deterministic_reports() {
        let v = synthetic_video(4, 16, 16, 3).unwrap();
        let model = ToyDenoiser::new(ToyConfig::default()).unwrap();
        let a = run_inference(&v.frames, &v.poses, &v.poses, &model, &fast()).unwrap();
        let b = run_inference(&v.frames, &v.poses, &v.poses, &model, &fast()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.without_timings(), b.1.without_timings());
    }
}
