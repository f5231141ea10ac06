use std::path::{Path, PathBuf};

use posecraft::affine::plan_latent_edit;
use posecraft::diffusion::{build_conditioning, ddim_invert, ddim_sample, prompt_embedding};
use posecraft::formats::{file_digest, read_container, render_frame, write_container};
use posecraft::rng::{stream, streams};
use posecraft::{
    attribute_edit_inference, decode, encode, fit_affine, group_landmarks, mse_p, parse_pose_file,
    psnr, run_inference, select_reference_frame, train_one_shot, video_sim, LatentGrid,
    PipelineReport, PoseSequence, TrainReport, Video,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ModelKind, RunConfig};
use crate::error::CliError;
use crate::model::{build_model, resolve_model, save_toy, Model};

pub fn print_json(v: &impl Serialize) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Non-finite numbers as strings, so the JSON stays valid.
pub fn json_number(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

/// Frames from a rank-4 `(f, c, h, w)` or rank-3 `(c, h, w)` container.
pub fn read_video(path: &Path) -> Result<Video, CliError> {
    let t = read_container(path)?;
    let s = t.shape().to_vec();
    let (f, c, h, w) = match s.as_slice() {
        [f, c, h, w] => (*f, *c, *h, *w),
        [c, h, w] => (1, *c, *h, *w),
        _ => {
            return Err(CliError::input(format!(
                "{}: expected a (frames, channels, height, width) tensor, got shape {s:?}",
                path.display()
            )))
        }
    };
    Video::new(f, c, h, w, t.into_data())
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_video(path: &Path, v: &Video) -> Result<(), CliError> {
    write_container(path, &[v.frames, v.channels, v.height, v.width], &v.data)?;
    Ok(())
}

fn read_poses(path: &Path) -> Result<PoseSequence, CliError> {
    Ok(parse_pose_file(path)?)
}

fn pose_at(seq: &PoseSequence, frame: usize, path: &Path) -> Result<posecraft::Pose, CliError> {
    seq.get(frame).cloned().ok_or_else(|| {
        CliError::domain(format!(
            "{}: frame {frame} not in 1..={}",
            path.display(),
            seq.len()
        ))
    })
}

pub fn select_ref(train: &Path, infer: &Path, threshold: f64) -> Result<(), CliError> {
    let choice = select_reference_frame(&read_poses(train)?, &read_poses(infer)?, threshold)?;
    print_json(&json!({ "r": choice.r, "total_distance": json_number(choice.total_distance) }))
}

pub struct FitArgs<'a> {
    pub reference: &'a Path,
    pub target: &'a Path,
    pub group: &'a str,
    pub reference_frame: usize,
    pub target_frame: usize,
    pub threshold: f64,
}

pub fn fit(args: FitArgs) -> Result<(), CliError> {
    let r = pose_at(
        &read_poses(args.reference)?,
        args.reference_frame,
        args.reference,
    )?;
    let t = pose_at(&read_poses(args.target)?, args.target_frame, args.target)?;
    let (src, dst): (Vec<[f64; 2]>, Vec<[f64; 2]>) = group_landmarks(&r, args.group)?
        .iter()
        .zip(group_landmarks(&t, args.group)?)
        .filter(|(a, b)| a.is_valid(args.threshold) && b.is_valid(args.threshold))
        .map(|(a, b)| (a.point(), b.point()))
        .unzip();
    let fit = fit_affine(&src, &dst)?;
    print_json(&json!({
        "group": args.group,
        "points": src.len(),
        "affine": fit.affine,
        "matrix": [[fit.affine.a, fit.affine.b, fit.affine.c], [fit.affine.d, fit.affine.e, fit.affine.f]],
        "kind": fit.kind,
        "residual": json_number(fit.residual),
    }))
}

pub struct EditArgs<'a> {
    pub latent: &'a Path,
    pub reference: &'a Path,
    pub target: &'a Path,
    pub reference_frame: usize,
    pub target_frame: usize,
    pub out: &'a Path,
    pub config: RunConfig,
}

pub fn edit_latent(args: EditArgs) -> Result<(), CliError> {
    let v = read_video(args.latent)?;
    if v.frames != 1 {
        return Err(CliError::input(format!(
            "{}: expected a single latent grid, got {} frames",
            args.latent.display(),
            v.frames
        )));
    }
    let z: LatentGrid = v.frame(0);
    let r = pose_at(
        &read_poses(args.reference)?,
        args.reference_frame,
        args.reference,
    )?;
    let t = pose_at(&read_poses(args.target)?, args.target_frame, args.target)?;
    let cfg = args.config.pipeline.edit_config();
    let plan = plan_latent_edit(&r, &t, z.height, z.width, &cfg)?;
    let edited = posecraft::affine::apply_latent_edit(&z, &plan)?;
    write_container(
        args.out,
        &[edited.channels, edited.height, edited.width],
        &edited.data,
    )?;
    print_json(&json!({ "groups": plan }))
}

fn conditioning_for(
    cfg: &RunConfig,
    poses: &PoseSequence,
    h: usize,
    w: usize,
    prompt: &str,
) -> Result<posecraft::Conditioning, CliError> {
    let p = &cfg.pipeline;
    let emb = prompt_embedding(prompt, p.prompt_dim, p.seed);
    Ok(build_conditioning(
        poses.poses(),
        &emb,
        h,
        w,
        p.validity_threshold,
        p.key_index.min(poses.len()),
    )?)
}

fn check_pose_count(poses: &PoseSequence, frames: usize) -> Result<(), CliError> {
    if poses.len() != frames {
        return Err(CliError::domain(format!(
            "{} poses for {frames} frames",
            poses.len()
        )));
    }
    Ok(())
}

pub fn invert(
    frames: &Path,
    poses: &Path,
    params: Option<&Path>,
    out: &Path,
    cfg: RunConfig,
) -> Result<(), CliError> {
    let x = encode(&read_video(frames)?, cfg.pipeline.encoder_factor)?;
    let poses = read_poses(poses)?;
    check_pose_count(&poses, x.frames)?;
    let model = resolve_model(&cfg, params, x.channels)?;
    let schedule = cfg.pipeline.schedule.build(cfg.pipeline.ddim_steps)?;
    let cond = conditioning_for(&cfg, &poses, x.height, x.width, &cfg.pipeline.source_prompt)?;
    let z = ddim_invert(&x, &model, &cond, &schedule, cfg.pipeline.guidance_scale)?;
    write_video(out, &z)?;
    print_json(&json!({ "frames": z.frames, "steps": schedule.sampling_steps() }))
}

pub fn sample(
    latent: &Path,
    poses: &Path,
    params: Option<&Path>,
    out: &Path,
    decode_output: bool,
    cfg: RunConfig,
) -> Result<(), CliError> {
    let z = read_video(latent)?;
    let poses = read_poses(poses)?;
    check_pose_count(&poses, z.frames)?;
    let model = resolve_model(&cfg, params, z.channels)?;
    let schedule = cfg.pipeline.schedule.build(cfg.pipeline.ddim_steps)?;
    let prompt = cfg
        .pipeline
        .target_prompt
        .clone()
        .unwrap_or_else(|| cfg.pipeline.source_prompt.clone());
    let cond = conditioning_for(&cfg, &poses, z.height, z.width, &prompt)?;
    let mut x = ddim_sample(&z, &model, &cond, &schedule, cfg.pipeline.guidance_scale)?;
    if decode_output {
        x = decode(&x, cfg.pipeline.encoder_factor)?;
    }
    write_video(out, &x)?;
    print_json(&json!({ "frames": x.frames, "steps": schedule.sampling_steps() }))
}

fn train_model(
    cfg: &RunConfig,
    frames: &Video,
    poses: &PoseSequence,
) -> Result<(posecraft::ToyDenoiser, TrainReport), CliError> {
    let latent_channels = frames.channels * cfg.pipeline.encoder_factor.pow(2);
    let Model::Toy(model) = build_model(
        &RunConfig {
            model: crate::config::ModelConfig {
                kind: ModelKind::Toy,
                ..cfg.model.clone()
            },
            ..cfg.clone()
        },
        latent_channels,
    )?
    else {
        unreachable!("toy model requested");
    };
    let schedule = cfg.pipeline.schedule.build(cfg.pipeline.ddim_steps)?;
    let prompt = prompt_embedding(
        &cfg.pipeline.source_prompt,
        cfg.pipeline.prompt_dim,
        cfg.pipeline.seed,
    );
    let mut training = cfg.training.clone();
    training.encoder_factor = cfg.pipeline.encoder_factor;
    training.validity_threshold = cfg.pipeline.validity_threshold;
    let mut rng = stream(cfg.pipeline.seed, streams::TRAINING);
    Ok(train_one_shot(
        *model, frames, poses, &prompt, &schedule, &training, &mut rng,
    )?)
}

fn training_summary(r: &TrainReport) -> Value {
    let smoothed = r.smoothed(20);
    json!({
        "iterations": r.iterations,
        "first_loss": r.losses.first().map(|&l| json_number(l)),
        "final_loss": r.losses.last().map(|&l| json_number(l)),
        "final_smoothed_loss": smoothed.last().map(|&l| json_number(l)),
        "losses": r.losses,
    })
}

pub fn train(frames: &Path, poses: &Path, out: &Path, cfg: RunConfig) -> Result<(), CliError> {
    let frames = read_video(frames)?;
    let poses = read_poses(poses)?;
    let (model, report) = train_model(&cfg, &frames, &poses)?;
    save_toy(&model, out)?;
    let summary = training_summary(&report);
    write_json(&out.join("losses.json"), &summary)?;
    let mut brief = summary;
    brief.as_object_mut().expect("object").remove("losses");
    print_json(&brief)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

impl InputRecord {
    fn of(path: &Path) -> Result<Self, CliError> {
        let abs = std::fs::canonicalize(path)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        Ok(Self {
            sha256: file_digest(&abs)?,
            path: abs,
        })
    }

    fn verify(&self) -> Result<(), CliError> {
        let now = file_digest(&self.path)?;
        if now != self.sha256 {
            return Err(CliError::input(format!(
                "{}: contents changed since the manifest was written",
                self.path.display()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInputs {
    pub train_frames: InputRecord,
    pub train_poses: InputRecord,
    pub infer_poses: InputRecord,
    /// Saved model directory; its parameter file is digested.
    pub params: Option<InputRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: RunInputs,
}

pub enum RunSource<'a> {
    Paths {
        train_frames: &'a Path,
        train_poses: &'a Path,
        infer_poses: &'a Path,
        params: Option<&'a Path>,
        config: Box<RunConfig>,
    },
    Manifest(&'a Path),
}

pub const OUTPUT_LATENTS: &str = "latents.pct";
pub const OUTPUT_FRAMES: &str = "frames";
pub const OUTPUT_REPORT: &str = "report.json";
pub const OUTPUT_MANIFEST: &str = "manifest.json";

fn params_record(dir: &Path) -> Result<InputRecord, CliError> {
    let abs = std::fs::canonicalize(dir)
        .map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    let digest = format!(
        "{}{}",
        file_digest(abs.join(crate::model::PARAMS_FILE))?,
        file_digest(abs.join(crate::model::PARAMS_MANIFEST))?
    );
    Ok(InputRecord {
        path: abs,
        sha256: posecraft::formats::sha256_hex(digest.as_bytes()),
    })
}

pub fn run(source: RunSource, out: &Path) -> Result<(), CliError> {
    let manifest = match source {
        RunSource::Paths {
            train_frames,
            train_poses,
            infer_poses,
            params,
            config,
        } => RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.pipeline.seed,
            config: *config,
            inputs: RunInputs {
                train_frames: InputRecord::of(train_frames)?,
                train_poses: InputRecord::of(train_poses)?,
                infer_poses: InputRecord::of(infer_poses)?,
                params: params.map(params_record).transpose()?,
            },
        },
        RunSource::Manifest(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            let m: RunManifest = serde_json::from_str(&text).map_err(|e| {
                CliError::input(format!("{}: invalid manifest: {e}", path.display()))
            })?;
            m.inputs.train_frames.verify()?;
            m.inputs.train_poses.verify()?;
            m.inputs.infer_poses.verify()?;
            if let Some(p) = &m.inputs.params {
                if params_record(&p.path)? != *p {
                    return Err(CliError::input(format!(
                        "{}: model parameters changed since the manifest was written",
                        p.path.display()
                    )));
                }
            }
            m
        }
    };
    let cfg = &manifest.config;
    let frames = read_video(&manifest.inputs.train_frames.path)?;
    let train_poses = read_poses(&manifest.inputs.train_poses.path)?;
    let infer_poses = read_poses(&manifest.inputs.infer_poses.path)?;
    let latent_channels = frames.channels * cfg.pipeline.encoder_factor.pow(2);

    let mut training = None;
    let model = match (&manifest.inputs.params, cfg.model.kind) {
        (Some(p), _) => resolve_model(cfg, Some(&p.path), latent_channels)?,
        (None, ModelKind::Toy) => {
            let (m, report) = train_model(cfg, &frames, &train_poses)?;
            training = Some(report);
            Model::Toy(Box::new(m))
        }
        (None, ModelKind::Constant) => build_model(cfg, latent_channels)?,
    };

    create_dir(out)?;
    let result = match &cfg.pipeline.target_prompt {
        Some(t) => attribute_edit_inference(
            &frames,
            &train_poses,
            &infer_poses,
            &model,
            &cfg.pipeline,
            t,
        ),
        None => run_inference(&frames, &train_poses, &infer_poses, &model, &cfg.pipeline),
    };
    let training_json = training.as_ref().map(training_summary);
    let (latents, report) = match result {
        Ok(v) => v,
        Err(e) => {
            write_report(out, &e.report, training_json, Some(&e))?;
            write_json(&out.join(OUTPUT_MANIFEST), &manifest)?;
            return Err(e.into());
        }
    };
    write_video(&out.join(OUTPUT_LATENTS), &latents)?;
    let decoded = decode(&latents, cfg.pipeline.encoder_factor)?;
    let frames_dir = out.join(OUTPUT_FRAMES);
    create_dir(&frames_dir)?;
    write_video(&frames_dir.join("decoded.pct"), &decoded)?;
    render_video(&decoded, &frames_dir)?;
    write_report(out, &report, training_json, None)?;
    write_json(&out.join(OUTPUT_MANIFEST), &manifest)?;
    print_json(&json!({
        "reference_index": report.reference_index,
        "output_frames": report.output_frames,
        "out": out,
    }))
}

fn write_report(
    out: &Path,
    report: &PipelineReport,
    training: Option<Value>,
    error: Option<&posecraft::PipelineError>,
) -> Result<(), CliError> {
    let mut v = json!({ "pipeline": report, "training": training });
    if let Some(e) = error {
        v["error"] = json!({
            "stage": e.stage,
            "frame": e.frame,
            "message": e.source.to_string(),
        });
    }
    write_json(&out.join(OUTPUT_REPORT), &v)
}

/// One PPM per frame for 3-channel video, one PGM per channel otherwise.
fn render_video(v: &Video, dir: &Path) -> Result<(), CliError> {
    for (i, grid) in v.frame_grids().iter().enumerate() {
        if grid.channels == 3 {
            render_frame(grid, dir.join(format!("frame_{:03}.ppm", i + 1)))?;
        } else {
            for c in 0..grid.channels {
                let plane = LatentGrid::new(1, grid.height, grid.width, grid.plane(c).to_vec())?;
                render_frame(&plane, dir.join(format!("frame_{:03}_c{c}.pgm", i + 1)))?;
            }
        }
    }
    Ok(())
}

pub fn metrics(a: &Path, b: &Path, metric: &str, threshold: f64) -> Result<(), CliError> {
    let value = match metric {
        "psnr" => {
            let (x, y) = (read_video(a)?, read_video(b)?);
            if !x.same_shape(&y) {
                return Err(CliError::domain(format!(
                    "shape mismatch: {}×{}×{}×{} vs {}×{}×{}×{}",
                    x.frames,
                    x.channels,
                    x.height,
                    x.width,
                    y.frames,
                    y.channels,
                    y.height,
                    y.width
                )));
            }
            psnr(&x.data, &y.data)?
        }
        "mse-p" => mse_p(&read_poses(a)?, &read_poses(b)?, threshold)?,
        "video-sim" => video_sim(&read_poses(a)?, &read_poses(b)?, threshold)?,
        other => return Err(CliError::input(format!("unknown metric {other:?}"))),
    };
    print_json(&json!({ "metric": metric, "value": json_number(value) }))
}

pub fn render(
    input: &Path,
    frame: usize,
    channel: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let v = read_video(input)?;
    if frame == 0 || frame > v.frames {
        return Err(CliError::domain(format!(
            "frame {frame} not in 1..={}",
            v.frames
        )));
    }
    let grid = v.frame(frame - 1);
    let grid = match channel {
        Some(c) if c >= grid.channels => {
            return Err(CliError::domain(format!(
                "channel {c} not in 0..{}",
                grid.channels
            )))
        }
        Some(c) => LatentGrid::new(1, grid.height, grid.width, grid.plane(c).to_vec())?,
        None => grid,
    };
    render_frame(&grid, out)?;
    print_json(&json!({ "out": out, "channels": grid.channels }))
}
