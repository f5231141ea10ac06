use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use posecraft::formats::{read_container, write_container};
use posecraft::pose::write_pose_file;
use posecraft::synthetic::synthetic_video;
use posecraft::{Landmark, Pose, PoseLayout, PoseSequence, Video};
use serde_json::Value;

fn posecraft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posecraft"))
        .args(args)
        .env_remove("POSECRAFT_SEED")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn uniform_pose(x: f64, y: f64) -> Pose {
    let layout = PoseLayout::WHOLE_BODY;
    let lms = (0..layout.total())
        .map(|i| Landmark::new(x + (i % 7) as f64 * 0.01, y + (i % 5) as f64 * 0.01, 1.0))
        .collect();
    Pose::new(layout, lms).unwrap()
}

fn write_poses(dir: &Path, name: &str, poses: Vec<Pose>) -> PathBuf {
    let path = dir.join(name);
    write_pose_file(&path, &PoseSequence::new(poses).unwrap()).unwrap();
    path
}

fn write_video(dir: &Path, name: &str, v: &Video) -> PathBuf {
    let path = dir.join(name);
    write_container(&path, &[v.frames, v.channels, v.height, v.width], &v.data).unwrap();
    path
}

#[test]
fn select_ref_single_and_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let one = write_poses(dir.path(), "one.json", vec![uniform_pose(0.2, 0.2)]);
    let infer = write_poses(
        dir.path(),
        "infer.json",
        vec![uniform_pose(0.5, 0.5), uniform_pose(0.6, 0.4)],
    );
    let v = stdout_json(&posecraft(&["select-ref", p(&one), p(&infer)]));
    assert_eq!(v["r"], 1);

    let train_poses = vec![uniform_pose(0.1, 0.1), uniform_pose(0.55, 0.45)];
    let two = write_poses(dir.path(), "two.json", train_poses.clone());
    let v = stdout_json(&posecraft(&["select-ref", p(&two), p(&infer)]));
    let infer_seq = posecraft::parse_pose_file(&infer).unwrap();
    let totals: Vec<f64> = train_poses
        .iter()
        .map(|q| {
            infer_seq
                .poses()
                .iter()
                .map(|pp| {
                    let n = q.landmarks().len() as f64;
                    q.landmarks()
                        .iter()
                        .zip(pp.landmarks())
                        .map(|(a, b)| (a.x - b.x).powi(2) + (a.y - b.y).powi(2))
                        .sum::<f64>()
                        / n
                })
                .sum()
        })
        .collect();
    let best = if totals[1] < totals[0] { 2 } else { 1 };
    assert_eq!(v["r"], best);
    let reported = v["total_distance"].as_f64().unwrap();
    assert!((reported - totals[best - 1]).abs() < 1e-12);
}

#[test]
fn missing_file_is_an_input_error() {
    let out = posecraft(&[
        "select-ref",
        "/nonexistent/train.json",
        "/nonexistent/infer.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/train.json"));
}

#[test]
fn malformed_json_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"poses\": [\n  oops\n]}").unwrap();
    let out = posecraft(&["select-ref", p(&bad), p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn selection_failure_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let hidden = PoseLayout::WHOLE_BODY;
    let invisible = Pose::new(hidden, vec![Landmark::new(0.5, 0.5, 0.0); hidden.total()]).unwrap();
    let train = write_poses(dir.path(), "t.json", vec![invisible]);
    let infer = write_poses(dir.path(), "i.json", vec![uniform_pose(0.5, 0.5)]);
    assert_eq!(
        posecraft(&["select-ref", p(&train), p(&infer)])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn fit_affine_identity_and_translation() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_poses(dir.path(), "a.json", vec![uniform_pose(0.3, 0.3)]);
    let b = write_poses(dir.path(), "b.json", vec![uniform_pose(0.35, 0.28)]);
    let v = stdout_json(&posecraft(&["fit-affine", p(&a), p(&a), "--group", "face"]));
    let m = &v["matrix"];
    let expect = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
    for r in 0..2 {
        for c in 0..3 {
            assert!((m[r][c].as_f64().unwrap() - expect[r][c]).abs() < 1e-9);
        }
    }
    let v = stdout_json(&posecraft(&[
        "fit-affine",
        p(&a),
        p(&b),
        "--group",
        "left_hand",
    ]));
    assert!((v["affine"]["c"].as_f64().unwrap() - 0.05).abs() < 1e-6);
    assert!((v["affine"]["f"].as_f64().unwrap() + 0.02).abs() < 1e-6);
    assert_eq!(v["kind"], "full");
}

#[test]
fn metrics_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let zeros = Video::new(1, 1, 2, 2, vec![0.0; 4]).unwrap();
    let tenth = Video::new(1, 1, 2, 2, vec![0.1; 4]).unwrap();
    let a = write_video(dir.path(), "a.pct", &zeros);
    let b = write_video(dir.path(), "b.pct", &tenth);
    let v = stdout_json(&posecraft(&["metrics", p(&a), p(&a), "--metric", "psnr"]));
    assert_eq!(v["value"], "inf");
    let v = stdout_json(&posecraft(&["metrics", p(&a), p(&b), "--metric", "psnr"]));
    // 0.1 is stored as f32, so the MSE is not exactly 0.01.
    let stored = 0.1f32 as f64;
    let oracle = -10.0 * (stored * stored).log10();
    assert!((v["value"].as_f64().unwrap() - oracle).abs() < 1e-12);
    assert!((v["value"].as_f64().unwrap() - 20.0).abs() < 1e-5);

    let s1 = write_poses(
        dir.path(),
        "s1.json",
        vec![uniform_pose(0.1, 0.1), uniform_pose(0.3, 0.2)],
    );
    let v = stdout_json(&posecraft(&[
        "metrics",
        p(&s1),
        p(&s1),
        "--metric",
        "video-sim",
    ]));
    assert_eq!(v["value"].as_f64(), Some(0.0));
    let v = stdout_json(&posecraft(&[
        "metrics",
        p(&s1),
        p(&s1),
        "--metric",
        "mse-p",
    ]));
    assert_eq!(v["value"].as_f64(), Some(0.0));

    let small = write_video(
        dir.path(),
        "small.pct",
        &Video::new(1, 1, 1, 1, vec![0.0]).unwrap(),
    );
    assert_eq!(
        posecraft(&["metrics", p(&a), p(&small), "--metric", "psnr"])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn render_quantization() {
    let dir = tempfile::tempdir().unwrap();
    for (value, byte) in [(0.0, 0u8), (1.0, 255u8)] {
        let src = write_video(
            dir.path(),
            "c.pct",
            &Video::new(1, 1, 3, 4, vec![value; 12]).unwrap(),
        );
        let out = dir.path().join("c.pgm");
        stdout_json(&posecraft(&["render", p(&src), "--out", p(&out)]));
        let bytes = std::fs::read(&out).unwrap();
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(&bytes[bytes.len() - 12..], &[byte; 12]);
    }
    let ramp: Vec<f64> = (0..2)
        .flat_map(|_| (0..8).map(|j| j as f64 / 7.0))
        .collect();
    let src = write_video(
        dir.path(),
        "r.pct",
        &Video::new(1, 1, 2, 8, ramp.clone()).unwrap(),
    );
    let out = dir.path().join("r.pgm");
    stdout_json(&posecraft(&["render", p(&src), "--out", p(&out)]));
    let bytes = std::fs::read(&out).unwrap();
    let pixels = &bytes[bytes.len() - 16..];
    for row in pixels.chunks(8) {
        assert!(row.windows(2).all(|w| w[0] < w[1]));
        for (j, &b) in row.iter().enumerate() {
            let v = (j as f64 / 7.0) as f32 as f64;
            assert_eq!(b, (v * 255.0).round() as u8);
        }
    }
    let rgb = write_video(
        dir.path(),
        "rgb.pct",
        &Video::new(1, 3, 1, 1, vec![1.0, 0.0, 1.0]).unwrap(),
    );
    let out = dir.path().join("rgb.ppm");
    stdout_json(&posecraft(&["render", p(&rgb), "--out", p(&out)]));
    assert_eq!(std::fs::read(&out).unwrap(), b"P6\n1 1\n255\n\xff\x00\xff");
}

fn synthetic_inputs(dir: &Path, n: usize, seed: u64) -> (PathBuf, PathBuf, Video) {
    let v = synthetic_video(n, 16, 16, seed).unwrap();
    let frames = write_video(dir, "train.pct", &v.frames);
    let poses = dir.join("train.json");
    write_pose_file(&poses, &v.poses).unwrap();
    // Frames as the pipeline sees them after the f32 round trip.
    let stored = read_container(&frames).unwrap();
    let frames_back = Video::new(n, 2, 16, 16, stored.into_data()).unwrap();
    (frames, poses, frames_back)
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn identity_run_reconstructs_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let (frames, poses, stored) = synthetic_inputs(dir.path(), 5, 11);
    let train = posecraft::parse_pose_file(&poses).unwrap();
    let r = 4;
    let infer = write_poses(dir.path(), "infer.json", vec![train[r - 1].clone(); 3]);
    let out = dir.path().join("out");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"ddim_steps": 20, "model": {"kind": "constant", "constant_value": 0.1}}"#,
    )
    .unwrap();
    let v = stdout_json(&posecraft(&[
        "run",
        "--train-frames",
        p(&frames),
        "--train-poses",
        p(&poses),
        "--infer-poses",
        p(&infer),
        "--config",
        p(&cfg),
        "--out",
        p(&out),
    ]));
    assert_eq!(v["reference_index"], r);
    assert_eq!(v["output_frames"], 3);
    assert_eq!(
        listing(&out),
        vec!["frames", "latents.pct", "manifest.json", "report.json"]
    );

    let decoded = read_container(out.join("frames/decoded.pct")).unwrap();
    assert_eq!(decoded.shape(), &[3, 2, 16, 16]);
    let reference = stored.frame_data(r - 1);
    for f in decoded.data().chunks(reference.len()) {
        let err = f
            .iter()
            .zip(reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-5, "frame error {err}");
    }
    assert!(out.join("frames/frame_001_c0.pgm").exists());

    let report: Value =
        serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pipeline"]["inversion_count"], 1);
    assert_eq!(report["pipeline"]["sampled_frames"], 4);

    let replay = dir.path().join("replay");
    stdout_json(&posecraft(&[
        "run",
        "--manifest",
        p(&out.join("manifest.json")),
        "--out",
        p(&replay),
    ]));
    assert_eq!(
        std::fs::read(out.join("latents.pct")).unwrap(),
        std::fs::read(replay.join("latents.pct")).unwrap()
    );
}

#[test]
fn trained_run_replays_bit_exactly_and_honors_seed_env() {
    let dir = tempfile::tempdir().unwrap();
    let (frames, poses, _) = synthetic_inputs(dir.path(), 4, 12);
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_posecraft"))
        .args([
            "run",
            "--train-frames",
            p(&frames),
            "--train-poses",
            p(&poses),
            "--infer-poses",
            p(&poses),
            "--ddim-steps",
            "10",
            "--train-steps",
            "5",
            "--seed",
            "3",
            "--out",
            p(&out),
        ])
        .env("POSECRAFT_SEED", "77")
        .output()
        .unwrap();
    stdout_json(&status);
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 77);
    assert_eq!(manifest["config"]["seed"], 77);
    let report: Value =
        serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["training"]["iterations"], 5);

    let replay = dir.path().join("replay");
    stdout_json(&posecraft(&[
        "run",
        "--manifest",
        p(&out.join("manifest.json")),
        "--out",
        p(&replay),
    ]));
    assert_eq!(
        std::fs::read(out.join("latents.pct")).unwrap(),
        std::fs::read(replay.join("latents.pct")).unwrap()
    );

    let mut bytes = std::fs::read(&poses).unwrap();
    bytes.push(b' ');
    std::fs::write(&poses, bytes).unwrap();
    let changed = posecraft(&[
        "run",
        "--manifest",
        p(&out.join("manifest.json")),
        "--out",
        p(&replay),
    ]);
    assert_eq!(changed.status.code(), Some(2));
}

#[test]
fn train_then_run_with_saved_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let (frames, poses, _) = synthetic_inputs(dir.path(), 4, 13);
    let model = dir.path().join("model");
    let v = stdout_json(&posecraft(&[
        "train",
        p(&frames),
        p(&poses),
        "--out",
        p(&model),
        "--train-steps",
        "3",
        "--ddim-steps",
        "10",
    ]));
    assert_eq!(v["iterations"], 3);
    assert!(model.join("params.pct").exists() && model.join("params.json").exists());
    let out = dir.path().join("out");
    stdout_json(&posecraft(&[
        "run",
        "--train-frames",
        p(&frames),
        "--train-poses",
        p(&poses),
        "--infer-poses",
        p(&poses),
        "--params",
        p(&model),
        "--ddim-steps",
        "10",
        "--out",
        p(&out),
    ]));
    let report: Value =
        serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!(report["training"].is_null());
}

#[test]
fn pipeline_failures_keep_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let (frames, poses, _) = synthetic_inputs(dir.path(), 3, 14);
    let out = dir.path().join("out");
    let res = posecraft(&[
        "run",
        "--train-frames",
        p(&frames),
        "--train-poses",
        p(&poses),
        "--infer-poses",
        p(&poses),
        "--model",
        "constant",
        "--ddim-steps",
        "5",
        "--edit-step",
        "6",
        "--out",
        p(&out),
    ]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("validate stage"));
    let report: Value =
        serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["error"]["stage"], "validate");
}

#[test]
fn invert_sample_and_edit_commands() {
    let dir = tempfile::tempdir().unwrap();
    let (frames, poses, stored) = synthetic_inputs(dir.path(), 2, 15);
    let zt = dir.path().join("zt.pct");
    let common = ["--model", "constant", "--ddim-steps", "10"];
    let mut args = vec!["invert", p(&frames), p(&poses), "--out", p(&zt)];
    args.extend(common);
    stdout_json(&posecraft(&args));
    let back = dir.path().join("back.pct");
    let mut args = vec!["sample", p(&zt), p(&poses), "--out", p(&back), "--decode"];
    args.extend(common);
    stdout_json(&posecraft(&args));
    let rec = read_container(&back).unwrap();
    let err = rec
        .data()
        .iter()
        .zip(&stored.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-5, "round trip error {err}");

    let grid = dir.path().join("grid.pct");
    let g: Vec<f64> = (0..2 * 8 * 8).map(|i| (i % 13) as f64 / 13.0).collect();
    write_container(&grid, &[2, 8, 8], &g).unwrap();
    let edited = dir.path().join("edited.pct");
    let v = stdout_json(&posecraft(&[
        "edit-latent",
        p(&grid),
        p(&poses),
        p(&poses),
        "--out",
        p(&edited),
    ]));
    assert_eq!(v["groups"].as_array().unwrap().len(), 3);
    assert_eq!(
        std::fs::read(&grid).unwrap(),
        std::fs::read(&edited).unwrap()
    );
}
