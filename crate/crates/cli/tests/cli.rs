use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use splatsynth::pipeline::{write_trajectory, TrajectoryFrame};
use splatsynth::scene::save_ply;
use splatsynth::synth::synthetic_object;
use splatsynth::Pose;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatsynth"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Scene, three-frame trajectory and job config in `dir`.
fn job(dir: &Path) -> PathBuf {
    save_ply(&synthetic_object(1500, 2), dir.join("object.ply")).unwrap();
    let frames: Vec<TrajectoryFrame> = (0..3)
        .map(|i| {
            let mut pose = Pose::from_axis_angle([0.0, 1.0, 0.0], 0.3 * i as f64);
            pose.position = [0.0, 0.0, 0.35].into();
            TrajectoryFrame {
                frame_id: i,
                object_pose: pose,
                occluder_poses: vec![],
            }
        })
        .collect();
    write_trajectory(&dir.join("trajectory.jsonl"), &frames).unwrap();
    let cfg = json!({
        "scene": "object.ply",
        "trajectory": "trajectory.jsonl",
        "camera": {"fx": 100.0, "fy": 100.0},
        "resolution": [48, 48],
        "seed": 3,
        "output_dir": "out",
        "spatial_clusters": 8,
        "color_clusters": 4
    });
    let path = dir.join("job.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn generate_succeeds_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = job(tmp.path());
    let out = run(&["generate", "--config", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let again = tmp.path().join("again");
    let out = run(&["generate", "--config", s(&cfg), "--out", s(&again)]);
    assert_eq!(code(&out), 0);
    let m1: Value = serde_json::from_slice(&fs::read(tmp.path().join("out/manifest.json")).unwrap()).unwrap();
    let m2: Value = serde_json::from_slice(&fs::read(again.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(m1["entries"].as_array().unwrap().len(), 3);
    assert_eq!(
        fs::read(tmp.path().join("out/labels.jsonl")).unwrap(),
        fs::read(again.join("labels.jsonl")).unwrap()
    );
}

#[test]
fn bad_config_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = job(tmp.path());
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    v["resolution"] = json!([8, 8]);
    fs::write(&cfg, v.to_string()).unwrap();
    let out = run(&["generate", "--config", s(&cfg)]);
    assert_eq!(code(&out), 2);
    let marker = fs::read_to_string(tmp.path().join("out").join(".incomplete")).unwrap();
    assert!(marker.contains("resolution"), "{marker}");
}

#[test]
fn missing_input_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "augment",
        "--scene",
        s(&tmp.path().join("absent.ply")),
        "--out",
        s(&tmp.path().join("x.ply")),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn corrupt_pass_through_then_eval_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = job(tmp.path());
    assert_eq!(code(&run(&["generate", "--config", s(&cfg)])), 0);
    let labels = tmp.path().join("out/labels.jsonl");
    let noise = tmp.path().join("noise.json");
    fs::write(
        &noise,
        serde_json::to_string(&splatsynth::noise::pose::PoseNoiseConfig::pass_through()).unwrap(),
    )
    .unwrap();
    let noisy = tmp.path().join("noisy.jsonl");
    let out = run(&["corrupt", "--poses", s(&labels), "--config", s(&noise), "--seed", "4", "--out", s(&noisy)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let report = tmp.path().join("report.json");
    let out = run(&[
        "eval",
        "--pred",
        s(&noisy),
        "--gt",
        s(&labels),
        "--model-points",
        s(&tmp.path().join("object.ply")),
        "--out",
        s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["add_mm_mean"], json!(0.0));
    assert_eq!(r["accuracy_pct"], json!(100.0));
}

#[test]
fn augment_and_render_write_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    job(tmp.path());
    let scene = tmp.path().join("object.ply");
    let aug = tmp.path().join("aug.ply");
    let cache = tmp.path().join("clusters.json");
    let args = ["augment", "--scene", s(&scene), "--seed", "7", "--out", s(&aug), "--cluster-cache", s(&cache)];
    assert_eq!(code(&run(&args)), 0);
    assert!(cache.is_file());
    let first = fs::read(&aug).unwrap();
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(fs::read(&aug).unwrap(), first);

    let camera = tmp.path().join("camera.json");
    fs::write(&camera, json!({"width": 40, "height": 30, "fx": 80.0, "fy": 80.0, "cx": 20.0, "cy": 15.0}).to_string())
        .unwrap();
    let pose = tmp.path().join("pose.json");
    fs::write(&pose, json!({"position_m": [0.0, 0.0, 0.3], "quaternion_wxyz": [1, 0, 0, 0]}).to_string()).unwrap();
    let view = tmp.path().join("view");
    let out = run(&["render", "--scene", s(&aug), "--camera", s(&camera), "--pose", s(&pose), "--out", s(&view)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["rgb.png", "depth.pfm", "mask.png"] {
        assert!(view.join(f).is_file());
    }
}

#[test]
fn bench_reports_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("bench.json");
    let out = run(&[
        "bench",
        "--gaussians",
        "2000",
        "--iterations",
        "2",
        "--resolution",
        "32",
        "32",
        "--threads",
        "1",
        "--out",
        s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert!(r["ratio"].as_f64().unwrap() > 0.0);
    assert_eq!(r["gaussians"], json!(2000));
    let out = run(&["bench", "--iterations", "0", "--gaussians", "100", "--out", s(&report)]);
    assert_eq!(code(&out), 2);
}
