#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use splatsynth::pipeline::{write_trajectory, TrajectoryFrame};
use splatsynth::scene::{save_ply, GaussianScene, SH_REST_LEN};
use splatsynth::synth::synthetic_object;
use splatsynth::{Pose, SplitMix64};

pub const FOCAL: f64 = 150.0;

/// Scene from explicit columns with identity rotations and zero SHN.
pub fn scene_of(positions: &[[f32; 3]], log_scale: f32, opacity_logit: f32, sh0: [f32; 3]) -> GaussianScene {
    let n = positions.len();
    GaussianScene::from_columns(
        positions.to_vec(),
        vec![[1.0, 0.0, 0.0, 0.0]; n],
        vec![[log_scale; 3]; n],
        vec![opacity_logit; n],
        vec![sh0; n],
        vec![[0.0; SH_REST_LEN]; n],
    )
    .unwrap()
}

/// Random scene with arbitrary rotations, scales and SH, inside a 10 cm cube.
pub fn random_scene(n: usize, seed: u64) -> GaussianScene {
    let mut rng = SplitMix64::new(seed);
    let mut u = |lo: f64, hi: f64| rng.uniform_range(lo, hi) as f32;
    let positions = (0..n).map(|_| [u(-0.05, 0.05), u(-0.05, 0.05), u(-0.05, 0.05)]).collect();
    let rotations = (0..n).map(|_| [u(0.1, 1.0), u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0)]).collect();
    let log_scales = (0..n).map(|_| [u(-5.5, -4.0), u(-5.5, -4.0), u(-5.5, -4.0)]).collect();
    let opacity_logits = (0..n).map(|_| u(-1.0, 4.0)).collect();
    let sh0 = (0..n).map(|_| [u(-1.5, 1.5), u(-1.5, 1.5), u(-1.5, 1.5)]).collect();
    let sh_rest = (0..n)
        .map(|_| {
            let mut r = [0f32; SH_REST_LEN];
            r.iter_mut().for_each(|v| *v = u(-0.3, 0.3));
            r
        })
        .collect();
    GaussianScene::from_columns(positions, rotations, log_scales, opacity_logits, sh0, sh_rest).unwrap()
}

/// Object pose for frame `i`: in front of the camera, turning and drifting.
pub fn trajectory_pose(i: u64) -> Pose {
    let t = i as f64;
    let mut p = Pose::from_axis_angle([0.3, 1.0, 0.2], 0.15 * t);
    p.position = [0.01 * (0.4 * t).sin(), 0.008 * (0.3 * t).cos(), 0.35 + 0.002 * t].into();
    p
}

pub struct JobFixture {
    pub dir: PathBuf,
    pub config_path: PathBuf,
    pub config: Value,
}

pub struct JobOptions {
    pub frames: u64,
    pub gaussians: usize,
    pub occluder: bool,
    pub stack: Value,
    pub image_augmentation: Option<Value>,
    pub pose_noise: Option<Value>,
    pub resolution: [u32; 2],
}

impl Default for JobOptions {
    fn default() -> Self {
        Self {
            frames: 4,
            gaussians: 2000,
            occluder: true,
            stack: json!("table1"),
            image_augmentation: Some(json!({})),
            pose_noise: Some(json!({})),
            resolution: [64, 64],
        }
    }
}

const OCCLUDER_OBJ: &str = "# thin bar\nv -0.008 -0.2 0\nv 0.008 -0.2 0\nv 0.008 0.2 0\nv -0.008 0.2 0\nf 1 2 3 4\n";

/// Writes scene, occluder, trajectory and config into `dir`.
pub fn write_job(dir: &Path, opts: &JobOptions) -> JobFixture {
    fs::create_dir_all(dir).unwrap();
    save_ply(&synthetic_object(opts.gaussians, 11), dir.join("object.ply")).unwrap();
    let frames: Vec<TrajectoryFrame> = (0..opts.frames)
        .map(|i| TrajectoryFrame {
            frame_id: i * 2 + 1,
            object_pose: trajectory_pose(i),
            occluder_poses: if opts.occluder {
                vec![Pose::from_translation([-0.04 + 0.01 * i as f64, 0.0, 0.3])]
            } else {
                vec![]
            },
        })
        .collect();
    write_trajectory(&dir.join("trajectory.jsonl"), &frames).unwrap();
    let mut config = json!({
        "scene": "object.ply",
        "trajectory": "trajectory.jsonl",
        "camera": {"fx": FOCAL, "fy": FOCAL},
        "resolution": opts.resolution,
        "augmentation": opts.stack,
        "background": {"color": [0.2, 0.3, 0.4]},
        "seed": 1234,
        "output_dir": "out",
    });
    if opts.occluder {
        fs::write(dir.join("bar.obj"), OCCLUDER_OBJ).unwrap();
        config["occluders"] = json!(["bar.obj"]);
    }
    if let Some(v) = &opts.image_augmentation {
        config["image_augmentation"] = v.clone();
    }
    if let Some(v) = &opts.pose_noise {
        config["pose_noise"] = v.clone();
    }
    let config_path = dir.join("job.json");
    fs::write(&config_path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    JobFixture {
        dir: dir.to_path_buf(),
        config_path,
        config,
    }
}

/// Every file under `dir`, relative path and contents, sorted by path.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
