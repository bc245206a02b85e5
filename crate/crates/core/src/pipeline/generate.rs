use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{BackgroundSpec, JobConfig};
use crate::augment::{apply_stack, AugmentationStack};
use crate::cluster::{spatial_clusters, color_clusters, ClusterAssignment, ClusterCache, ClusterKind};
use crate::composite::{composite_frame, load_obj, occlusion_mask, raycast_depth, Background, DepthMap, TriangleMesh};
use crate::error::{Error, Result};
use crate::geometry::{Camera, Pose};
use crate::imageio::{read_rgb_png, write_depth_pfm, write_mask_png, write_rgb_png};
use crate::labels::{canonical_keypoints, project_keypoints, KeypointSet, LabelRecord};
use crate::noise::pose::{init_episode, write_pose_stream, PoseStreamRecord};
use crate::noise::{augment_image, corrupt_stream};
use crate::par;
use crate::render::{object_centric_camera, rasterize};
use crate::rng::{derive_seed, SplitMix64};
use crate::scene::{load_ply, GaussianScene};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const INCOMPLETE_MARKER: &str = ".incomplete";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const NOISY_POSES_FILE: &str = "noisy_poses.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Stage keys for per-frame random streams.
pub const STAGE_AUGMENT: u64 = 0;
pub const STAGE_IMAGE: u64 = 1;
const STAGE_POSE_NOISE: u64 = 2;
const STAGE_CLUSTER: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFrame {
    pub frame_id: u64,
    /// World placement of the object.
    pub object_pose: Pose,
    #[serde(default)]
    pub occluder_poses: Vec<Pose>,
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryFrame>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut frames: Vec<TrajectoryFrame> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: TrajectoryFrame = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(prev) = frames.last() {
            if f.frame_id <= prev.frame_id {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("frame_id {} does not increase after {}", f.frame_id, prev.frame_id),
                });
            }
        }
        frames.push(f);
    }
    if frames.is_empty() {
        return Err(Error::Validation(format!("trajectory {} is empty", path.display())));
    }
    Ok(frames)
}

pub fn write_trajectory(path: &Path, frames: &[TrajectoryFrame]) -> Result<()> {
    let mut out = Vec::new();
    for f in frames {
        serde_json::to_writer(&mut out, f)?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub frame_id: u64,
    pub image: String,
    pub depth: String,
    pub mask: String,
    pub label: String,
    /// Zero-based line of this frame's record in `label`.
    pub label_line: usize,
    pub occlusion_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub scene_hash: String,
    pub master_seed: u64,
    pub tool_version: String,
    pub noisy_poses: Option<String>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Everything a frame needs, loaded once per job.
pub struct PreparedJob {
    pub config: JobConfig,
    pub scene: GaussianScene,
    pub keypoints: KeypointSet,
    pub spatial: ClusterAssignment,
    pub color: ClusterAssignment,
    pub stack: AugmentationStack,
    pub occluders: Vec<TriangleMesh>,
    pub camera: Camera,
    pub background: Background,
    pub trajectory: Vec<TrajectoryFrame>,
}

impl PreparedJob {
    pub fn new(config: JobConfig) -> Result<Self> {
        config.validate()?;
        let scene = load_ply(&config.scene)?;
        let trajectory = read_trajectory(&config.trajectory)?;
        for f in &trajectory {
            if f.occluder_poses.len() != config.occluders.len() {
                return Err(Error::Frame {
                    frame_id: f.frame_id,
                    source: Box::new(Error::Validation(format!(
                        "{} occluder poses for {} occluder meshes",
                        f.occluder_poses.len(),
                        config.occluders.len()
                    ))),
                });
            }
        }
        let occluders = config.occluders.iter().map(load_obj).collect::<Result<Vec<_>>>()?;
        let camera = config.camera()?;
        let background = match &config.background {
            BackgroundSpec::Color(c) => Background::Color(*c),
            BackgroundSpec::Image(p) => {
                let (width, height, pixels) = read_rgb_png(p)?;
                if [width, height] != config.resolution {
                    return Err(Error::DimensionMismatch {
                        expected: format!("{}x{} background", camera.width, camera.height),
                        actual: format!("{width}x{height}"),
                    });
                }
                Background::Image { width, height, pixels }
            }
        };
        let stack = config.stack()?;
        let cluster_seed = derive_seed(config.seed, &[STAGE_CLUSTER]);
        let (spatial, color) = match &config.cluster_cache {
            Some(path) => {
                let mut cache = if path.is_file() { ClusterCache::load(path)? } else { ClusterCache::default() };
                let s = cache.get_or_compute(&scene, ClusterKind::Spatial, config.spatial_clusters, cluster_seed)?;
                let c = cache.get_or_compute(&scene, ClusterKind::Color, config.color_clusters, cluster_seed)?;
                cache.save(path)?;
                (s, c)
            }
            None => (
                spatial_clusters(&scene, config.spatial_clusters, cluster_seed)?,
                color_clusters(&scene, config.color_clusters, cluster_seed)?,
            ),
        };
        Ok(Self {
            keypoints: canonical_keypoints(&scene),
            config,
            scene,
            spatial,
            color,
            stack,
            occluders,
            camera,
            background,
            trajectory,
        })
    }
}

/// Pixel data and label for one frame, before anything is written.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub frame_id: u64,
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<[f32; 3]>,
    pub depth: Vec<f32>,
    pub mask: Vec<bool>,
    pub label: LabelRecord,
}

pub fn render_frame(job: &PreparedJob, frame: &TrajectoryFrame) -> Result<FrameOutput> {
    let cfg = &job.config;
    let seed = cfg.seed;
    let id = frame.frame_id;
    let scene = apply_stack(
        &job.scene,
        &job.spatial,
        &job.color,
        &job.stack,
        derive_seed(seed, &[id, STAGE_AUGMENT]),
    )?;
    let cam = object_centric_camera(&job.camera, &frame.object_pose);
    let render = rasterize(&scene, &cam, cfg.tile_size)?;

    let mut d_phys = DepthMap::empty(job.camera.width, job.camera.height);
    for (mesh, pose) in job.occluders.iter().zip(&frame.occluder_poses) {
        d_phys.merge_nearest(&raycast_depth(mesh, pose, &job.camera)?)?;
    }
    let occlusion = occlusion_mask(&d_phys, &render)?;
    let composite = composite_frame(&render, &occlusion, &job.background)?;
    let depth = render.depth.iter().zip(&d_phys.depth).map(|(&a, &b)| a.min(b)).collect();

    let (rgb, mask) = match &cfg.image_augmentation {
        Some(aug) => augment_image(
            &composite.rgb,
            &composite.object_mask,
            composite.width,
            composite.height,
            aug,
            &mut SplitMix64::keyed(seed, &[id, STAGE_IMAGE]),
        )?,
        None => (composite.rgb, composite.object_mask),
    };

    let pose = Pose::from_isometry(&job.camera.camera_from_world()).compose(&frame.object_pose);
    let keypoints = project_keypoints(&job.keypoints, &frame.object_pose, &job.camera).to_vec();
    Ok(FrameOutput {
        frame_id: id,
        width: render.width,
        height: render.height,
        rgb,
        depth,
        mask,
        label: LabelRecord {
            frame_id: id,
            pose,
            keypoints,
            occlusion_ratio: occlusion.occlusion_ratio,
        },
    })
}

fn frame_files(frame_id: u64) -> [String; 3] {
    [
        format!("rgb/{frame_id:06}.png"),
        format!("depth/{frame_id:06}.pfm"),
        format!("mask/{frame_id:06}.png"),
    ]
}

fn write_frame(dir: &Path, out: &FrameOutput) -> Result<()> {
    let [rgb, depth, mask] = frame_files(out.frame_id);
    write_rgb_png(&dir.join(rgb), out.width, out.height, &out.rgb)?;
    write_depth_pfm(&dir.join(depth), out.width, out.height, &out.depth)?;
    write_mask_png(&dir.join(mask), out.width, out.height, &out.mask)
}

/// Runs a whole job and returns the manifest it wrote. On failure the
/// output directory keeps an `.incomplete` marker describing the error.
pub fn generate(config: JobConfig) -> Result<Manifest> {
    let dir = config.output_dir.clone();
    for sub in ["", "rgb", "depth", "mask"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let marker = dir.join(INCOMPLETE_MARKER);
    fs::write(&marker, b"generation in progress\n").map_err(|e| Error::io(&marker, e))?;
    match run(config, &dir) {
        Ok(m) => {
            fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
            Ok(m)
        }
        Err(e) => {
            let _ = fs::write(&marker, format!("{e}\n"));
            Err(e)
        }
    }
}

fn run(config: JobConfig, dir: &Path) -> Result<Manifest> {
    let config_hash = config.hash()?;
    let job = PreparedJob::new(config)?;
    log::info!(
        "generating {} frames from {} Gaussians",
        job.trajectory.len(),
        job.scene.len()
    );
    let results = par::map_range(job.trajectory.len(), |i| {
        let frame = &job.trajectory[i];
        render_frame(&job, frame)
            .and_then(|out| write_frame(dir, &out).map(|_| out.label))
            .map_err(|e| Error::Frame {
                frame_id: frame.frame_id,
                source: Box::new(e),
            })
    });
    let labels = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut text = Vec::new();
    for l in &labels {
        serde_json::to_writer(&mut text, l)?;
        text.push(b'\n');
    }
    let labels_path = dir.join(LABELS_FILE);
    write_all(&labels_path, &text)?;

    let noisy_poses = match &job.config.pose_noise {
        Some(cfg) => {
            let mut rng = SplitMix64::keyed(job.config.seed, &[STAGE_POSE_NOISE]);
            let mut state = init_episode(cfg, &mut rng)?;
            let clean: Vec<Pose> = labels.iter().map(|l| l.pose).collect();
            let noisy = corrupt_stream(&clean, &mut state, &mut rng)?;
            let records: Vec<_> = labels
                .iter()
                .zip(&noisy)
                .map(|(l, p)| PoseStreamRecord::new(l.frame_id, p))
                .collect();
            write_pose_stream(&dir.join(NOISY_POSES_FILE), &records)?;
            Some(NOISY_POSES_FILE.to_string())
        }
        None => None,
    };

    let entries = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let [image, depth, mask] = frame_files(l.frame_id);
            ManifestEntry {
                frame_id: l.frame_id,
                image,
                depth,
                mask,
                label: LABELS_FILE.into(),
                label_line: i,
                occlusion_ratio: l.occlusion_ratio,
            }
        })
        .collect();
    let manifest = Manifest {
        config_hash,
        scene_hash: job.scene.content_hash(),
        master_seed: job.config.seed,
        tool_version: TOOL_VERSION.into(),
        noisy_poses,
        entries,
    };
    write_all(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

fn write_all(path: &PathBuf, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
