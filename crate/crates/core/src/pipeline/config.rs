use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentationStack;
use crate::cluster::{DEFAULT_COLOR_CLUSTERS, DEFAULT_SPATIAL_CLUSTERS};
use crate::error::{Error, Result};
use crate::geometry::{Camera, Pose};
use crate::noise::{ImageAugConfig, PoseNoiseConfig};
use crate::render::DEFAULT_TILE_SIZE;

pub const MIN_RESOLUTION: u32 = 16;

/// Pinhole intrinsics and placement. The image size comes from
/// [`JobConfig::resolution`]; a missing principal point defaults to the
/// image center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    #[serde(default)]
    pub cx: Option<f64>,
    #[serde(default)]
    pub cy: Option<f64>,
    #[serde(default = "Pose::identity")]
    pub world_from_camera: Pose,
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
}

fn default_near() -> f64 {
    0.01
}
fn default_far() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BackgroundSpec {
    /// Linear RGB in `[0, 1]`.
    Color([f32; 3]),
    /// PNG with the job's resolution.
    Image(PathBuf),
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        BackgroundSpec::Color([0.0; 3])
    }
}

fn default_resolution() -> [u32; 2] {
    [120, 120]
}
fn default_stack() -> serde_json::Value {
    serde_json::Value::String("table1".into())
}
fn default_tile() -> u32 {
    DEFAULT_TILE_SIZE
}
fn default_spatial() -> usize {
    DEFAULT_SPATIAL_CLUSTERS
}
fn default_color() -> usize {
    DEFAULT_COLOR_CLUSTERS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    /// Gaussian scene (`.ply`).
    pub scene: PathBuf,
    /// Occluder meshes (`.obj`), one pose per mesh in each trajectory frame.
    #[serde(default)]
    pub occluders: Vec<PathBuf>,
    /// JSONL trajectory, one [`super::TrajectoryFrame`] per line.
    pub trajectory: PathBuf,
    pub camera: CameraSpec,
    /// `[width, height]`.
    #[serde(default = "default_resolution")]
    pub resolution: [u32; 2],
    /// Stack name, path to a stack file, or an inline stack.
    #[serde(default = "default_stack")]
    pub augmentation: serde_json::Value,
    #[serde(default)]
    pub image_augmentation: Option<ImageAugConfig>,
    #[serde(default)]
    pub pose_noise: Option<PoseNoiseConfig>,
    #[serde(default)]
    pub background: BackgroundSpec,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_tile")]
    pub tile_size: u32,
    #[serde(default = "default_spatial")]
    pub spatial_clusters: usize,
    #[serde(default = "default_color")]
    pub color_clusters: usize,
    /// Optional sidecar file for cluster assignments.
    #[serde(default)]
    pub cluster_cache: Option<PathBuf>,
}

impl JobConfig {
    /// Reads a config file. Relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.scene);
        fix(&mut self.trajectory);
        fix(&mut self.output_dir);
        self.occluders.iter_mut().for_each(fix);
        if let BackgroundSpec::Image(p) = &mut self.background {
            fix(p);
        }
        if let Some(p) = &mut self.cluster_cache {
            fix(p);
        }
        if let serde_json::Value::String(s) = &mut self.augmentation {
            if AugmentationStack::named(s).is_err() && Path::new(s.as_str()).is_relative() {
                *s = base.join(&*s).to_string_lossy().into_owned();
            }
        }
    }

    pub fn stack(&self) -> Result<AugmentationStack> {
        match &self.augmentation {
            serde_json::Value::String(s) => AugmentationStack::load(s),
            v => AugmentationStack::from_value(v.clone()),
        }
    }

    pub fn camera(&self) -> Result<Camera> {
        let [w, h] = self.resolution;
        let c = &self.camera;
        let cam = Camera {
            width: w,
            height: h,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx.unwrap_or(w as f64 / 2.0),
            cy: c.cy.unwrap_or(h as f64 / 2.0),
            world_from_camera: c.world_from_camera,
            near: c.near,
            far: c.far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.resolution;
        if w < MIN_RESOLUTION || h < MIN_RESOLUTION {
            return Err(Error::Config(format!(
                "resolution {w}x{h} below the {MIN_RESOLUTION}x{MIN_RESOLUTION} minimum"
            )));
        }
        if self.tile_size == 0 {
            return Err(Error::Config("tile_size must be positive".into()));
        }
        if self.spatial_clusters == 0 || self.color_clusters == 0 {
            return Err(Error::Config("cluster counts must be positive".into()));
        }
        let mut files = vec![("scene", &self.scene), ("trajectory", &self.trajectory)];
        files.extend(self.occluders.iter().map(|p| ("occluder", p)));
        if let BackgroundSpec::Image(p) = &self.background {
            files.push(("background", p));
        }
        for (what, p) in files {
            if !p.is_file() {
                return Err(Error::Config(format!("{what} file {} does not exist", p.display())));
            }
        }
        if let BackgroundSpec::Color(c) = self.background {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config(format!("background color {c:?} outside [0, 1]")));
            }
        }
        self.camera()?;
        self.stack()?;
        if let Some(c) = &self.image_augmentation {
            c.validate()?;
        }
        if let Some(c) = &self.pose_noise {
            c.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the config with sorted keys, excluding the output
    /// directory. Independent of key order in the source file.
    pub fn hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(m) = v.as_object_mut() {
            m.remove("output_dir");
        }
        let bytes = serde_json::to_vec(&canonical(v))?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

/// Rebuilds every object with keys in sorted order.
fn canonical(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Object(m) => {
            let mut entries: Vec<(String, Value)> = m.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, canonical(v))).collect())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonical).collect()),
        other => other,
    }
}
