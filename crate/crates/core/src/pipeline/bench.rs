use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::{apply_stack, apply_stack_into, AugmentationStack};
use crate::cluster::{color_clusters, spatial_clusters, DEFAULT_COLOR_CLUSTERS, DEFAULT_SPATIAL_CLUSTERS};
use crate::error::{Error, Result};
use crate::geometry::{Camera, Pose};
use crate::render::{object_centric_camera, rasterize, DEFAULT_TILE_SIZE};
use crate::scene::{scene_stats, GaussianScene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_ms: f64,
    pub median_ms: f64,
}

impl Timing {
    fn from_samples(mut ms: Vec<f64>) -> Self {
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let median = if n % 2 == 1 { ms[n / 2] } else { 0.5 * (ms[n / 2 - 1] + ms[n / 2]) };
        Timing {
            mean_ms: ms.iter().sum::<f64>() / n as f64,
            median_ms: median,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub gaussians: usize,
    pub width: u32,
    pub height: u32,
    pub iterations: usize,
    pub threads: usize,
    pub layers: usize,
    /// Augmentation into a reused per-frame scene buffer.
    pub apply_stack: Timing,
    /// Augmentation into a freshly allocated scene.
    pub apply_stack_alloc: Timing,
    pub rasterize: Timing,
    /// Mean `apply_stack` time over mean `rasterize` time.
    pub ratio: f64,
}

/// Camera at the origin looking down +z with the scene centered in view and
/// filling most of the frame.
pub fn framing_camera(scene: &GaussianScene, width: u32, height: u32) -> (Camera, Pose) {
    let st = scene_stats(scene);
    let radius = ((st.aabb_max - st.aabb_min).norm() / 2.0).max(1e-3);
    let f = 1.2 * width.min(height) as f64;
    let distance = radius * f / (0.45 * width.min(height) as f64);
    let cam = Camera::centered(width, height, f, f);
    let c = st.centroid;
    let pose = Pose::from_translation([-c.x, -c.y, distance - c.z]);
    (cam, pose)
}

/// Times `apply_stack` and `rasterize` separately over `iterations` runs.
/// Clustering happens once up front and is not timed.
pub fn bench(
    scene: &GaussianScene,
    stack: &AugmentationStack,
    iterations: usize,
    width: u32,
    height: u32,
) -> Result<BenchReport> {
    if iterations == 0 {
        return Err(Error::Config("iterations must be at least 1".into()));
    }
    stack.validate()?;
    let spatial = spatial_clusters(scene, DEFAULT_SPATIAL_CLUSTERS, 0)?;
    let color = color_clusters(scene, DEFAULT_COLOR_CLUSTERS, 0)?;
    let (cam, pose) = framing_camera(scene, width, height);
    let cam = object_centric_camera(&cam, &pose);

    // One untimed warm-up of each; `frame` is the reused output buffer.
    let mut frame = apply_stack(scene, &spatial, &color, stack, u64::MAX)?;
    rasterize(&frame, &cam, DEFAULT_TILE_SIZE)?;

    let mut aug_ms = Vec::with_capacity(iterations);
    let mut alloc_ms = Vec::with_capacity(iterations);
    let mut ren_ms = Vec::with_capacity(iterations);
    for i in 0..iterations {
        let seed = i as u64;
        let t = Instant::now();
        std::hint::black_box(apply_stack(scene, &spatial, &color, stack, seed)?);
        alloc_ms.push(t.elapsed().as_secs_f64() * 1e3);
        let t = Instant::now();
        apply_stack_into(scene, &spatial, &color, stack, seed, &mut frame)?;
        aug_ms.push(t.elapsed().as_secs_f64() * 1e3);
        let t = Instant::now();
        let out = rasterize(&frame, &cam, DEFAULT_TILE_SIZE)?;
        ren_ms.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    let apply_stack = Timing::from_samples(aug_ms);
    let apply_stack_alloc = Timing::from_samples(alloc_ms);
    let rasterize = Timing::from_samples(ren_ms);
    Ok(BenchReport {
        gaussians: scene.len(),
        width,
        height,
        iterations,
        threads: crate::par::current_threads(),
        layers: stack.layers.len(),
        ratio: apply_stack.mean_ms / rasterize.mean_ms,
        apply_stack,
        apply_stack_alloc,
        rasterize,
    })
}
