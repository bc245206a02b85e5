//! Tile-based Gaussian splat rasterizer producing RGB, alpha and depth.
//!
//! Gaussians are projected with the local affine (EWA) approximation of the
//! pinhole map, sorted front-to-back by camera depth (ties by index), binned
//! into square tiles and alpha-composited per pixel. Tiles are rendered in
//! parallel; a pixel's compositing order depends only on the global sort.

use nalgebra::{Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Pose};
use crate::par;
use crate::scene::GaussianScene;
use crate::sh;

pub const DEFAULT_TILE_SIZE: u32 = 16;
/// Low-pass dilation added to the projected covariance diagonal, pixels².
pub const COV_FLOOR: f64 = 0.3;
pub const MAX_SPLAT_ALPHA: f64 = 0.99;
pub const MIN_SPLAT_ALPHA: f64 = 1.0 / 255.0;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Accumulated weight needed for a depth estimate to be reported.
pub const DEPTH_VALID_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<[f32; 3]>,
    pub alpha: Vec<f32>,
    /// Camera-frame z in meters; `+∞` where the depth estimate is invalid.
    pub depth: Vec<f32>,
}

impl RenderOutput {
    pub fn blank(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            rgb: vec![[0.0; 3]; n],
            alpha: vec![0.0; n],
            depth: vec![f32::INFINITY; n],
        }
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Continuous pixel coordinates of the mean.
    pub mean2d: [f64; 2],
    /// Image-space covariance including the low-pass floor.
    pub cov2d: [[f64; 2]; 2],
    pub depth: f64,
}

/// Returns a copy of `camera` whose placement is `object_pose⁻¹ ∘ world_from_camera`.
///
/// Rendering a static scene from the returned camera is equivalent to
/// rendering the scene moved by `object_pose` from `camera`.
pub fn object_centric_camera(camera: &Camera, object_pose: &Pose) -> Camera {
    let mut out = camera.clone();
    out.world_from_camera = object_pose.inverse().compose(&camera.world_from_camera);
    out
}

/// Rigidly moves every Gaussian by `pose`: positions are transformed,
/// orientations rotated, and view-dependent SH bands rotated with the object.
pub fn transform_scene(scene: &GaussianScene, pose: &Pose) -> GaussianScene {
    let mut out = scene.clone();
    let sh_rot = sh::sh_rotation(&pose.rotation_matrix());
    for i in 0..out.len() {
        let p = pose.transform_point(&scene.position(i));
        out.positions[i] = [p.x as f32, p.y as f32, p.z as f32];
        let q = scene.rotations[i];
        let rq = UnitQuaternion::new_unchecked(Quaternion::new(q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64));
        let r = (pose.orientation * rq).into_inner();
        out.rotations[i] = [r.w as f32, r.i as f32, r.j as f32, r.k as f32];
        out.sh_rest[i] = sh_rot.apply(&scene.sh_rest[i]);
    }
    out
}

fn rotation_from_wxyz(q: &[f32; 4]) -> Matrix3<f64> {
    let q = UnitQuaternion::new_normalize(Quaternion::new(q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64));
    q.to_rotation_matrix().into_inner()
}

struct Projector {
    rot_cw: Matrix3<f64>,
    trans_cw: Vector3<f64>,
    camera: Camera,
}

impl Projector {
    fn new(camera: &Camera) -> Self {
        let cw = camera.camera_from_world();
        Self {
            rot_cw: cw.rotation.to_rotation_matrix().into_inner(),
            trans_cw: cw.translation.vector,
            camera: camera.clone(),
        }
    }

    fn project(&self, position: &Vector3<f64>, rotation: &[f32; 4], log_scale: &[f32; 3]) -> Option<Projection> {
        let cam = &self.camera;
        let p = self.rot_cw * position + self.trans_cw;
        let z = p.z;
        if !(z >= cam.near && z <= cam.far) {
            return None;
        }
        let r = rotation_from_wxyz(rotation);
        let s = Vector3::new(
            (log_scale[0] as f64).exp(),
            (log_scale[1] as f64).exp(),
            (log_scale[2] as f64).exp(),
        );
        let m = r * Matrix3::from_diagonal(&s);
        let cov_world = m * m.transpose();
        let cov_cam = self.rot_cw * cov_world * self.rot_cw.transpose();
        let j = Matrix2x3::new(
            cam.fx / z,
            0.0,
            -cam.fx * p.x / (z * z),
            0.0,
            cam.fy / z,
            -cam.fy * p.y / (z * z),
        );
        let c = j * cov_cam * j.transpose();
        let cov2d = [
            [c[(0, 0)] + COV_FLOOR, 0.5 * (c[(0, 1)] + c[(1, 0)])],
            [0.5 * (c[(0, 1)] + c[(1, 0)]), c[(1, 1)] + COV_FLOOR],
        ];
        let (u, v) = cam.project(&p);
        Some(Projection {
            mean2d: [u, v],
            cov2d,
            depth: z,
        })
    }
}

/// Projects a single Gaussian. `None` means culled: outside the clip range
/// or with a footprint that misses the image entirely.
pub fn project_gaussian(
    position: &Vector3<f64>,
    rotation: &[f32; 4],
    log_scale: &[f32; 3],
    camera: &Camera,
) -> Option<Projection> {
    let proj = Projector::new(camera).project(position, rotation, log_scale)?;
    // Without an opacity, bound the footprint at the largest possible cutoff.
    let extent_q = 2.0 * (255.0f64).ln();
    pixel_bounds(&proj, extent_q, camera).map(|_| proj)
}

/// Inclusive pixel rectangle whose centers fall inside the ellipse
/// `xᵀ Σ⁻¹ x ≤ q`, clipped to the image. `None` if empty.
fn pixel_bounds(proj: &Projection, q: f64, camera: &Camera) -> Option<[u32; 4]> {
    let ex = (q * proj.cov2d[0][0]).sqrt();
    let ey = (q * proj.cov2d[1][1]).sqrt();
    let [mx, my] = proj.mean2d;
    let x0 = (mx - ex - 0.5).ceil().max(0.0);
    let x1 = (mx + ex - 0.5).floor().min(camera.width as f64 - 1.0);
    let y0 = (my - ey - 0.5).ceil().max(0.0);
    let y1 = (my + ey - 0.5).floor().min(camera.height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some([x0 as u32, y0 as u32, x1 as u32, y1 as u32])
}

#[derive(Debug, Clone)]
struct Splat {
    mean: [f64; 2],
    /// Upper triangle of the inverse covariance.
    conic: [f64; 3],
    opacity: f64,
    depth: f64,
    color: [f64; 3],
    bounds: [u32; 4],
    index: u32,
}

fn prepare_splat(scene: &GaussianScene, i: usize, projector: &Projector, center: &Vector3<f64>) -> Option<Splat> {
    let pos = scene.position(i);
    let proj = projector.project(&pos, &scene.rotations[i], &scene.log_scales[i])?;
    let [[a, b], [_, c]] = proj.cov2d;
    let det = a * c - b * b;
    if !(det >= 1e-12) {
        return None;
    }
    let opacity = sh::sigmoid(scene.opacity_logits[i] as f64);
    if opacity < MIN_SPLAT_ALPHA {
        return None;
    }
    // Pixels farther out than this fall below the minimum splat alpha.
    let q_max = 2.0 * (opacity / MIN_SPLAT_ALPHA).ln();
    let bounds = pixel_bounds(&proj, q_max, &projector.camera)?;
    let view = pos - center;
    let norm = view.norm();
    let dir = if norm > 0.0 { view / norm } else { Vector3::z() };
    let color = sh::eval_with_basis(&scene.sh0[i], &scene.sh_rest[i], &sh::basis(&dir));
    Some(Splat {
        mean: proj.mean2d,
        conic: [c / det, -b / det, a / det],
        opacity,
        depth: proj.depth,
        color,
        bounds,
        index: i as u32,
    })
}

#[derive(Clone, Copy)]
struct PixelResult {
    rgb: [f32; 3],
    alpha: f32,
    depth: f32,
}

#[inline]
fn composite_pixel(x: u32, y: u32, splats: &[Splat], list: &[u32]) -> PixelResult {
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let mut t = 1.0f64;
    let mut rgb = [0.0f64; 3];
    let mut depth_acc = 0.0;
    let mut weight = 0.0;
    for &si in list {
        let s = &splats[si as usize];
        // Bounds, not tile membership, decide coverage so tiling never changes output.
        let [x0, y0, x1, y1] = s.bounds;
        if x < x0 || x > x1 || y < y0 || y > y1 {
            continue;
        }
        let dx = px - s.mean[0];
        let dy = py - s.mean[1];
        let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
        if q < 0.0 {
            continue;
        }
        let a = (s.opacity * (-0.5 * q).exp()).min(MAX_SPLAT_ALPHA);
        if a < MIN_SPLAT_ALPHA {
            continue;
        }
        let w = a * t;
        for c in 0..3 {
            rgb[c] += s.color[c] * w;
        }
        depth_acc += s.depth * w;
        weight += w;
        t *= 1.0 - a;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    PixelResult {
        rgb: rgb.map(|v| v as f32),
        alpha: (1.0 - t) as f32,
        depth: if weight >= DEPTH_VALID_THRESHOLD {
            (depth_acc / weight) as f32
        } else {
            f32::INFINITY
        },
    }
}

/// Renders `scene` from `camera`. Background is black with zero alpha.
pub fn rasterize(scene: &GaussianScene, camera: &Camera, tile_size: u32) -> Result<RenderOutput> {
    camera.validate()?;
    if tile_size == 0 {
        return Err(Error::Config("tile_size must be positive".into()));
    }
    let tile = tile_size;
    let projector = Projector::new(camera);
    let center = camera.center();

    let mut splats: Vec<Splat> = par::map_range(scene.len(), |i| prepare_splat(scene, i, &projector, &center))
        .into_iter()
        .flatten()
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

    let tiles_x = camera.width.div_ceil(tile);
    let tiles_y = camera.height.div_ceil(tile);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (si, s) in splats.iter().enumerate() {
        let [x0, y0, x1, y1] = s.bounds;
        for ty in y0 / tile..=y1 / tile {
            for tx in x0 / tile..=x1 / tile {
                bins[(ty * tiles_x + tx) as usize].push(si as u32);
            }
        }
    }

    let tile_pixels = par::map_range(bins.len(), |t| {
        let tx = t as u32 % tiles_x;
        let ty = t as u32 / tiles_x;
        let list = &bins[t];
        let xs = tx * tile..((tx + 1) * tile).min(camera.width);
        let ys = ty * tile..((ty + 1) * tile).min(camera.height);
        let mut out = Vec::with_capacity(xs.len() * ys.len());
        for y in ys {
            for x in xs.clone() {
                let r = if list.is_empty() {
                    PixelResult { rgb: [0.0; 3], alpha: 0.0, depth: f32::INFINITY }
                } else {
                    composite_pixel(x, y, &splats, list)
                };
                out.push((x, y, r));
            }
        }
        out
    });

    let mut render = RenderOutput::blank(camera.width, camera.height);
    for (x, y, r) in tile_pixels.into_iter().flatten() {
        let i = render.index(x, y);
        render.rgb[i] = r.rgb;
        render.alpha[i] = r.alpha;
        render.depth[i] = r.depth;
    }
    Ok(render)
}
