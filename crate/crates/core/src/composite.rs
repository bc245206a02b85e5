//! Occluder depth from triangle meshes and depth-tested masking of the
//! rendered object.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{Camera, Pose};
use crate::par;
use crate::render::RenderOutput;

/// Pixels with at least this much accumulated alpha count as object pixels.
pub const OBJECT_ALPHA_THRESHOLD: f32 = 0.5;
const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self { vertices, triangles };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        if self.triangles.is_empty() {
            return Err(Error::Validation("mesh has no triangles".into()));
        }
        if let Some(i) = self.vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Validation(format!("mesh vertex {i} is not finite")));
        }
        let n = self.vertices.len() as u32;
        if let Some(t) = self.triangles.iter().position(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::Validation(format!("triangle {t} references a missing vertex")));
        }
        Ok(())
    }

    /// Axis-aligned rectangle in the plane `z = depth`, wound as two triangles.
    pub fn rectangle(x: [f64; 2], y: [f64; 2], depth: f64) -> Self {
        let v = vec![
            Vector3::new(x[0], y[0], depth),
            Vector3::new(x[1], y[0], depth),
            Vector3::new(x[1], y[1], depth),
            Vector3::new(x[0], y[1], depth),
        ];
        Self {
            vertices: v,
            triangles: vec![[0, 1, 2], [0, 2, 3]],
        }
    }
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_obj(BufReader::new(file))
}

/// Parses `v` and `f` records of a Wavefront OBJ stream; polygons are
/// fan-triangulated and all other records ignored.
pub fn parse_obj<R: BufRead>(reader: R) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let err = |message: String| Error::Parse { line: lineno, message };
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad coordinate '{t}'"))))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(err("vertex needs three coordinates".into()));
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in tokens {
                    let head = t.split('/').next().unwrap_or("");
                    let raw: i64 = head.parse().map_err(|_| err(format!("bad face index '{t}'")))?;
                    let resolved = match raw {
                        r if r > 0 => r - 1,
                        r if r < 0 => vertices.len() as i64 + r,
                        _ => return Err(err("face index 0 is invalid".into())),
                    };
                    if resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(err(format!("face index {raw} out of range")));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(err("face needs at least three vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, triangles)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    /// Camera-frame z in meters; `+∞` where no geometry was hit.
    pub depth: Vec<f32>,
}

impl DepthMap {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            depth: vec![f32::INFINITY; width as usize * height as usize],
        }
    }

    /// Per-pixel minimum of two maps.
    pub fn merge_nearest(&mut self, other: &DepthMap) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.width, self.height),
                actual: format!("{}x{}", other.width, other.height),
            });
        }
        for (a, &b) in self.depth.iter_mut().zip(&other.depth) {
            *a = a.min(b);
        }
        Ok(())
    }
}

struct PreparedTriangle {
    v0: Vector3<f64>,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    bounds: [u32; 4],
}

/// Möller–Trumbore against a ray `t·dir` from the camera origin.
#[inline]
fn intersect(tri: &PreparedTriangle, dir: &Vector3<f64>) -> Option<f64> {
    let p = dir.cross(&tri.e2);
    let det = tri.e1.dot(&p);
    if det.abs() < 1e-15 {
        return None;
    }
    let inv = 1.0 / det;
    let s = -tri.v0;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&tri.e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = tri.e2.dot(&q) * inv;
    (t > 1e-9).then_some(t)
}

/// Nearest-hit depth of `mesh` placed at `mesh_pose`, one ray per pixel center.
pub fn raycast_depth(mesh: &TriangleMesh, mesh_pose: &Pose, camera: &Camera) -> Result<DepthMap> {
    camera.validate()?;
    mesh.validate()?;
    let (w, h) = (camera.width, camera.height);
    let camera_from_mesh = Pose::from_isometry(&camera.camera_from_world()).compose(mesh_pose);
    let verts: Vec<Vector3<f64>> = mesh.vertices.iter().map(|v| camera_from_mesh.transform_point(v)).collect();

    let full = [0, 0, w - 1, h - 1];
    let tris: Vec<PreparedTriangle> = mesh
        .triangles
        .iter()
        .filter_map(|t| {
            let [a, b, c] = t.map(|i| verts[i as usize]);
            let (e1, e2) = (b - a, c - a);
            if 0.5 * e1.cross(&e2).norm() < MIN_TRIANGLE_AREA {
                return None;
            }
            let bounds = if [a, b, c].iter().all(|v| v.z > 1e-9) {
                let px: Vec<(f64, f64)> = [a, b, c].iter().map(|v| camera.project(v)).collect();
                let min_x = px.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
                let max_x = px.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
                let min_y = px.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
                let max_y = px.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
                // One pixel of slack on each side; the exact test happens per ray.
                let x0 = (min_x - 1.5).floor().max(0.0);
                let y0 = (min_y - 1.5).floor().max(0.0);
                let x1 = (max_x + 0.5).ceil().min(w as f64 - 1.0);
                let y1 = (max_y + 0.5).ceil().min(h as f64 - 1.0);
                if x0 > x1 || y0 > y1 {
                    return None;
                }
                [x0 as u32, y0 as u32, x1 as u32, y1 as u32]
            } else if [a, b, c].iter().all(|v| v.z <= 1e-9) {
                return None;
            } else {
                full
            };
            Some(PreparedTriangle { v0: a, e1, e2, bounds })
        })
        .collect();

    let rows = par::map_range(h as usize, |y| {
        let y = y as u32;
        let mut row = vec![f32::INFINITY; w as usize];
        let mut best = vec![f64::INFINITY; w as usize];
        let dy = (y as f64 + 0.5 - camera.cy) / camera.fy;
        for tri in tris.iter().filter(|t| t.bounds[1] <= y && y <= t.bounds[3]) {
            for x in tri.bounds[0]..=tri.bounds[2] {
                let dir = Vector3::new((x as f64 + 0.5 - camera.cx) / camera.fx, dy, 1.0);
                if let Some(t) = intersect(tri, &dir) {
                    if t < best[x as usize] {
                        best[x as usize] = t;
                    }
                }
            }
        }
        for (r, b) in row.iter_mut().zip(&best) {
            if b.is_finite() {
                *r = *b as f32;
            }
        }
        row
    });
    Ok(DepthMap {
        width: w,
        height: h,
        depth: rows.concat(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionResult {
    /// True where occluder geometry lies in front of the rendered surface.
    pub mask: Vec<bool>,
    pub occlusion_ratio: f64,
    pub object_pixels: usize,
    pub occluded_object_pixels: usize,
}

fn check_dims(expected: (u32, u32), actual: (u32, u32)) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", expected.0, expected.1),
            actual: format!("{}x{}", actual.0, actual.1),
        });
    }
    Ok(())
}

pub fn occlusion_mask(d_phys: &DepthMap, render: &RenderOutput) -> Result<OcclusionResult> {
    check_dims((render.width, render.height), (d_phys.width, d_phys.height))?;
    let mask: Vec<bool> = d_phys
        .depth
        .iter()
        .zip(&render.depth)
        .map(|(&p, &s)| p < s)
        .collect();
    let mut object = 0usize;
    let mut hidden = 0usize;
    for (&a, &m) in render.alpha.iter().zip(&mask) {
        if a >= OBJECT_ALPHA_THRESHOLD {
            object += 1;
            if m {
                hidden += 1;
            }
        }
    }
    Ok(OcclusionResult {
        mask,
        occlusion_ratio: if object == 0 { 0.0 } else { hidden as f64 / object as f64 },
        object_pixels: object,
        occluded_object_pixels: hidden,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Background {
    Color([f32; 3]),
    Image {
        width: u32,
        height: u32,
        pixels: Vec<[f32; 3]>,
    },
}

impl Background {
    #[inline]
    fn at(&self, i: usize) -> [f32; 3] {
        match self {
            Background::Color(c) => *c,
            Background::Image { pixels, .. } => pixels[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeFrame {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<[f32; 3]>,
    /// Visible object pixels: rendered with enough alpha and not occluded.
    pub object_mask: Vec<bool>,
}

/// Replaces occluded and background pixels with `background`; object pixels
/// keep the un-premultiplied rendered color.
pub fn composite_frame(
    render: &RenderOutput,
    occlusion: &OcclusionResult,
    background: &Background,
) -> Result<CompositeFrame> {
    let n = render.rgb.len();
    if occlusion.mask.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n} mask pixels"),
            actual: occlusion.mask.len().to_string(),
        });
    }
    if let Background::Image { width, height, .. } = background {
        check_dims((render.width, render.height), (*width, *height))?;
    }
    let mut rgb = Vec::with_capacity(n);
    let mut object_mask = Vec::with_capacity(n);
    for i in 0..n {
        let a = render.alpha[i];
        let visible = a >= OBJECT_ALPHA_THRESHOLD && !occlusion.mask[i];
        object_mask.push(visible);
        rgb.push(if visible {
            render.rgb[i].map(|c| (c / a).clamp(0.0, 1.0))
        } else {
            background.at(i)
        });
    }
    Ok(CompositeFrame {
        width: render.width,
        height: render.height,
        rgb,
        object_mask,
    })
}
