//! Columnar Gaussian scenes and the binary little-endian PLY interchange
//! format used by 3D Gaussian splatting exporters.
//!
//! Attributes are kept exactly as they appear on disk: opacities as logits,
//! scales as natural logs. `sh_rest` is channel-major, 15 coefficients for
//! red, then green, then blue, matching `f_rest_0..44`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SH_REST_PER_CHANNEL: usize = 15;
pub const SH_REST_LEN: usize = 3 * SH_REST_PER_CHANNEL;
/// SH coefficients per Gaussian across all three channels (3 DC + 45 higher order).
pub const SH_LEN: usize = 3 + SH_REST_LEN;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianScene {
    pub positions: Vec<[f32; 3]>,
    /// Unit quaternions, `(w, x, y, z)`.
    pub rotations: Vec<[f32; 4]>,
    pub log_scales: Vec<[f32; 3]>,
    pub opacity_logits: Vec<f32>,
    pub sh0: Vec<[f32; 3]>,
    pub sh_rest: Vec<[f32; SH_REST_LEN]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneStats {
    pub count: usize,
    pub aabb_min: Vector3<f64>,
    pub aabb_max: Vector3<f64>,
    pub centroid: Vector3<f64>,
}

impl GaussianScene {
    /// Builds a scene from columns, normalizing quaternions and validating
    /// every invariant.
    pub fn from_columns(
        positions: Vec<[f32; 3]>,
        rotations: Vec<[f32; 4]>,
        log_scales: Vec<[f32; 3]>,
        opacity_logits: Vec<f32>,
        sh0: Vec<[f32; 3]>,
        sh_rest: Vec<[f32; SH_REST_LEN]>,
    ) -> Result<Self> {
        let mut scene = GaussianScene {
            positions,
            rotations,
            log_scales,
            opacity_logits,
            sh0,
            sh_rest,
        };
        scene.normalize_rotations()?;
        scene.validate()?;
        Ok(scene)
    }

    /// Overwrites `self` with `other`, keeping existing allocations.
    pub fn copy_from(&mut self, other: &GaussianScene) {
        self.positions.clone_from(&other.positions);
        self.rotations.clone_from(&other.rotations);
        self.log_scales.clone_from(&other.log_scales);
        self.opacity_logits.clone_from(&other.opacity_logits);
        self.sh0.clone_from(&other.sh0);
        self.sh_rest.clone_from(&other.sh_rest);
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    fn normalize_rotations(&mut self) -> Result<()> {
        for (i, q) in self.rotations.iter_mut().enumerate() {
            if q.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("vertex {i}: non-finite rotation")));
            }
            let norm = q.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::Validation(format!("vertex {i}: zero-norm quaternion")));
            }
            // Already-unit quaternions are left bit-identical so load/save/load is exact.
            if (norm - 1.0).abs() > 1e-6 {
                for v in q.iter_mut() {
                    *v = (*v as f64 / norm) as f32;
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if n == 0 {
            return Err(Error::Validation("scene must contain at least one Gaussian".into()));
        }
        let lens = [
            ("rotations", self.rotations.len()),
            ("log_scales", self.log_scales.len()),
            ("opacity_logits", self.opacity_logits.len()),
            ("sh0", self.sh0.len()),
            ("sh_rest", self.sh_rest.len()),
        ];
        for (name, len) in lens {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: format!("{n} {name}"),
                    actual: len.to_string(),
                });
            }
        }
        for i in 0..n {
            let finite = self.positions[i].iter().all(|v| v.is_finite())
                && self.log_scales[i].iter().all(|v| v.is_finite())
                && self.opacity_logits[i].is_finite()
                && self.sh0[i].iter().all(|v| v.is_finite())
                && self.sh_rest[i].iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::Validation(format!("vertex {i}: non-finite value")));
            }
            let q = self.rotations[i];
            let norm = q.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!(
                    "vertex {i}: rotation is not unit length (norm {norm})"
                )));
            }
        }
        Ok(())
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        let p = self.positions[i];
        Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)
    }

    /// SHA-256 over every attribute buffer, hex-encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        for i in 0..self.len() {
            for v in self.positions[i]
                .iter()
                .chain(&self.rotations[i])
                .chain(&self.log_scales[i])
                .chain(std::iter::once(&self.opacity_logits[i]))
                .chain(&self.sh0[i])
                .chain(&self.sh_rest[i])
            {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

pub fn scene_stats(scene: &GaussianScene) -> SceneStats {
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    let mut sum = Vector3::zeros();
    for i in 0..scene.len() {
        let p = scene.position(i);
        min = min.inf(&p);
        max = max.sup(&p);
        sum += p;
    }
    let centroid = (sum / scene.len() as f64).sup(&min).inf(&max);
    SceneStats {
        count: scene.len(),
        aabb_min: min,
        aabb_max: max,
        centroid,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f32 {
        match self {
            Scalar::I8 => b[0] as i8 as f32,
            Scalar::U8 => b[0] as f32,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f32,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f32,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f32,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f32,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()),
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()) as f32,
        }
    }
}

struct ElementDecl {
    name: String,
    count: usize,
    /// `None` marks a list property, which only non-vertex trailing elements may use.
    properties: Vec<(String, Option<Scalar>)>,
}

fn canonical_properties() -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..SH_REST_LEN).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<Vec<ElementDecl>> {
    let mut line = String::new();
    let next_line = |reader: &mut R, line: &mut String| -> Result<bool> {
        line.clear();
        let n = reader
            .read_line(line)
            .map_err(|e| Error::Schema(format!("reading PLY header: {e}")))?;
        Ok(n > 0)
    };

    if !next_line(reader, &mut line)? || line.trim_end() != "ply" {
        return Err(Error::Schema("missing 'ply' magic".into()));
    }
    let mut format_ok = false;
    let mut elements: Vec<ElementDecl> = Vec::new();
    loop {
        if !next_line(reader, &mut line)? {
            return Err(Error::Schema("unexpected end of file in PLY header".into()));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", "1.0"] => format_ok = true,
            ["format", other, ..] => {
                return Err(Error::Schema(format!("unsupported PLY format '{other}'")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::Schema(format!("bad element count '{count}'")))?;
                elements.push(ElementDecl {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", _, _, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Schema("property before element".into()))?
                .properties
                .push((name.to_string(), None)),
            ["property", ty, name] => {
                let scalar = Scalar::parse(ty)
                    .ok_or_else(|| Error::Schema(format!("unknown property type '{ty}'")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| Error::Schema("property before element".into()))?
                    .properties
                    .push((name.to_string(), Some(scalar)));
            }
            _ => return Err(Error::Schema(format!("unrecognized header line '{}'", line.trim_end()))),
        }
    }
    if !format_ok {
        return Err(Error::Schema(
            "header must declare 'format binary_little_endian 1.0'".into(),
        ));
    }
    Ok(elements)
}

/// Reads a binary little-endian 3DGS PLY file. Property order is resolved
/// by name; extra properties (normals, etc.) are ignored.
pub fn load_ply(path: impl AsRef<Path>) -> Result<GaussianScene> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(BufReader::new(file))
}

pub fn read_ply<R: BufRead>(mut reader: R) -> Result<GaussianScene> {
    let elements = read_header(&mut reader)?;

    // Skip scalar elements that precede the vertex block.
    let mut vertex = None;
    for el in &elements {
        if el.name == "vertex" {
            vertex = Some(el);
            break;
        }
        if el.properties.iter().any(|(_, t)| t.is_none()) {
            return Err(Error::Schema(format!(
                "list properties in element '{}' before vertices are unsupported",
                el.name
            )));
        }
        let stride: usize = el.properties.iter().map(|(_, t)| t.unwrap().size()).sum();
        let mut skip = vec![0u8; stride * el.count];
        reader
            .read_exact(&mut skip)
            .map_err(|e| Error::Schema(format!("truncated element '{}': {e}", el.name)))?;
    }
    let vertex = vertex.ok_or_else(|| Error::Schema("no 'vertex' element".into()))?;
    if vertex.properties.iter().any(|(_, t)| t.is_none()) {
        return Err(Error::Schema("list property in vertex element".into()));
    }

    let mut offsets = Vec::with_capacity(vertex.properties.len());
    let mut stride = 0usize;
    for (_, t) in &vertex.properties {
        offsets.push(stride);
        stride += t.unwrap().size();
    }
    let lookup = |name: &str| -> Result<(usize, Scalar)> {
        vertex
            .properties
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| (offsets[i], vertex.properties[i].1.unwrap()))
            .ok_or_else(|| Error::Schema(format!("missing required vertex property '{name}'")))
    };
    let slots: Vec<(usize, Scalar)> = canonical_properties()
        .iter()
        .map(|n| lookup(n))
        .collect::<Result<_>>()?;

    let n = vertex.count;
    let mut buf = vec![0u8; stride * n];
    reader
        .read_exact(&mut buf)
        .map_err(|e| Error::Schema(format!("truncated vertex data: {e}")))?;

    let mut positions = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    let mut log_scales = Vec::with_capacity(n);
    let mut opacity_logits = Vec::with_capacity(n);
    let mut sh0 = Vec::with_capacity(n);
    let mut sh_rest = Vec::with_capacity(n);
    let mut values = vec![0f32; slots.len()];
    for (i, row) in buf.chunks_exact(stride.max(1)).take(n).enumerate() {
        for (v, &(off, ty)) in values.iter_mut().zip(&slots) {
            *v = ty.read(&row[off..]);
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "vertex {i}: non-finite value in '{}'",
                canonical_properties()[bad]
            )));
        }
        positions.push([values[0], values[1], values[2]]);
        sh0.push([values[3], values[4], values[5]]);
        let mut rest = [0f32; SH_REST_LEN];
        rest.copy_from_slice(&values[6..6 + SH_REST_LEN]);
        sh_rest.push(rest);
        let o = 6 + SH_REST_LEN;
        opacity_logits.push(values[o]);
        log_scales.push([values[o + 1], values[o + 2], values[o + 3]]);
        rotations.push([values[o + 4], values[o + 5], values[o + 6], values[o + 7]]);
    }
    GaussianScene::from_columns(positions, rotations, log_scales, opacity_logits, sh0, sh_rest)
}

/// Writes the scene with properties in canonical order, all `float`.
pub fn save_ply(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if path.as_os_str().is_empty() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty output path"),
        ));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply(scene, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ply<W: Write>(scene: &GaussianScene, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", scene.len())?;
    for name in canonical_properties() {
        writeln!(w, "property float {name}")?;
    }
    writeln!(w, "end_header")?;
    for i in 0..scene.len() {
        let row = scene.positions[i]
            .iter()
            .chain(&scene.sh0[i])
            .chain(&scene.sh_rest[i])
            .chain(std::iter::once(&scene.opacity_logits[i]))
            .chain(&scene.log_scales[i])
            .chain(&scene.rotations[i]);
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}
