use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::composite::load_obj;
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::labels::{evaluate, LabelRecord, MetricReport};
use crate::noise::pose::PoseStreamRecord;
use crate::scene::load_ply;

/// One keyed pose plus the occlusion ratio when the source carries one.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyedPose {
    pub key: u64,
    pub pose: Pose,
    pub occlusion_ratio: Option<f64>,
}

/// Reads label records or pose-stream records, one JSON object per line.
pub fn read_poses(path: &Path) -> Result<Vec<KeyedPose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<KeyedPose> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match serde_json::from_str::<LabelRecord>(line) {
            Ok(r) => KeyedPose {
                key: r.frame_id,
                pose: r.pose,
                occlusion_ratio: Some(r.occlusion_ratio),
            },
            Err(_) => {
                let r: PoseStreamRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: format!("neither a label nor a pose record: {e}"),
                })?;
                KeyedPose {
                    key: r.step,
                    pose: r.pose()?,
                    occlusion_ratio: None,
                }
            }
        };
        out.push(parsed);
    }
    Ok(out)
}

/// Model points from a `.ply` scene (Gaussian centers), an `.obj` mesh
/// (vertices) or a `.json` array of `[x, y, z]` triples in meters.
pub fn load_model_points(path: &Path) -> Result<Vec<Vector3<f64>>> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "ply" => {
            let s = load_ply(path)?;
            Ok((0..s.len()).map(|i| s.position(i)).collect())
        }
        "obj" => Ok(load_obj(path)?.vertices),
        "json" => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let pts: Vec<[f64; 3]> = serde_json::from_str(&text)?;
            Ok(pts.into_iter().map(Vector3::from).collect())
        }
        _ => Err(Error::Config(format!(
            "model points {}: expected .ply, .obj or .json",
            path.display()
        ))),
    }
}

/// JSON array of occlusion ratios, in the order of the ground-truth file.
pub fn load_series(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Matches predictions to ground truth by frame id (or step) and evaluates.
/// Without an explicit series the ground-truth occlusion ratios are used
/// when available.
pub fn evaluate_files(
    predicted: &Path,
    ground_truth: &Path,
    model_points: &Path,
    occlusion: Option<&Path>,
) -> Result<MetricReport> {
    let pred = read_poses(predicted)?;
    let gt = read_poses(ground_truth)?;
    let mut by_key: BTreeMap<u64, &KeyedPose> = BTreeMap::new();
    for p in &pred {
        if by_key.insert(p.key, p).is_some() {
            return Err(Error::Validation(format!("duplicate prediction for frame {}", p.key)));
        }
    }
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} predictions", gt.len()),
            actual: pred.len().to_string(),
        });
    }
    let mut p_poses = Vec::with_capacity(gt.len());
    for g in &gt {
        let p = by_key
            .get(&g.key)
            .ok_or_else(|| Error::Validation(format!("no prediction for frame {}", g.key)))?;
        p_poses.push(p.pose);
    }
    let g_poses: Vec<Pose> = gt.iter().map(|g| g.pose).collect();
    let points = load_model_points(model_points)?;
    let series = match occlusion {
        Some(path) => Some(load_series(path)?),
        None => gt.iter().map(|g| g.occlusion_ratio).collect::<Option<Vec<_>>>(),
    };
    evaluate(&p_poses, &g_poses, &points, series.as_deref())
}
