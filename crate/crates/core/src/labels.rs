//! Nine-keypoint 2.5D labels, rigid Procrustes pose recovery and pose
//! accuracy metrics.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Pose};
use crate::scene::{scene_stats, GaussianScene};

pub const KEYPOINT_COUNT: usize = 9;
/// Camera-frame depth below which a keypoint is treated as invalid.
pub const MIN_KEYPOINT_DEPTH: f64 = 1e-6;
pub const ACCURACY_TRANSLATION_MM: f64 = 10.0;
pub const ACCURACY_ROTATION_DEG: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    /// Eight AABB corners followed by the centroid, in the object frame.
    pub points: [Vector3<f64>; KEYPOINT_COUNT],
    pub aabb_min: Vector3<f64>,
    pub aabb_max: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Keypoint2p5D {
    /// Pixel coordinates divided by image width and height.
    pub u: f64,
    pub v: f64,
    /// Camera-frame depth in meters.
    pub d: f64,
}

impl From<[f64; 3]> for Keypoint2p5D {
    fn from(a: [f64; 3]) -> Self {
        Self { u: a[0], v: a[1], d: a[2] }
    }
}

impl From<Keypoint2p5D> for [f64; 3] {
    fn from(k: Keypoint2p5D) -> Self {
        [k.u, k.v, k.d]
    }
}

impl Keypoint2p5D {
    pub fn is_valid(&self) -> bool {
        self.d > MIN_KEYPOINT_DEPTH && self.u.is_finite() && self.v.is_finite()
    }

    pub fn in_frame(&self) -> bool {
        self.is_valid() && (0.0..=1.0).contains(&self.u) && (0.0..=1.0).contains(&self.v)
    }

    /// Camera-frame point this keypoint was projected from.
    pub fn back_project(&self, camera: &Camera) -> Vector3<f64> {
        camera.unproject(self.u * camera.width as f64, self.v * camera.height as f64, self.d)
    }
}

/// One JSONL record of ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub frame_id: u64,
    /// Object pose in the camera frame.
    pub pose: Pose,
    pub keypoints: Vec<Keypoint2p5D>,
    pub occlusion_ratio: f64,
}

/// Corner `i` takes the high x bound when bit 2 is set, high y for bit 1,
/// high z for bit 0. The centroid is appended last.
pub fn canonical_keypoints(scene: &GaussianScene) -> KeypointSet {
    let st = scene_stats(scene);
    let (lo, hi) = (st.aabb_min, st.aabb_max);
    let mut points = [Vector3::zeros(); KEYPOINT_COUNT];
    for (i, p) in points.iter_mut().take(8).enumerate() {
        *p = Vector3::new(
            if i & 4 != 0 { hi.x } else { lo.x },
            if i & 2 != 0 { hi.y } else { lo.y },
            if i & 1 != 0 { hi.z } else { lo.z },
        );
    }
    points[8] = st.centroid;
    KeypointSet {
        points,
        aabb_min: lo,
        aabb_max: hi,
    }
}

/// Projects object-frame keypoints placed at `object_pose` (world frame).
/// Points at or behind the camera get `d ≤ 1e-6` and NaN image coordinates.
pub fn project_keypoints(kps: &KeypointSet, object_pose: &Pose, camera: &Camera) -> [Keypoint2p5D; KEYPOINT_COUNT] {
    let camera_from_object = Pose::from_isometry(&camera.camera_from_world()).compose(object_pose);
    kps.points.map(|p| {
        let c = camera_from_object.transform_point(&p);
        if c.z <= MIN_KEYPOINT_DEPTH {
            return Keypoint2p5D { u: f64::NAN, v: f64::NAN, d: c.z };
        }
        let (u, v) = camera.project(&c);
        Keypoint2p5D {
            u: u / camera.width as f64,
            v: v / camera.height as f64,
            d: c.z,
        }
    })
}

/// Least-squares rigid transform `q ≈ R p + t` (no scale) between corresponding point sets.
pub fn rigid_procrustes(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<Pose> {
    if source.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} target points", source.len()),
            actual: target.len().to_string(),
        });
    }
    if source.len() < 3 {
        return Err(Error::Estimation(format!(
            "need at least 3 correspondences, got {}",
            source.len()
        )));
    }
    let n = source.len() as f64;
    let ps = source.iter().sum::<Vector3<f64>>() / n;
    let qs = target.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (p, q) in source.iter().zip(target) {
        h += (p - ps) * (q - qs).transpose();
    }
    let svd = h.svd(true, true);
    let mut sv = svd.singular_values;
    let (mut u, mut v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    // Sort singular values descending, permuting U and Vᵀ alongside.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let (u0, vt0, sv0) = (u, v_t, sv);
    for (k, &o) in order.iter().enumerate() {
        u.set_column(k, &u0.column(o));
        v_t.set_row(k, &vt0.row(o));
        sv[k] = sv0[o];
    }
    if !(sv[1] >= 1e-9 * sv[0]) || sv[0] == 0.0 {
        return Err(Error::Degenerate(format!(
            "cross-covariance is rank deficient (singular values {:.3e}, {:.3e}, {:.3e})",
            sv[0], sv[1], sv[2]
        )));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let rot = UnitQuaternion::from_matrix(&r);
    let t = qs - rot * ps;
    Ok(Pose::new(t, rot))
}

/// Recovers the camera-frame object pose from 2.5D keypoints. Invalid
/// keypoints are dropped before solving.
pub fn procrustes_pose(canonical: &KeypointSet, observed: &[Keypoint2p5D], camera: &Camera) -> Result<Pose> {
    if observed.len() != KEYPOINT_COUNT {
        return Err(Error::DimensionMismatch {
            expected: format!("{KEYPOINT_COUNT} keypoints"),
            actual: observed.len().to_string(),
        });
    }
    let (src, dst): (Vec<_>, Vec<_>) = canonical
        .points
        .iter()
        .zip(observed)
        .filter(|(_, k)| k.is_valid())
        .map(|(p, k)| (*p, k.back_project(camera)))
        .unzip();
    rigid_procrustes(&src, &dst)
}

/// Mean distance between model points under two poses, in millimeters.
pub fn add_metric(a: &Pose, b: &Pose, model_points: &[Vector3<f64>]) -> Result<f64> {
    if model_points.is_empty() {
        return Err(Error::Validation("ADD needs at least one model point".into()));
    }
    let sum: f64 = model_points
        .iter()
        .map(|p| (a.transform_point(p) - b.transform_point(p)).norm())
        .sum();
    Ok(1000.0 * sum / model_points.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    pub translation_mm: f64,
    pub rotation_deg: f64,
}

impl PoseError {
    /// Strictly under both the 10 mm and 10° thresholds.
    pub fn is_accurate(&self) -> bool {
        self.translation_mm < ACCURACY_TRANSLATION_MM && self.rotation_deg < ACCURACY_ROTATION_DEG
    }
}

pub fn pose_errors(a: &Pose, b: &Pose) -> PoseError {
    let qa = a.orientation.quaternion();
    let qb = b.orientation.quaternion();
    let dot = qa.coords.dot(&qb.coords).abs().min(1.0);
    PoseError {
        translation_mm: (a.position - b.position).norm() * 1000.0,
        rotation_deg: (2.0 * dot.acos()).to_degrees(),
    }
}

pub fn accuracy(a: &Pose, b: &Pose) -> bool {
    pose_errors(a, b).is_accurate()
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} samples", x.len()),
            actual: y.len().to_string(),
        });
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least two samples".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Aggregate metrics over matched prediction/ground-truth pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub count: usize,
    pub add_mm_mean: f64,
    pub accuracy_pct: f64,
    pub trans_mm_mean: f64,
    pub rot_deg_mean: f64,
    /// Correlation of occlusion ratio with translation error; `None` when undefined.
    pub pearson_trans: Option<f64>,
    pub pearson_rot: Option<f64>,
}

pub fn evaluate(
    predicted: &[Pose],
    ground_truth: &[Pose],
    model_points: &[Vector3<f64>],
    occlusion: Option<&[f64]>,
) -> Result<MetricReport> {
    if predicted.len() != ground_truth.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} predictions", ground_truth.len()),
            actual: predicted.len().to_string(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::Validation("no poses to evaluate".into()));
    }
    let n = predicted.len();
    let mut adds = Vec::with_capacity(n);
    let mut trans = Vec::with_capacity(n);
    let mut rots = Vec::with_capacity(n);
    let mut accurate = 0;
    for (p, g) in predicted.iter().zip(ground_truth) {
        adds.push(add_metric(p, g, model_points)?);
        let e = pose_errors(p, g);
        trans.push(e.translation_mm);
        rots.push(e.rotation_deg);
        if e.is_accurate() {
            accurate += 1;
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (pearson_trans, pearson_rot) = match occlusion {
        Some(occ) => {
            if occ.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: format!("{n} occlusion ratios"),
                    actual: occ.len().to_string(),
                });
            }
            (pearson(occ, &trans).ok(), pearson(occ, &rots).ok())
        }
        None => (None, None),
    };
    Ok(MetricReport {
        count: n,
        add_mm_mean: mean(&adds),
        accuracy_pct: 100.0 * accurate as f64 / n as f64,
        trans_mm_mean: mean(&trans),
        rot_deg_mean: mean(&rots),
        pearson_trans,
        pearson_rot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SH_REST_LEN;
    use approx::assert_relative_eq;

    fn cloud(points: &[[f32; 3]]) -> GaussianScene {
        let n = points.len();
        GaussianScene::from_columns(
            points.to_vec(),
            vec![[1.0, 0.0, 0.0, 0.0]; n],
            vec![[0.0; 3]; n],
            vec![0.0; n],
            vec![[0.0; 3]; n],
            vec![[0.0; SH_REST_LEN]; n],
        )
        .unwrap()
    }

    #[test]
    fn unit_cube_keypoints() {
        let mut pts = Vec::new();
        for i in 0..8 {
            pts.push([(i >> 2 & 1) as f32, (i >> 1 & 1) as f32, (i & 1) as f32]);
        }
        let k = canonical_keypoints(&cloud(&pts));
        for i in 0..8 {
            assert_eq!(k.points[i], Vector3::new(pts[i][0] as f64, pts[i][1] as f64, pts[i][2] as f64));
        }
        assert_eq!(k.points[8], Vector3::repeat(0.5));
    }

    #[test]
    fn single_point_keypoints_collapse() {
        let k = canonical_keypoints(&cloud(&[[0.1, 0.2, 0.3]]));
        let p = Vector3::new(0.1f32 as f64, 0.2f32 as f64, 0.3f32 as f64);
        assert!(k.points.iter().all(|q| *q == p));
    }

    #[test]
    fn axis_permutation_permutes_corners() {
        let a = canonical_keypoints(&cloud(&[[0.0, 1.0, 2.0], [3.0, 5.0, 7.0]]));
        let b = canonical_keypoints(&cloud(&[[1.0, 2.0, 0.0], [5.0, 7.0, 3.0]]));
        for i in 0..8 {
            // b's axes are (y, z, x) of a: corner bits rotate accordingly.
            let j = ((i & 1) << 2) | ((i & 4) >> 1) | ((i & 2) >> 1);
            let (pa, pb) = (a.points[j], b.points[i]);
            assert_eq!(pb, Vector3::new(pa.y, pa.z, pa.x));
        }
    }

    #[test]
    fn on_axis_projection() {
        let cam = Camera::centered(120, 120, 100.0, 100.0);
        let k = KeypointSet {
            points: [Vector3::new(0.0, 0.0, 1.0); 9],
            aabb_min: Vector3::zeros(),
            aabb_max: Vector3::zeros(),
        };
        let kp = project_keypoints(&k, &Pose::identity(), &cam);
        assert_eq!(kp[0], Keypoint2p5D { u: 0.5, v: 0.5, d: 1.0 });
        let shifted = project_keypoints(&k, &Pose::from_translation([0.1, 0.0, 0.0]), &cam);
        assert_relative_eq!(shifted[0].u - 0.5, 100.0 * 0.1 / 120.0, epsilon = 1e-15);
    }

    #[test]
    fn behind_camera_is_invalid() {
        let cam = Camera::centered(64, 64, 50.0, 50.0);
        let mut k = KeypointSet {
            points: [Vector3::new(0.0, 0.0, 1.0); 9],
            aabb_min: Vector3::zeros(),
            aabb_max: Vector3::zeros(),
        };
        k.points[0] = Vector3::new(0.0, 0.0, -1.0);
        let kp = project_keypoints(&k, &Pose::identity(), &cam);
        assert!(!kp[0].is_valid());
        assert!(kp[1].is_valid());
    }

    #[test]
    fn too_few_points_is_estimation_error() {
        let p = [Vector3::zeros(), Vector3::x()];
        assert!(matches!(rigid_procrustes(&p, &p), Err(Error::Estimation(_))));
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let p: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(rigid_procrustes(&p, &p), Err(Error::Degenerate(_))));
    }

    #[test]
    fn reflection_is_not_returned() {
        let src = vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0), Vector3::new(0.0, 0.0, 1.0), Vector3::new(-1.0, -1.0, 0.3)];
        let dst: Vec<_> = src.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let pose = rigid_procrustes(&src, &dst).unwrap();
        assert_relative_eq!(pose.rotation_matrix().determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn add_examples() {
        let pts = [Vector3::new(0.3, -0.2, 0.1), Vector3::new(1.0, 2.0, 3.0)];
        let a = Pose::identity();
        assert_eq!(add_metric(&a, &a, &pts).unwrap(), 0.0);
        let b = Pose::from_translation([0.01, 0.0, 0.0]);
        assert_relative_eq!(add_metric(&a, &b, &pts).unwrap(), 10.0, epsilon = 1e-12);
        assert!(add_metric(&a, &b, &[]).is_err());
    }

    #[test]
    fn add_half_turn_on_square_corners() {
        // Corners of a unit square centered at the origin: each moves to the
        // opposite corner, a displacement of √2 m.
        let pts: Vec<_> = [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)]
            .iter()
            .map(|&(x, y)| Vector3::new(x, y, 0.0))
            .collect();
        let rot = Pose::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::PI);
        let direct: f64 = pts.iter().map(|p| (rot.transform_point(p) - p).norm()).sum::<f64>() / 4.0 * 1000.0;
        let add = add_metric(&Pose::identity(), &rot, &pts).unwrap();
        assert_relative_eq!(add, direct, epsilon = 1e-12);
        assert_relative_eq!(add, 2f64.sqrt() * 1000.0, epsilon = 1e-9);
    }

    #[test]
    fn sign_flip_has_zero_rotation_error() {
        let a = Pose::from_wxyz([0.0; 3], [0.5, 0.5, -0.5, 0.5]).unwrap();
        let b = Pose::from_wxyz([0.0; 3], [-0.5, -0.5, 0.5, -0.5]).unwrap();
        assert_eq!(pose_errors(&a, &b).rotation_deg, 0.0);
    }

    #[test]
    fn accuracy_is_strict() {
        let id = Pose::identity();
        assert!(accuracy(&id, &id));
        let nine = Pose::from_translation([0.009, 0.0, 0.0]).compose(&Pose::from_axis_angle([0.0, 1.0, 0.0], 9f64.to_radians()));
        assert!(accuracy(&id, &nine));
        let e = PoseError { translation_mm: 10.0, rotation_deg: 0.0 };
        assert!(!e.is_accurate());
        let e = PoseError { translation_mm: 0.0, rotation_deg: 10.0 };
        assert!(!e.is_accurate());
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(pearson(&x, &x.map(|v| 2.0 * v)).unwrap(), 1.0);
        assert_eq!(pearson(&x, &x.map(|v| -v)).unwrap(), -1.0);
        assert_relative_eq!(pearson(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap(), 0.8, epsilon = 1e-12);
        assert!(matches!(pearson(&x, &[1.0; 4]), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn label_record_json_shape() {
        let rec = LabelRecord {
            frame_id: 3,
            pose: Pose::from_translation([0.0, 0.0, 0.5]),
            keypoints: vec![Keypoint2p5D { u: 0.5, v: 0.25, d: 0.5 }; 9],
            occlusion_ratio: 0.1,
        };
        let v: serde_json::Value = serde_json::to_value(&rec).unwrap();
        assert_eq!(v["pose"]["position_m"], serde_json::json!([0.0, 0.0, 0.5]));
        assert_eq!(v["pose"]["quaternion_wxyz"], serde_json::json!([1.0, 0.0, 0.0, 0.0]));
        assert_eq!(v["keypoints"][0], serde_json::json!([0.5, 0.25, 0.5]));
        let back: LabelRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, rec);
    }
}
