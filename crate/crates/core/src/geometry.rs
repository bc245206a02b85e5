//! Rigid poses and the pinhole camera model.
//!
//! Camera frames follow the computer-vision convention: +x right, +y down,
//! +z forward. Continuous pixel coordinates place the center of pixel
//! `(i, j)` at `(i + 0.5, j + 0.5)`.

use nalgebra::{Isometry3, Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// SE(3) transform: rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseJson", into = "PoseJson")]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseJson {
    pub position_m: [f64; 3],
    pub quaternion_wxyz: [f64; 4],
}

impl TryFrom<PoseJson> for Pose {
    type Error = Error;

    fn try_from(p: PoseJson) -> Result<Self> {
        Pose::from_wxyz(p.position_m, p.quaternion_wxyz)
    }
}

impl From<Pose> for PoseJson {
    fn from(p: Pose) -> Self {
        PoseJson {
            position_m: p.position.into(),
            quaternion_wxyz: p.wxyz(),
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    /// Builds a pose from a position and a `(w, x, y, z)` quaternion, which is
    /// renormalized. Zero or non-finite input is rejected.
    pub fn from_wxyz(position: [f64; 3], q: [f64; 4]) -> Result<Self> {
        if position.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("pose contains non-finite values".into()));
        }
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if norm < 1e-12 {
            return Err(Error::Validation("pose quaternion has zero norm".into()));
        }
        Ok(Self {
            position: Vector3::from(position),
            orientation: UnitQuaternion::new_unchecked(quat / norm),
        })
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self::new(Vector3::from(t), UnitQuaternion::identity())
    }

    pub fn from_axis_angle(axis: [f64; 3], angle_rad: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(Vector3::from(axis));
        Self::new(Vector3::zeros(), UnitQuaternion::from_axis_angle(&axis, angle_rad))
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self::new(iso.translation.vector, iso.rotation)
    }

    pub fn inverse(&self) -> Self {
        Self::from_isometry(&self.isometry().inverse())
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Self::from_isometry(&(self.isometry() * other.isometry()))
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * p + self.position
    }

    pub fn rotation_matrix(&self) -> nalgebra::Matrix3<f64> {
        self.orientation.to_rotation_matrix().into_inner()
    }
}

/// Pinhole camera with an SE(3) placement in the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_from_camera: Pose,
    pub near: f64,
    pub far: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraJson {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub position_m: [f64; 3],
    #[serde(default = "identity_wxyz")]
    pub quaternion_wxyz: [f64; 4],
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}
fn default_near() -> f64 {
    0.01
}
fn default_far() -> f64 {
    100.0
}

impl TryFrom<CameraJson> for Camera {
    type Error = Error;

    fn try_from(c: CameraJson) -> Result<Self> {
        let cam = Camera {
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            world_from_camera: Pose::from_wxyz(c.position_m, c.quaternion_wxyz)?,
            near: c.near,
            far: c.far,
        };
        cam.validate()?;
        Ok(cam)
    }
}

impl From<Camera> for CameraJson {
    fn from(c: Camera) -> Self {
        CameraJson {
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            position_m: c.world_from_camera.position.into(),
            quaternion_wxyz: c.world_from_camera.wxyz(),
            near: c.near,
            far: c.far,
        }
    }
}

impl Camera {
    /// Camera at the world origin with the principal point at the image center.
    pub fn centered(width: u32, height: u32, fx: f64, fy: f64) -> Self {
        Camera {
            width,
            height,
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            world_from_camera: Pose::identity(),
            near: default_near(),
            far: default_far(),
        }
    }

    pub fn with_pose(mut self, world_from_camera: Pose) -> Self {
        self.world_from_camera = world_from_camera;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("camera resolution must be non-zero".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Validation("focal lengths must be positive".into()));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::Validation("principal point must be finite".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::Validation(format!(
                "clip planes must satisfy 0 < near < far (near={}, far={})",
                self.near, self.far
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.world_from_camera.position
    }

    pub fn camera_from_world(&self) -> Isometry3<f64> {
        self.world_from_camera.isometry().inverse()
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.camera_from_world().transform_point(&Point3::from(*p)).coords
    }

    /// Continuous pixel coordinates of a camera-frame point (z must be > 0).
    #[inline]
    pub fn project(&self, p_cam: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        )
    }

    /// Inverse of [`Camera::project`] at depth `z`.
    #[inline]
    pub fn unproject(&self, u_px: f64, v_px: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u_px - self.cx) * z / self.fx, (v_px - self.cy) * z / self.fy, z)
    }
}
