//! Real spherical-harmonic color evaluation up to degree 3.
//!
//! Color is `sigmoid(Σ k_l^m Y_l^m(d))` per channel. The basis uses the
//! sign and ordering conventions of common Gaussian-splatting exporters:
//! within a channel, coefficient 0 is the DC term (`sh0`) and coefficients
//! 1..15 are `sh_rest[channel * 15 + 0..15]`.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::scene::{SH_REST_LEN, SH_REST_PER_CHANNEL};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// The 16 basis values `Y_l^m(dir)` for a unit direction.
#[inline]
pub fn basis(dir: &Vector3<f64>) -> [f64; 16] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * x * y,
        SH_C2[1] * y * z,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * x * z,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * x * y * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// Color for precomputed basis values.
#[inline]
pub fn eval_with_basis(sh0: &[f32; 3], sh_rest: &[f32; SH_REST_LEN], y: &[f64; 16]) -> [f64; 3] {
    let mut rgb = [0.0; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        let rest = &sh_rest[c * SH_REST_PER_CHANNEL..(c + 1) * SH_REST_PER_CHANNEL];
        let mut s = y[0] * sh0[c] as f64;
        for (k, &coef) in rest.iter().enumerate() {
            s += y[k + 1] * coef as f64;
        }
        *out = sigmoid(s);
    }
    rgb
}

/// View-dependent color along `dir`. Directions within 1e-3 of unit length
/// are renormalized; anything further off is rejected.
pub fn eval_sh(sh0: &[f32; 3], sh_rest: &[f32; SH_REST_LEN], dir: &Vector3<f64>) -> Result<[f64; 3]> {
    let norm = dir.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-3 {
        return Err(Error::Validation(format!(
            "view direction must be unit length (norm {norm})"
        )));
    }
    let d = if (norm - 1.0).abs() > 1e-6 { dir / norm } else { *dir };
    Ok(eval_with_basis(sh0, sh_rest, &basis(&d)))
}

/// Index ranges of bands 1, 2 and 3 within the 16 basis values.
const BANDS: [std::ops::Range<usize>; 3] = [1..4, 4..9, 9..16];

/// Linear maps on bands 1..3 that rotate a color function: coefficients
/// transformed by `sh_rotation(R)` evaluate at `d` to what the originals
/// evaluate at `Rᵀ d`. The DC term is rotation invariant.
#[derive(Debug, Clone)]
pub struct ShRotation {
    bands: [DMatrix<f64>; 3],
}

/// Points spread over the sphere (golden-angle spiral).
fn sphere_samples(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Fits each band's rotation matrix by least squares over sample directions.
/// Each band is closed under rotation, so the fit is exact up to rounding.
pub fn sh_rotation(rotation: &Matrix3<f64>) -> ShRotation {
    let dirs = sphere_samples(64);
    let bands = BANDS.map(|band| {
        let m = band.len();
        let mut a = DMatrix::zeros(dirs.len(), m);
        let mut b = DMatrix::zeros(dirs.len(), m);
        for (i, d) in dirs.iter().enumerate() {
            let ya = basis(d);
            let yb = basis(&(rotation.transpose() * d));
            for j in 0..m {
                a[(i, j)] = ya[band.start + j];
                b[(i, j)] = yb[band.start + j];
            }
        }
        let pinv = a.pseudo_inverse(1e-12).expect("tolerance is non-negative");
        pinv * b
    });
    ShRotation { bands }
}

impl ShRotation {
    pub fn apply(&self, sh_rest: &[f32; SH_REST_LEN]) -> [f32; SH_REST_LEN] {
        let mut out = [0f32; SH_REST_LEN];
        for c in 0..3 {
            let base = c * SH_REST_PER_CHANNEL;
            for (band, m) in BANDS.iter().zip(&self.bands) {
                for r in 0..band.len() {
                    let mut acc = 0.0;
                    for k in 0..band.len() {
                        acc += m[(r, k)] * sh_rest[base + band.start - 1 + k] as f64;
                    }
                    out[base + band.start - 1 + r] = acc as f32;
                }
            }
        }
        out
    }
}
