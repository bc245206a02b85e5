//! Procedural test objects: Gaussians scattered over an ellipsoid shell with
//! patch-wise colors. Useful for benchmarks and tests when no captured
//! scene is at hand.

use crate::rng::SplitMix64;
use crate::scene::{GaussianScene, SH_REST_LEN};
use crate::sh::SH_C0;

/// Semi-axes of the generated shell in meters, roughly a small household object.
pub const OBJECT_SEMI_AXES: [f64; 3] = [0.04, 0.03, 0.05];

const PALETTE: [[f64; 3]; 6] = [
    [0.9, 0.2, 0.1],
    [0.1, 0.6, 0.9],
    [0.95, 0.85, 0.2],
    [0.2, 0.8, 0.3],
    [0.6, 0.3, 0.8],
    [0.9, 0.9, 0.9],
];

/// Inverse of `sigmoid(x)` clamped away from 0 and 1.
fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-4, 1.0 - 1e-4);
    (p / (1.0 - p)).ln()
}

/// `n` Gaussians on an ellipsoid shell. Deterministic in `(n, seed)`.
pub fn synthetic_object(n: usize, seed: u64) -> GaussianScene {
    let mut rng = SplitMix64::new(seed);
    let [a, b, c] = OBJECT_SEMI_AXES;
    // Splat size shrinks as the count grows so the shell stays about one layer thick.
    let base_scale = (4.0 * std::f64::consts::PI * (a * b + b * c + a * c) / 3.0 / n.max(1) as f64).sqrt();
    let mut positions = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    let mut log_scales = Vec::with_capacity(n);
    let mut opacity_logits = Vec::with_capacity(n);
    let mut sh0 = Vec::with_capacity(n);
    let mut sh_rest = Vec::with_capacity(n);
    for _ in 0..n {
        let z = rng.uniform_range(-1.0, 1.0);
        let phi = rng.uniform_range(0.0, std::f64::consts::TAU);
        let r = (1.0 - z * z).sqrt();
        let dir = [r * phi.cos(), r * phi.sin(), z];
        let depth = 1.0 + rng.uniform_range(-0.03, 0.03);
        positions.push([
            (a * dir[0] * depth) as f32,
            (b * dir[1] * depth) as f32,
            (c * dir[2] * depth) as f32,
        ]);
        let q = [
            rng.uniform_range(-1.0, 1.0),
            rng.uniform_range(-1.0, 1.0),
            rng.uniform_range(-1.0, 1.0),
            rng.uniform_range(-1.0, 1.0),
        ];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        rotations.push(q.map(|v| (v / norm) as f32));
        log_scales.push([0, 1, 2].map(|_| (base_scale * rng.uniform_range(0.6, 1.4)).ln() as f32));
        opacity_logits.push(logit(rng.uniform_range(0.6, 0.98)) as f32);
        let patch = ((dir[2] + 1.0) * 1.5) as usize * 2 + (phi > std::f64::consts::PI) as usize;
        let base = PALETTE[patch.min(PALETTE.len() - 1)];
        sh0.push(base.map(|v| ((logit(v) + rng.uniform_range(-0.2, 0.2)) / SH_C0) as f32));
        let mut rest = [0f32; SH_REST_LEN];
        for v in rest.iter_mut() {
            *v = rng.uniform_range(-0.05, 0.05) as f32;
        }
        sh_rest.push(rest);
    }
    GaussianScene::from_columns(positions, rotations, log_scales, opacity_logits, sh0, sh_rest)
        .expect("generated scene is valid")
}
