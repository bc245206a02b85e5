//! Post-process image augmentations, applied in a fixed order with an
//! independent gate per operator.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeOp {
    pub p: f64,
    pub range: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsoNoiseOp {
    pub p: f64,
    /// Noise σ is `sigma_base + sigma_luma · √luma`.
    pub sigma_base: f64,
    pub sigma_luma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelOp {
    pub p: f64,
    /// Inclusive range of odd kernel sizes.
    pub kernel: [u32; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphologyOp {
    pub p: f64,
    pub kernel: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageAugConfig {
    pub color_jitter: RangeOp,
    /// Offset as a fraction of a full hue turn.
    pub hue: RangeOp,
    pub brightness: RangeOp,
    pub contrast: RangeOp,
    pub gamma: RangeOp,
    pub saturation: RangeOp,
    pub iso_noise: IsoNoiseOp,
    pub motion_blur: KernelOp,
    pub box_blur: KernelOp,
    pub binary_opening: MorphologyOp,
}

impl Default for ImageAugConfig {
    fn default() -> Self {
        let r = |p, lo, hi| RangeOp { p, range: [lo, hi] };
        Self {
            color_jitter: r(0.2, 0.8, 1.2),
            hue: r(0.2, -0.2, 0.2),
            brightness: r(0.5, 0.5, 1.5),
            contrast: r(0.5, 0.5, 1.5),
            gamma: r(0.5, 0.5, 1.5),
            saturation: r(0.5, 0.5, 1.5),
            iso_noise: IsoNoiseOp {
                p: 0.25,
                sigma_base: 0.02,
                sigma_luma: 0.05,
            },
            motion_blur: KernelOp { p: 0.5, kernel: [3, 17] },
            box_blur: KernelOp { p: 0.5, kernel: [3, 5] },
            binary_opening: MorphologyOp { p: 1.0, kernel: 3 },
        }
    }
}

impl ImageAugConfig {
    /// Every operator gated off.
    pub fn disabled() -> Self {
        let mut c = Self::default();
        c.color_jitter.p = 0.0;
        c.hue.p = 0.0;
        c.brightness.p = 0.0;
        c.contrast.p = 0.0;
        c.gamma.p = 0.0;
        c.saturation.p = 0.0;
        c.iso_noise.p = 0.0;
        c.motion_blur.p = 0.0;
        c.box_blur.p = 0.0;
        c.binary_opening.p = 0.0;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name}: probability {p} outside [0, 1]")))
            }
        };
        for (name, op) in [
            ("color_jitter", &self.color_jitter),
            ("hue", &self.hue),
            ("brightness", &self.brightness),
            ("contrast", &self.contrast),
            ("gamma", &self.gamma),
            ("saturation", &self.saturation),
        ] {
            prob(name, op.p)?;
            let [lo, hi] = op.range;
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("{name}: range [{lo}, {hi}] must be ordered")));
            }
        }
        if self.gamma.range[0] <= 0.0 {
            return Err(Error::Config("gamma range must be positive".into()));
        }
        prob("iso_noise", self.iso_noise.p)?;
        if self.iso_noise.sigma_base < 0.0 || self.iso_noise.sigma_luma < 0.0 {
            return Err(Error::Config("iso_noise sigmas must be non-negative".into()));
        }
        for (name, op) in [("motion_blur", &self.motion_blur), ("box_blur", &self.box_blur)] {
            prob(name, op.p)?;
            let [lo, hi] = op.kernel;
            if lo % 2 == 0 || hi % 2 == 0 || lo > hi {
                return Err(Error::Config(format!(
                    "{name}: kernel range [{lo}, {hi}] must be odd and ordered"
                )));
            }
        }
        prob("binary_opening", self.binary_opening.p)?;
        if self.binary_opening.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "binary_opening: kernel {} must be odd",
                self.binary_opening.kernel
            )));
        }
        Ok(())
    }
}

#[inline]
fn luma(p: &[f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn rgb_to_hsv(p: [f32; 3]) -> [f32; 3] {
    let [r, g, b] = p;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb(p: [f32; 3]) -> [f32; 3] {
    let [h, s, v] = p;
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Odd size drawn uniformly from the odd numbers in `[lo, hi]`.
fn odd_size(rng: &mut SplitMix64, [lo, hi]: [u32; 2]) -> u32 {
    lo + 2 * rng.uniform_int(0, ((hi - lo) / 2) as u64) as u32
}

/// Normalized taps `(dx, dy, weight)` of a line kernel of odd length.
pub fn motion_kernel(length: u32, angle: f64) -> Vec<(i32, i32, f32)> {
    let half = (length as i32 - 1) / 2;
    let mut taps: Vec<(i32, i32, f32)> = Vec::new();
    for s in -half..=half {
        let dx = (s as f64 * angle.cos()).round() as i32;
        let dy = (s as f64 * angle.sin()).round() as i32;
        match taps.iter_mut().find(|t| t.0 == dx && t.1 == dy) {
            Some(t) => t.2 += 1.0,
            None => taps.push((dx, dy, 1.0)),
        }
    }
    let total: f32 = taps.iter().map(|t| t.2).sum();
    taps.iter_mut().for_each(|t| t.2 /= total);
    taps
}

pub fn box_kernel(size: u32) -> Vec<(i32, i32, f32)> {
    let half = (size as i32 - 1) / 2;
    let w = 1.0 / (size * size) as f32;
    (-half..=half)
        .flat_map(|dy| (-half..=half).map(move |dx| (dx, dy, w)))
        .collect()
}

/// Sparse convolution with edge replication.
pub fn convolve(img: &[[f32; 3]], width: u32, height: u32, taps: &[(i32, i32, f32)]) -> Vec<[f32; 3]> {
    let (w, h) = (width as i32, height as i32);
    par::map_range(height as usize, |y| {
        let y = y as i32;
        (0..w)
            .map(|x| {
                let mut acc = [0f32; 3];
                for &(dx, dy, k) in taps {
                    let sx = (x + dx).clamp(0, w - 1);
                    let sy = (y + dy).clamp(0, h - 1);
                    let p = img[(sy * w + sx) as usize];
                    for c in 0..3 {
                        acc[c] += k * p[c];
                    }
                }
                acc
            })
            .collect::<Vec<_>>()
    })
    .concat()
}

fn morph(mask: &[bool], width: u32, height: u32, size: u32, erode: bool) -> Vec<bool> {
    let (w, h) = (width as i32, height as i32);
    let half = (size as i32 - 1) / 2;
    let mut out = vec![false; mask.len()];
    for y in 0..h {
        for x in 0..w {
            let mut hit = erode;
            'win: for dy in -half..=half {
                for dx in -half..=half {
                    let (sx, sy) = (x + dx, y + dy);
                    // Out-of-image neighbors are ignored.
                    if sx < 0 || sy < 0 || sx >= w || sy >= h {
                        continue;
                    }
                    let v = mask[(sy * w + sx) as usize];
                    if erode && !v {
                        hit = false;
                        break 'win;
                    }
                    if !erode && v {
                        hit = true;
                        break 'win;
                    }
                }
            }
            out[(y * w + x) as usize] = hit;
        }
    }
    out
}

pub fn binary_opening(mask: &[bool], width: u32, height: u32, size: u32) -> Vec<bool> {
    let eroded = morph(mask, width, height, size, true);
    morph(&eroded, width, height, size, false)
}

/// Applies the augmentation chain. Pixel values are clamped to `[0, 1]`
/// after every operator.
pub fn augment_image(
    image: &[[f32; 3]],
    mask: &[bool],
    width: u32,
    height: u32,
    config: &ImageAugConfig,
    rng: &mut SplitMix64,
) -> Result<(Vec<[f32; 3]>, Vec<bool>)> {
    config.validate()?;
    let n = width as usize * height as usize;
    if image.len() != n || mask.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{width}x{height} image and mask"),
            actual: format!("{} pixels, {} mask entries", image.len(), mask.len()),
        });
    }
    let mut img = image.to_vec();
    let mut mask = mask.to_vec();
    let clamp = |img: &mut [[f32; 3]]| {
        for p in img.iter_mut() {
            for c in p.iter_mut() {
                *c = c.clamp(0.0, 1.0);
            }
        }
    };
    let sample = |rng: &mut SplitMix64, op: &RangeOp| -> Option<f32> {
        rng.chance(op.p).then(|| rng.uniform_range(op.range[0], op.range[1]) as f32)
    };

    if rng.chance(config.color_jitter.p) {
        let [lo, hi] = config.color_jitter.range;
        let s = [0, 1, 2].map(|_| rng.uniform_range(lo, hi) as f32);
        img.iter_mut().for_each(|p| (0..3).for_each(|c| p[c] *= s[c]));
        clamp(&mut img);
    }
    if let Some(dh) = sample(rng, &config.hue) {
        for p in img.iter_mut() {
            let mut hsv = rgb_to_hsv(*p);
            hsv[0] += dh;
            *p = hsv_to_rgb(hsv);
        }
        clamp(&mut img);
    }
    if let Some(b) = sample(rng, &config.brightness) {
        img.iter_mut().for_each(|p| p.iter_mut().for_each(|c| *c *= b));
        clamp(&mut img);
    }
    if let Some(k) = sample(rng, &config.contrast) {
        let mean = img.iter().map(|p| luma(p) as f64).sum::<f64>() as f32 / n.max(1) as f32;
        img.iter_mut().for_each(|p| p.iter_mut().for_each(|c| *c = (*c - mean) * k + mean));
        clamp(&mut img);
    }
    if let Some(g) = sample(rng, &config.gamma) {
        if g != 1.0 {
            img.iter_mut().for_each(|p| p.iter_mut().for_each(|c| *c = c.powf(g)));
        }
        clamp(&mut img);
    }
    if let Some(s) = sample(rng, &config.saturation) {
        for p in img.iter_mut() {
            let l = luma(p);
            p.iter_mut().for_each(|c| *c = l + (*c - l) * s);
        }
        clamp(&mut img);
    }
    if rng.chance(config.iso_noise.p) {
        let IsoNoiseOp { sigma_base, sigma_luma, .. } = config.iso_noise;
        for p in img.iter_mut() {
            let sigma = sigma_base + sigma_luma * (luma(p).max(0.0) as f64).sqrt();
            for c in p.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *c += (sigma * z) as f32;
            }
        }
        clamp(&mut img);
    }
    if rng.chance(config.motion_blur.p) {
        let len = odd_size(rng, config.motion_blur.kernel);
        let angle = rng.uniform_range(0.0, std::f64::consts::PI);
        img = convolve(&img, width, height, &motion_kernel(len, angle));
        clamp(&mut img);
    }
    if rng.chance(config.box_blur.p) {
        let size = odd_size(rng, config.box_blur.kernel);
        img = convolve(&img, width, height, &box_kernel(size));
        clamp(&mut img);
    }
    if rng.chance(config.binary_opening.p) {
        mask = binary_opening(&mask, width, height, config.binary_opening.kernel);
    }
    Ok((img, mask))
}
