//! Perception noise for object pose streams: temporal downsampling,
//! delay jitter, tracking-failure replacement and biased additive noise.
//!
//! Per step `t` of an episode:
//! 1. every `k`-th step a fresh measurement `input ⊕ bias ⊕ noise` is taken
//!    and held; other steps reuse the held measurement;
//! 2. with probability `p` (for `t > 0`) the previous output is repeated;
//! 3. with the failure probability the output is replaced by a uniformly
//!    random pose.
//!
//! Both Bernoulli draws are taken on every step so the stream layout does
//! not depend on earlier outcomes.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseNoiseConfig {
    /// Inclusive range of the update period `k`, in steps.
    pub update_period: [u32; 2],
    pub jitter_prob: [f64; 2],
    pub failure_prob: [f64; 2],
    /// Per-step, per-axis position noise range.
    pub position_noise_mm: [f64; 2],
    /// Per-episode, per-axis position bias range.
    pub position_bias_mm: [f64; 2],
    /// Per-step rotation angle range about a random axis.
    pub orientation_noise_deg: [f64; 2],
    /// Per-episode rotation angle range about a random axis.
    pub orientation_bias_deg: [f64; 2],
    /// Box from which failure replacements draw their position.
    pub replacement_min_m: [f64; 3],
    pub replacement_max_m: [f64; 3],
}

impl Default for PoseNoiseConfig {
    fn default() -> Self {
        Self {
            update_period: [1, 3],
            jitter_prob: [0.0, 0.1],
            failure_prob: [0.0, 0.3],
            position_noise_mm: [-12.0, 12.0],
            position_bias_mm: [-12.0, 12.0],
            orientation_noise_deg: [-1.0, 1.0],
            orientation_bias_deg: [-0.1, 0.1],
            replacement_min_m: [-0.1; 3],
            replacement_max_m: [0.1; 3],
        }
    }
}

impl PoseNoiseConfig {
    /// A configuration that leaves every pose untouched.
    pub fn pass_through() -> Self {
        Self {
            update_period: [1, 1],
            jitter_prob: [0.0; 2],
            failure_prob: [0.0; 2],
            position_noise_mm: [0.0; 2],
            position_bias_mm: [0.0; 2],
            orientation_noise_deg: [0.0; 2],
            orientation_bias_deg: [0.0; 2],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, r: [f64; 2]| {
            if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} range {r:?} must be finite and ordered")))
            }
        };
        let prob = |name: &str, r: [f64; 2]| {
            ordered(name, r)?;
            if r[0] < 0.0 || r[1] > 1.0 {
                return Err(Error::Config(format!("{name} range {r:?} must lie in [0, 1]")));
            }
            Ok(())
        };
        let [k0, k1] = self.update_period;
        if k0 == 0 || k0 > k1 {
            return Err(Error::Config(format!(
                "update_period range [{k0}, {k1}] must be ordered and ≥ 1"
            )));
        }
        prob("jitter_prob", self.jitter_prob)?;
        prob("failure_prob", self.failure_prob)?;
        ordered("position_noise_mm", self.position_noise_mm)?;
        ordered("position_bias_mm", self.position_bias_mm)?;
        ordered("orientation_noise_deg", self.orientation_noise_deg)?;
        ordered("orientation_bias_deg", self.orientation_bias_deg)?;
        for a in 0..3 {
            ordered("replacement box", [self.replacement_min_m[a], self.replacement_max_m[a]])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeNoiseState {
    pub update_period: u32,
    pub jitter_prob: f64,
    pub failure_prob: f64,
    /// Meters.
    pub position_bias: Vector3<f64>,
    pub orientation_bias: UnitQuaternion<f64>,
    pub held: Option<Pose>,
    pub last_output: Option<Pose>,
    pub step: u64,
    config: PoseNoiseConfig,
}

fn random_axis(rng: &mut SplitMix64) -> Unit<Vector3<f64>> {
    let z = rng.uniform_range(-1.0, 1.0);
    let phi = rng.uniform_range(0.0, std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Unit::new_unchecked(Vector3::new(r * phi.cos(), r * phi.sin(), z))
}

/// Rotation by an angle drawn from `range_deg` about a uniformly random axis.
fn random_axis_angle(rng: &mut SplitMix64, range_deg: [f64; 2]) -> UnitQuaternion<f64> {
    let axis = random_axis(rng);
    let angle = rng.uniform_range(range_deg[0], range_deg[1]).to_radians();
    UnitQuaternion::from_axis_angle(&axis, angle)
}

/// Uniformly distributed rotation (Shoemake's subgroup algorithm).
pub fn uniform_rotation(rng: &mut SplitMix64) -> UnitQuaternion<f64> {
    let (u1, u2, u3) = (rng.uniform(), rng.uniform(), rng.uniform());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (t2, t3) = (std::f64::consts::TAU * u2, std::f64::consts::TAU * u3);
    UnitQuaternion::new_normalize(Quaternion::new(b * t3.cos(), a * t2.sin(), a * t2.cos(), b * t3.sin()))
}

pub fn init_episode(config: &PoseNoiseConfig, rng: &mut SplitMix64) -> Result<EpisodeNoiseState> {
    config.validate()?;
    let [k0, k1] = config.update_period;
    let update_period = rng.uniform_int(k0 as u64, k1 as u64) as u32;
    let jitter_prob = rng.uniform_range(config.jitter_prob[0], config.jitter_prob[1]);
    let failure_prob = rng.uniform_range(config.failure_prob[0], config.failure_prob[1]);
    let [b0, b1] = config.position_bias_mm;
    let position_bias = Vector3::from_fn(|_, _| rng.uniform_range(b0, b1) / 1000.0);
    let orientation_bias = random_axis_angle(rng, config.orientation_bias_deg);
    Ok(EpisodeNoiseState {
        update_period,
        jitter_prob,
        failure_prob,
        position_bias,
        orientation_bias,
        held: None,
        last_output: None,
        step: 0,
        config: config.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    Fresh,
    Held,
    Delayed,
    Replaced,
}

fn compose_rotation(q: &UnitQuaternion<f64>, base: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.angle() == 0.0 {
        *base
    } else {
        q * base
    }
}

impl EpisodeNoiseState {
    fn measure(&self, input: &Pose, rng: &mut SplitMix64) -> Pose {
        let [n0, n1] = self.config.position_noise_mm;
        let noise = Vector3::from_fn(|_, _| rng.uniform_range(n0, n1) / 1000.0);
        let rot_noise = random_axis_angle(rng, self.config.orientation_noise_deg);
        let orientation = compose_rotation(&rot_noise, &compose_rotation(&self.orientation_bias, &input.orientation));
        Pose::new(input.position + self.position_bias + noise, orientation)
    }

    fn replacement(&self, rng: &mut SplitMix64) -> Pose {
        let (lo, hi) = (self.config.replacement_min_m, self.config.replacement_max_m);
        let position = Vector3::from_fn(|a, _| rng.uniform_range(lo[a], hi[a]));
        Pose::new(position, uniform_rotation(rng))
    }

    /// Advances the episode by one step.
    pub fn step(&mut self, input: &Pose, rng: &mut SplitMix64) -> (Pose, StepEvent) {
        let t = self.step;
        self.step += 1;
        let mut event = StepEvent::Held;
        if t.is_multiple_of(self.update_period as u64) || self.held.is_none() {
            self.held = Some(self.measure(input, rng));
            event = StepEvent::Fresh;
        }
        let mut out = self.held.unwrap();
        let delayed = rng.chance(self.jitter_prob);
        let failed = rng.chance(self.failure_prob);
        if delayed {
            if let Some(prev) = self.last_output {
                out = prev;
                event = StepEvent::Delayed;
            }
        }
        if failed {
            out = self.replacement(rng);
            event = StepEvent::Replaced;
        }
        self.last_output = Some(out);
        (out, event)
    }
}

pub fn corrupt_stream_traced(
    poses: &[Pose],
    state: &mut EpisodeNoiseState,
    rng: &mut SplitMix64,
) -> Result<Vec<(Pose, StepEvent)>> {
    if poses.is_empty() {
        return Err(Error::Validation("pose stream is empty".into()));
    }
    Ok(poses.iter().map(|p| state.step(p, rng)).collect())
}

pub fn corrupt_stream(poses: &[Pose], state: &mut EpisodeNoiseState, rng: &mut SplitMix64) -> Result<Vec<Pose>> {
    Ok(corrupt_stream_traced(poses, state, rng)?.into_iter().map(|(p, _)| p).collect())
}

/// One line of a pose-stream JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseStreamRecord {
    pub step: u64,
    pub position_m: [f64; 3],
    pub quaternion_wxyz: [f64; 4],
}

impl PoseStreamRecord {
    pub fn new(step: u64, pose: &Pose) -> Self {
        Self {
            step,
            position_m: pose.position.into(),
            quaternion_wxyz: pose.wxyz(),
        }
    }

    pub fn pose(&self) -> Result<Pose> {
        Pose::from_wxyz(self.position_m, self.quaternion_wxyz)
    }
}

pub fn read_pose_stream(path: &Path) -> Result<Vec<PoseStreamRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_pose_stream(path: &Path, records: &[PoseStreamRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
