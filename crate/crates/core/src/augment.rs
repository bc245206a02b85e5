//! Pre-rasterization appearance augmentation.
//!
//! Each [`AugmentationLayer`] perturbs the SH color coefficients of groups of
//! Gaussians. A layer first fires with probability `p_aug`; each group then
//! fires independently with probability `p_cluster` and draws one offset
//! (`additive`) or factor (`scaling`) that every member of the group shares.
//! Geometry and opacity are never touched.
//!
//! Randomness: the layer stream supplies the gate draw and a layer seed.
//! Group `c` owns the keyed sub-stream `(layer_seed, c)`: its first draw is
//! the group gate, the following draws are the δ values in coefficient order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::SplitMix64;
use crate::scene::{GaussianScene, SH_LEN, SH_REST_LEN};

const APPLY_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    /// Every Gaussian is its own group.
    RandomNoise,
    SpatialCluster,
    ColorCluster,
    /// The whole scene is one group.
    GlobalShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Sh0,
    Shn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Additive,
    Scaling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationLayer {
    pub group: Group,
    pub targets: Vec<Target>,
    pub op: Operator,
    /// One scalar δ for the whole targeted vector instead of one per coefficient.
    #[serde(default)]
    pub uniform: bool,
    pub p_aug: f64,
    pub p_cluster: f64,
    pub range: [f64; 2],
}

impl AugmentationLayer {
    pub fn new(
        group: Group,
        targets: &[Target],
        op: Operator,
        uniform: bool,
        p_aug: f64,
        p_cluster: f64,
        range: [f64; 2],
    ) -> Self {
        Self {
            group,
            targets: targets.to_vec(),
            op,
            uniform,
            p_aug,
            p_cluster,
            range,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")))
            }
        };
        prob("p_aug", self.p_aug)?;
        prob("p_cluster", self.p_cluster)?;
        let [lo, hi] = self.range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("range [{lo}, {hi}] must be finite and ordered")));
        }
        if self.op == Operator::Scaling && lo <= 0.0 {
            return Err(Error::Config(format!(
                "scaling range [{lo}, {hi}] must be strictly positive"
            )));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("layer must target SH0, SHN or both".into()));
        }
        Ok(())
    }

    #[inline(always)]
    fn targets_sh0(&self) -> bool {
        self.targets.contains(&Target::Sh0)
    }

    #[inline(always)]
    fn targets_shn(&self) -> bool {
        self.targets.contains(&Target::Shn)
    }

    /// The δ vector for group `c`, or `None` if the group does not fire.
    /// Entries are laid out over the 48-long `[sh0, sh_rest]` vector;
    /// untargeted entries are never read.
    fn group_delta(&self, layer_seed: u64, c: u64) -> Option<[f64; SH_LEN]> {
        let stream = SplitMix64::keyed(layer_seed, &[c]);
        if !(stream.peek_uniform(0) < self.p_cluster) {
            return None;
        }
        let [lo, hi] = self.range;
        let mut delta = [0.0; SH_LEN];
        if self.uniform {
            delta.fill(lo + (hi - lo) * stream.peek_uniform(1));
            return Some(delta);
        }
        let (sh0, shn) = (self.targets_sh0(), self.targets_shn());
        let mut offset = 1;
        for (j, d) in delta.iter_mut().enumerate() {
            if (j < 3 && sh0) || (j >= 3 && shn) {
                *d = lo + (hi - lo) * stream.peek_uniform(offset);
                offset += 1;
            }
        }
        Some(delta)
    }
}

impl AugmentationLayer {
    /// Applies group `c`'s δ directly to one row, drawing exactly what
    /// [`AugmentationLayer::group_delta`] would. Returns whether the group fired.
    #[inline(always)]
    fn perturb_row(&self, layer_seed: u64, c: u64, r0: &mut [f32; 3], rn: &mut [f32; SH_REST_LEN]) -> bool {
        let stream = SplitMix64::keyed(layer_seed, &[c]);
        if !(stream.peek_uniform(0) < self.p_cluster) {
            return false;
        }
        match self.op {
            Operator::Additive => self.fill_row(&stream, r0, rn, |v, d| v + d),
            Operator::Scaling => self.fill_row(&stream, r0, rn, |v, d| v * d),
        }
        true
    }

    #[inline(always)]
    fn fill_row<F: Fn(f64, f64) -> f64>(&self, stream: &SplitMix64, r0: &mut [f32; 3], rn: &mut [f32; SH_REST_LEN], f: F) {
        let [lo, hi] = self.range;
        let w = hi - lo;
        let (do0, don) = (self.targets_sh0(), self.targets_shn());
        if self.uniform {
            let d = lo + w * stream.peek_uniform(1);
            if do0 {
                r0.iter_mut().for_each(|v| *v = f(*v as f64, d) as f32);
            }
            if don {
                rn.iter_mut().for_each(|v| *v = f(*v as f64, d) as f32);
            }
            return;
        }
        // Draw first, then apply. Every loop has a constant trip count so
        // that it vectorizes.
        let mut delta = [0f64; SH_LEN];
        let draw = |d: &mut [f64]| {
            for (j, x) in d.iter_mut().enumerate() {
                *x = lo + w * stream.peek_uniform(1 + j as u64);
            }
        };
        match (do0, don) {
            (true, true) => draw(&mut delta),
            (true, false) => draw(&mut delta[..3]),
            (false, true) => draw(&mut delta[3..]),
            (false, false) => return,
        }
        if do0 {
            for (v, &d) in r0.iter_mut().zip(&delta[..3]) {
                *v = f(*v as f64, d) as f32;
            }
        }
        if don {
            for (v, &d) in rn.iter_mut().zip(&delta[3..]) {
                *v = f(*v as f64, d) as f32;
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationStack {
    pub layers: Vec<AugmentationLayer>,
}

impl AugmentationStack {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()
                .map_err(|e| Error::Config(format!("layer {i}: {e}")))?;
        }
        Ok(())
    }

    /// Resolves a named stack (`"table1"`, `"none"`).
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "table1" | "default" => Ok(default_stack()),
            "none" | "empty" => Ok(Self::empty()),
            other => Err(Error::Config(format!("unknown augmentation stack '{other}'"))),
        }
    }

    /// Accepts a stack name, a bare array of layers, or `{"layers": [...]}`.
    pub fn from_value(v: serde_json::Value) -> Result<Self> {
        let stack = match v {
            serde_json::Value::String(name) => Self::named(&name)?,
            serde_json::Value::Array(_) => Self {
                layers: serde_json::from_value(v)?,
            },
            other => serde_json::from_value(other)?,
        };
        stack.validate()?;
        Ok(stack)
    }

    /// Loads a stack from a JSON file, or resolves `spec` as a stack name if
    /// no such file exists.
    pub fn load(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if path.is_file() {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Self::from_value(serde_json::from_str(&text)?)
        } else {
            Self::named(spec)
        }
    }
}

/// The eleven-layer default stack.
pub fn default_stack() -> AugmentationStack {
    use Group::*;
    use Operator::*;
    use Target::*;
    let l = AugmentationLayer::new;
    AugmentationStack {
        layers: vec![
            l(RandomNoise, &[Sh0, Shn], Additive, false, 0.2, 1.0, [-0.1, 0.1]),
            l(RandomNoise, &[Sh0, Shn], Scaling, false, 0.2, 1.0, [0.8, 1.2]),
            l(SpatialCluster, &[Sh0, Shn], Additive, false, 0.8, 0.10, [-0.1, 0.1]),
            l(SpatialCluster, &[Sh0, Shn], Scaling, false, 0.8, 0.20, [0.9, 1.1]),
            l(ColorCluster, &[Sh0], Additive, false, 0.8, 0.10, [-0.2, 0.2]),
            l(ColorCluster, &[Shn], Additive, false, 0.8, 0.10, [-0.1, 0.1]),
            l(ColorCluster, &[Sh0, Shn], Scaling, false, 0.8, 0.10, [0.6, 1.4]),
            l(GlobalShift, &[Shn], Additive, false, 0.2, 1.0, [-0.1, 0.1]),
            l(GlobalShift, &[Sh0, Shn], Scaling, false, 0.2, 1.0, [0.6, 1.4]),
            l(GlobalShift, &[Sh0, Shn], Additive, true, 0.8, 1.0, [-0.2, 0.2]),
            l(GlobalShift, &[Sh0], Scaling, true, 0.8, 1.0, [0.9, 1.4]),
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LayerOutcome {
    pub fired: bool,
    pub groups_fired: usize,
}

fn check_labels(assignment: &ClusterAssignment, n: usize) -> Result<()> {
    if assignment.labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n} cluster labels"),
            actual: assignment.labels.len().to_string(),
        });
    }
    if let Some(i) = assignment.labels.iter().position(|&l| l as usize >= assignment.k) {
        return Err(Error::Validation(format!(
            "cluster label {} of Gaussian {i} out of range for k={}",
            assignment.labels[i], assignment.k
        )));
    }
    Ok(())
}

#[inline(always)]
fn perturb(v: &mut f32, d: f64, op: Operator) {
    *v = match op {
        Operator::Additive => (*v as f64 + d) as f32,
        Operator::Scaling => (*v as f64 * d) as f32,
    };
}

/// Applies one layer in place. `assignment` supplies the groups for the
/// cluster layers and is ignored by `random_noise` and `global_shift`.
pub fn apply_layer(
    sh0: &mut [[f32; 3]],
    sh_rest: &mut [[f32; SH_REST_LEN]],
    assignment: &ClusterAssignment,
    layer: &AugmentationLayer,
    rng: &mut SplitMix64,
) -> Result<LayerOutcome> {
    layer.validate()?;
    if sh0.len() != sh_rest.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} sh_rest rows", sh0.len()),
            actual: sh_rest.len().to_string(),
        });
    }
    let n = sh0.len();
    let labels = match layer.group {
        Group::SpatialCluster | Group::ColorCluster => {
            check_labels(assignment, n)?;
            Some((assignment.labels.as_slice(), assignment.k))
        }
        _ => None,
    };
    Ok(apply_validated(sh0, sh_rest, labels, layer, rng))
}

fn apply_validated(
    sh0: &mut [[f32; 3]],
    sh_rest: &mut [[f32; SH_REST_LEN]],
    labels: Option<(&[u32], usize)>,
    layer: &AugmentationLayer,
    rng: &mut SplitMix64,
) -> LayerOutcome {
    if !rng.chance(layer.p_aug) {
        return LayerOutcome::default();
    }
    let layer_seed = rng.next();
    let (do0, don) = (layer.targets_sh0(), layer.targets_shn());
    let op = layer.op;

    let apply_row = |r0: &mut [f32; 3], rn: &mut [f32; SH_REST_LEN], delta: &[f64; SH_LEN]| {
        if do0 {
            for (v, &d) in r0.iter_mut().zip(&delta[..3]) {
                perturb(v, d, op);
            }
        }
        if don {
            for (v, &d) in rn.iter_mut().zip(&delta[3..]) {
                perturb(v, d, op);
            }
        }
    };

    let groups_fired = match (layer.group, labels) {
        (Group::RandomNoise, _) => {
            let fired = std::sync::atomic::AtomicUsize::new(0);
            par::for_each_chunk_pair_mut(sh0, sh_rest, APPLY_CHUNK, |c, a, b| {
                let mut local = 0;
                for (k, (r0, rn)) in a.iter_mut().zip(b.iter_mut()).enumerate() {
                    let i = (c * APPLY_CHUNK + k) as u64;
                    if layer.perturb_row(layer_seed, i, r0, rn) {
                        local += 1;
                    }
                }
                fired.fetch_add(local, std::sync::atomic::Ordering::Relaxed);
            });
            fired.into_inner()
        }
        (Group::GlobalShift, _) => match layer.group_delta(layer_seed, 0) {
            Some(delta) => {
                par::for_each_chunk_pair_mut(sh0, sh_rest, APPLY_CHUNK, |_, a, b| {
                    for (r0, rn) in a.iter_mut().zip(b.iter_mut()) {
                        apply_row(r0, rn, &delta);
                    }
                });
                1
            }
            None => 0,
        },
        (_, Some((labels, k))) => {
            let deltas: Vec<Option<[f64; SH_LEN]>> =
                (0..k as u64).map(|c| layer.group_delta(layer_seed, c)).collect();
            let fired = deltas.iter().filter(|d| d.is_some()).count();
            if fired > 0 {
                par::for_each_chunk_pair_mut(sh0, sh_rest, APPLY_CHUNK, |c, a, b| {
                    let base = c * APPLY_CHUNK;
                    for (k, (r0, rn)) in a.iter_mut().zip(b.iter_mut()).enumerate() {
                        if let Some(delta) = &deltas[labels[base + k] as usize] {
                            apply_row(r0, rn, delta);
                        }
                    }
                });
            }
            fired
        }
        (_, None) => unreachable!("cluster layers are validated with labels"),
    };
    LayerOutcome {
        fired: true,
        groups_fired,
    }
}

/// Applies `stack` in order to a copy of `scene`. Layer `i` draws from the
/// stream keyed `(seed, i)`.
pub fn apply_stack(
    scene: &GaussianScene,
    spatial: &ClusterAssignment,
    color: &ClusterAssignment,
    stack: &AugmentationStack,
    seed: u64,
) -> Result<GaussianScene> {
    let mut out = GaussianScene::default();
    apply_stack_into(scene, spatial, color, stack, seed, &mut out)?;
    Ok(out)
}

/// [`apply_stack`] writing into `out`, reusing its allocations.
pub fn apply_stack_into(
    scene: &GaussianScene,
    spatial: &ClusterAssignment,
    color: &ClusterAssignment,
    stack: &AugmentationStack,
    seed: u64,
    out: &mut GaussianScene,
) -> Result<()> {
    stack.validate()?;
    let n = scene.len();
    let uses = |g: Group| stack.layers.iter().any(|l| l.group == g);
    if uses(Group::SpatialCluster) {
        check_labels(spatial, n)?;
    }
    if uses(Group::ColorCluster) {
        check_labels(color, n)?;
    }
    // Gates and per-group deltas are drawn up front; the rows are then
    // visited once with every fired layer applied in stack order, which is
    // equivalent to applying the layers one after another.
    let plans: Vec<LayerPlan> = stack
        .layers
        .iter()
        .enumerate()
        .filter_map(|(i, layer)| {
            let mut rng = layer_stream(seed, i);
            if !rng.chance(layer.p_aug) {
                return None;
            }
            let layer_seed = rng.next();
            let table = |a: &'_ ClusterAssignment| (0..a.k as u64).map(|c| layer.group_delta(layer_seed, c)).collect();
            Some(match layer.group {
                Group::RandomNoise => LayerPlan::PerRow { layer, layer_seed },
                Group::GlobalShift => LayerPlan::Table {
                    layer,
                    labels: None,
                    deltas: vec![layer.group_delta(layer_seed, 0)],
                },
                Group::SpatialCluster => LayerPlan::Table {
                    layer,
                    labels: Some(&spatial.labels),
                    deltas: table(spatial),
                },
                Group::ColorCluster => LayerPlan::Table {
                    layer,
                    labels: Some(&color.labels),
                    deltas: table(color),
                },
            })
        })
        .filter(|p| !matches!(p, LayerPlan::Table { deltas, .. } if deltas.iter().all(Option::is_none)))
        .collect();

    out.copy_from(scene);
    if plans.is_empty() {
        return Ok(());
    }
    par::for_each_chunk_pair_mut(&mut out.sh0, &mut out.sh_rest, APPLY_CHUNK, |c, a, b| {
        apply_plans(&plans, c * APPLY_CHUNK, a, b)
    });
    Ok(())
}

fn apply_plans(plans: &[LayerPlan], base: usize, sh0: &mut [[f32; 3]], sh_rest: &mut [[f32; SH_REST_LEN]]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") && std::arch::is_x86_feature_detected!("avx512dq") {
        // SAFETY: the features enabled on the callee were detected above.
        return unsafe { apply_plans_avx512(plans, base, sh0, sh_rest) };
    }
    apply_plans_portable(plans, base, sh0, sh_rest)
}

/// Same code compiled with 64-bit vector multiplies available.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,avx512dq,avx512vl")]
unsafe fn apply_plans_avx512(plans: &[LayerPlan], base: usize, sh0: &mut [[f32; 3]], sh_rest: &mut [[f32; SH_REST_LEN]]) {
    apply_plans_portable(plans, base, sh0, sh_rest)
}

#[inline(always)]
fn apply_plans_portable(plans: &[LayerPlan], base: usize, sh0: &mut [[f32; 3]], sh_rest: &mut [[f32; SH_REST_LEN]]) {
    for (k, (r0, rn)) in sh0.iter_mut().zip(sh_rest.iter_mut()).enumerate() {
        let i = base + k;
        for plan in plans {
            match plan {
                LayerPlan::PerRow { layer, layer_seed } => {
                    layer.perturb_row(*layer_seed, i as u64, r0, rn);
                }
                LayerPlan::Table { layer, labels, deltas } => {
                    let g = labels.map_or(0, |l| l[i] as usize);
                    if let Some(delta) = &deltas[g] {
                        apply_delta(layer, r0, rn, delta);
                    }
                }
            }
        }
    }
}

enum LayerPlan<'a> {
    /// Every Gaussian is its own group; deltas are drawn while visiting rows.
    PerRow { layer: &'a AugmentationLayer, layer_seed: u64 },
    Table {
        layer: &'a AugmentationLayer,
        labels: Option<&'a [u32]>,
        deltas: Vec<Option<[f64; SH_LEN]>>,
    },
}

#[inline(always)]
fn apply_delta(layer: &AugmentationLayer, r0: &mut [f32; 3], rn: &mut [f32; SH_REST_LEN], delta: &[f64; SH_LEN]) {
    if layer.targets_sh0() {
        r0.iter_mut().zip(&delta[..3]).for_each(|(v, &d)| perturb(v, d, layer.op));
    }
    if layer.targets_shn() {
        rn.iter_mut().zip(&delta[3..]).for_each(|(v, &d)| perturb(v, d, layer.op));
    }
}

/// The stream [`apply_stack`] hands to layer `index`.
pub fn layer_stream(seed: u64, index: usize) -> SplitMix64 {
    SplitMix64::keyed(seed, &[index as u64])
}
