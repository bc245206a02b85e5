//! k-means partitioning of Gaussians by position or by DC color.
//!
//! Lloyd iterations with k-means++ seeding. Work is split into fixed-size
//! chunks whose partial sums are combined in chunk order, so the result is
//! bit-identical for any thread count.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::SplitMix64;
use crate::scene::GaussianScene;

pub const DEFAULT_SPATIAL_CLUSTERS: usize = 64;
pub const DEFAULT_COLOR_CLUSTERS: usize = 32;

const CHUNK: usize = 2048;
const SEEDING_STREAM: u64 = 0x6b6d_6561_6e73;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Effective cluster count after clamping.
    pub k: usize,
    pub dim: usize,
    pub labels: Vec<u32>,
    /// `k × dim`, row-major.
    pub centroids: Vec<f64>,
    pub inertia: f64,
    /// Inertia after each assignment step, ending with the final assignment.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterAssignment {
    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    /// Point indices for each cluster, in ascending order.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i as u32);
        }
        out
    }

    /// Rebuilds an assignment from stored labels; centroids become cluster means.
    pub fn from_labels(points: &[f64], dim: usize, k: usize, labels: Vec<u32>) -> Result<Self> {
        if dim == 0 || points.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: format!("{} labels", points.len() / dim.max(1)),
                actual: labels.len().to_string(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= k) {
            return Err(Error::Validation(format!("label {bad} out of range for k={k}")));
        }
        let mut first = vec![usize::MAX; k];
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            let l = l as usize;
            if first[l] == usize::MAX {
                first[l] = i;
            }
            counts[l] += 1;
            for d in 0..dim {
                sums[l * dim + d] += points[i * dim + d] - points[first[l] * dim + d];
            }
        }
        for j in 0..k {
            for d in 0..dim {
                let base = if counts[j] > 0 { points[first[j] * dim + d] } else { 0.0 };
                sums[j * dim + d] = base + sums[j * dim + d] / counts[j].max(1) as f64;
            }
        }
        let inertia = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| sq_dist(&points[i * dim..(i + 1) * dim], &sums[l as usize * dim..(l as usize + 1) * dim]))
            .sum();
        Ok(Self {
            k,
            dim,
            labels,
            centroids: sums,
            inertia,
            inertia_history: vec![inertia],
            iterations: 0,
        })
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn count_distinct(points: &[f64], dim: usize) -> usize {
    let mut rows: Vec<Vec<u64>> = points
        .chunks_exact(dim)
        .map(|r| r.iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    rows.sort_unstable();
    rows.dedup();
    rows.len()
}

struct AssignStep {
    labels: Vec<u32>,
    dists: Vec<f64>,
    /// Per-cluster sums of offsets from the current centroid.
    sums: Vec<f64>,
    counts: Vec<usize>,
    inertia: f64,
}

fn assign(points: &[f64], dim: usize, centroids: &[f64], k: usize) -> AssignStep {
    let n = points.len() / dim;
    let chunks = n.div_ceil(CHUNK);
    let partials = par::map_range(chunks, |c| {
        let start = c * CHUNK;
        let end = (start + CHUNK).min(n);
        let mut labels = Vec::with_capacity(end - start);
        let mut dists = Vec::with_capacity(end - start);
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        let mut inertia = 0.0;
        for i in start..end {
            let p = &points[i * dim..(i + 1) * dim];
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for j in 0..k {
                let d = sq_dist(p, &centroids[j * dim..(j + 1) * dim]);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            labels.push(best as u32);
            dists.push(best_d);
            counts[best] += 1;
            for d in 0..dim {
                sums[best * dim + d] += p[d] - centroids[best * dim + d];
            }
            inertia += best_d;
        }
        (labels, dists, sums, counts, inertia)
    });
    let mut out = AssignStep {
        labels: Vec::with_capacity(n),
        dists: Vec::with_capacity(n),
        sums: vec![0.0; k * dim],
        counts: vec![0; k],
        inertia: 0.0,
    };
    for (labels, dists, sums, counts, inertia) in partials {
        out.labels.extend(labels);
        out.dists.extend(dists);
        for (a, b) in out.sums.iter_mut().zip(&sums) {
            *a += b;
        }
        for (a, b) in out.counts.iter_mut().zip(&counts) {
            *a += b;
        }
        out.inertia += inertia;
    }
    out
}

/// Moves every empty cluster's centroid onto the point currently farthest
/// from its own centroid. Returns whether anything changed.
fn repair_empty(points: &[f64], dim: usize, centroids: &mut [f64], step: &AssignStep) -> bool {
    let empties: Vec<usize> = (0..step.counts.len()).filter(|&j| step.counts[j] == 0).collect();
    if empties.is_empty() {
        return false;
    }
    let mut order: Vec<usize> = (0..step.dists.len()).collect();
    // Farthest first; index breaks ties so the choice is deterministic.
    order.sort_by(|&a, &b| step.dists[b].total_cmp(&step.dists[a]).then(a.cmp(&b)));
    for (j, &i) in empties.iter().zip(&order) {
        centroids[j * dim..(j + 1) * dim].copy_from_slice(&points[i * dim..(i + 1) * dim]);
    }
    true
}

fn seed_plus_plus(points: &[f64], dim: usize, k: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let n = points.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.uniform_int(0, n as u64 - 1) as usize;
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = par::map_range(n, |i| sq_dist(&points[i * dim..(i + 1) * dim], &centroids[..dim]));
    while centroids.len() < k * dim {
        let chunk_sums = par::map_range(n.div_ceil(CHUNK), |c| {
            d2[c * CHUNK..((c + 1) * CHUNK).min(n)].iter().sum::<f64>()
        });
        let total: f64 = chunk_sums.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.uniform() * total;
            let mut chosen = None;
            'outer: for (c, &cs) in chunk_sums.iter().enumerate() {
                if r >= cs {
                    r -= cs;
                    continue;
                }
                for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    if d2[i] > 0.0 && r < d2[i] {
                        chosen = Some(i);
                        break 'outer;
                    }
                    r -= d2[i];
                }
            }
            // Rounding can walk r past the end; fall back to the last weighted point.
            chosen.unwrap_or_else(|| (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(0))
        } else {
            rng.uniform_int(0, n as u64 - 1) as usize
        };
        let c = points[pick * dim..(pick + 1) * dim].to_vec();
        centroids.extend_from_slice(&c);
        let update = par::map_range(n, |i| d2[i].min(sq_dist(&points[i * dim..(i + 1) * dim], &c)));
        d2 = update;
    }
    centroids
}

/// Lloyd's k-means over `n × dim` row-major points.
///
/// `k` is clamped to the number of distinct points so every cluster can be
/// kept non-empty.
pub fn kmeans(points: &[f64], dim: usize, params: KMeansParams) -> Result<ClusterAssignment> {
    if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
        return Err(Error::Validation(format!(
            "kmeans needs a non-empty n×{dim} point array (got {} values)",
            points.len()
        )));
    }
    if params.k == 0 {
        return Err(Error::Config("kmeans requires k ≥ 1".into()));
    }
    if let Some(i) = points.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("point {} has a non-finite coordinate", i / dim)));
    }
    let n = points.len() / dim;
    let k = params.k.min(n).min(count_distinct(points, dim));

    let mut rng = SplitMix64::keyed(params.seed, &[SEEDING_STREAM]);
    let mut centroids = seed_plus_plus(points, dim, k, &mut rng);

    let scale = {
        let mean: Vec<f64> = (0..dim)
            .map(|d| (0..n).map(|i| points[i * dim + d]).sum::<f64>() / n as f64)
            .collect();
        let spread = (0..n).map(|i| sq_dist(&points[i * dim..(i + 1) * dim], &mean)).sum::<f64>() / n as f64;
        if spread > 0.0 { spread.sqrt() } else { 1.0 }
    };

    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..params.max_iter {
        iterations += 1;
        let step = assign(points, dim, &centroids, k);
        history.push(step.inertia);
        let mut next = centroids.clone();
        for j in 0..k {
            if step.counts[j] > 0 {
                for d in 0..dim {
                    next[j * dim + d] += step.sums[j * dim + d] / step.counts[j] as f64;
                }
            }
        }
        repair_empty(points, dim, &mut next, &step);
        let shift = (0..k)
            .map(|j| sq_dist(&next[j * dim..(j + 1) * dim], &centroids[j * dim..(j + 1) * dim]).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift / scale < params.tol {
            break;
        }
    }

    // Final assignment against the returned centroids, repairing any
    // cluster that ended up empty.
    let mut step = assign(points, dim, &centroids, k);
    for _ in 0..k + 8 {
        if !repair_empty(points, dim, &mut centroids, &step) {
            break;
        }
        step = assign(points, dim, &centroids, k);
    }
    history.push(step.inertia);

    Ok(ClusterAssignment {
        k,
        dim,
        labels: step.labels,
        centroids,
        inertia: step.inertia,
        inertia_history: history,
        iterations,
    })
}

fn flatten3(rows: &[[f32; 3]]) -> Vec<f64> {
    rows.iter().flat_map(|r| r.iter().map(|&v| v as f64)).collect()
}

pub fn spatial_points(scene: &GaussianScene) -> Vec<f64> {
    flatten3(&scene.positions)
}

pub fn color_points(scene: &GaussianScene) -> Vec<f64> {
    flatten3(&scene.sh0)
}

/// k-means over Gaussian positions (default k = 64).
pub fn spatial_clusters(scene: &GaussianScene, k: usize, seed: u64) -> Result<ClusterAssignment> {
    kmeans(&spatial_points(scene), 3, KMeansParams::new(k, seed))
}

/// k-means over raw DC SH coefficients (default k = 32).
pub fn color_clusters(scene: &GaussianScene, k: usize, seed: u64) -> Result<ClusterAssignment> {
    kmeans(&color_points(scene), 3, KMeansParams::new(k, seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterKind {
    Spatial,
    Color,
}

/// Sidecar record that lets a pipeline skip re-clustering an unchanged scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCacheEntry {
    pub scene_hash: String,
    pub kind: ClusterKind,
    pub requested_k: usize,
    pub k: usize,
    pub seed: u64,
    pub labels: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterCache {
    pub entries: Vec<ClusterCacheEntry>,
}

impl ClusterCache {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    /// Returns the cached assignment or computes and records a new one.
    pub fn get_or_compute(
        &mut self,
        scene: &GaussianScene,
        kind: ClusterKind,
        k: usize,
        seed: u64,
    ) -> Result<ClusterAssignment> {
        let hash = scene.content_hash();
        let points = match kind {
            ClusterKind::Spatial => spatial_points(scene),
            ClusterKind::Color => color_points(scene),
        };
        if let Some(e) = self
            .entries
            .iter()
            .find(|e| e.scene_hash == hash && e.kind == kind && e.requested_k == k && e.seed == seed)
        {
            if e.labels.len() == scene.len() {
                return ClusterAssignment::from_labels(&points, 3, e.k, e.labels.clone());
            }
        }
        let a = kmeans(&points, 3, KMeansParams::new(k, seed))?;
        self.entries.push(ClusterCacheEntry {
            scene_hash: hash,
            kind,
            requested_k: k,
            k: a.k,
            seed,
            labels: a.labels.clone(),
        });
        Ok(a)
    }
}
