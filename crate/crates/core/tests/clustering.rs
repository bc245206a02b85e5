use splatsynth::cluster::{kmeans, ClusterAssignment, ClusterCache, ClusterKind, KMeansParams};
use splatsynth::par::with_threads;
use splatsynth::SplitMix64;

fn blobs(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    let centers = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.5], [0.5, 0.5, 1.0]];
    let mut out = Vec::with_capacity(n * 3);
    for i in 0..n {
        let c = centers[i % centers.len()];
        for a in c {
            out.push(a + rng.uniform_range(-0.1, 0.1));
        }
    }
    out
}

fn sq(points: &[f64], i: usize, c: &[f64]) -> f64 {
    (0..3).map(|d| (points[i * 3 + d] - c[d]).powi(2)).sum()
}

#[test]
fn inertia_never_increases() {
    let pts = blobs(5000, 1);
    let a = kmeans(&pts, 3, KMeansParams::new(16, 7)).unwrap();
    for w in a.inertia_history.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", a.inertia_history);
    }
    assert_eq!(*a.inertia_history.last().unwrap(), a.inertia);
}

#[test]
fn assignment_is_locally_optimal() {
    let pts = blobs(4000, 2);
    let a = kmeans(&pts, 3, KMeansParams::new(12, 3)).unwrap();
    for i in 0..4000 {
        let own = sq(&pts, i, a.centroid(a.labels[i] as usize));
        for j in 0..a.k {
            assert!(own <= sq(&pts, i, a.centroid(j)) + 1e-12);
        }
    }
    // Centroids are the means of their members.
    for (j, m) in a.members().iter().enumerate() {
        assert!(!m.is_empty());
        for d in 0..3 {
            let mean = m.iter().map(|&i| pts[i as usize * 3 + d]).sum::<f64>() / m.len() as f64;
            assert!((mean - a.centroid(j)[d]).abs() < 1e-9);
        }
    }
}

#[test]
fn deterministic_and_thread_independent() {
    let pts = blobs(9000, 3);
    let p = KMeansParams::new(20, 11);
    let one = with_threads(Some(1), || kmeans(&pts, 3, p).unwrap());
    let four = with_threads(Some(4), || kmeans(&pts, 3, p).unwrap());
    let again = kmeans(&pts, 3, p).unwrap();
    assert_eq!(one, four);
    assert_eq!(one, again);
    let other = kmeans(&pts, 3, KMeansParams::new(20, 12)).unwrap();
    assert_ne!(one.labels, other.labels);
}

#[test]
fn k_clamped_to_distinct_points() {
    let pts = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
    let a = kmeans(&pts, 3, KMeansParams::new(8, 0)).unwrap();
    assert_eq!(a.k, 2);
    assert_eq!(a.inertia, 0.0);
    assert_eq!(a.labels[0], a.labels[2]);
    assert_ne!(a.labels[0], a.labels[1]);
}

#[test]
fn invalid_inputs_rejected() {
    assert!(kmeans(&[], 3, KMeansParams::new(2, 0)).is_err());
    assert!(kmeans(&[0.0, 1.0, 2.0], 3, KMeansParams::new(0, 0)).is_err());
    assert!(kmeans(&[0.0, 1.0], 3, KMeansParams::new(1, 0)).is_err());
    assert!(kmeans(&[f64::NAN, 0.0, 0.0], 3, KMeansParams::new(1, 0)).is_err());
}

#[test]
fn from_labels_recovers_the_assignment() {
    let pts = blobs(1000, 4);
    let a = kmeans(&pts, 3, KMeansParams::new(6, 1)).unwrap();
    let b = ClusterAssignment::from_labels(&pts, 3, a.k, a.labels.clone()).unwrap();
    assert_eq!(a.labels, b.labels);
    for j in 0..a.k {
        for d in 0..3 {
            assert!((a.centroid(j)[d] - b.centroid(j)[d]).abs() < 1e-12);
        }
    }
}

#[test]
fn cache_survives_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let scene = splatsynth::synth::synthetic_object(2000, 3);
    let mut cache = ClusterCache::default();
    let a = cache.get_or_compute(&scene, ClusterKind::Spatial, 16, 5).unwrap();
    cache.save(&path).unwrap();
    let mut loaded = ClusterCache::load(&path).unwrap();
    let b = loaded.get_or_compute(&scene, ClusterKind::Spatial, 16, 5).unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!(loaded.entries.len(), 1);
    loaded.get_or_compute(&scene, ClusterKind::Color, 16, 5).unwrap();
    assert_eq!(loaded.entries.len(), 2);
}
