//! K-means with careful seeding, plus small-cluster reassignment.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::matrix::{squared_distance, Matrix};

pub const DEFAULT_MAX_ITERS: usize = 300;

#[derive(Debug, Error, PartialEq)]
pub enum KMeansError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the number of points ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("non-finite point coordinates")]
    NonFinite,
    #[error("no large cluster exists (every cluster has fewer than {delta} members)")]
    NoLargeCluster { delta: usize },
    #[error("assignments reference cluster {0}, which does not exist")]
    BadAssignment(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// `k × dim`.
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    /// Objective after every centroid update.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of empty-cluster repairs performed.
    pub repairs: usize,
}

impl KMeansFit {
    pub fn objective(&self, points: &Matrix) -> f64 {
        objective(points, &self.centroids, &self.assignments)
    }
}

/// Sum of squared distances of each point to its assigned centroid.
pub fn objective(points: &Matrix, centroids: &Matrix, assignments: &[usize]) -> f64 {
    points
        .iter_rows()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p, centroids.row(a)))
        .sum()
}

/// Index of the nearest row of `centroids` (lowest index on ties) and its
/// squared distance, restricted to `allowed` when given.
pub fn nearest(point: &[f64], centroids: &Matrix, allowed: Option<&[bool]>) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (j, c) in centroids.iter_rows().enumerate() {
        if allowed.is_some_and(|a| !a[j]) {
            continue;
        }
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_centroids(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = points.rows();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = points
        .iter_rows()
        .map(|p| squared_distance(p, points.row(first)))
        .collect();

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            let mut last_positive = 0;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                last_positive = i;
                acc += w;
                if acc > target {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or(last_positive)
        } else {
            // Fewer distinct points than k.
            (0..n).find(|&i| !taken[i]).expect("n >= k")
        };
        chosen.push(next);
        taken[next] = true;
        for (i, p) in points.iter_rows().enumerate() {
            let d = squared_distance(p, points.row(next));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    points.select_rows(&chosen)
}

/// Lloyd iterations from k-means++ seeding. Stops when the assignment vector is
/// unchanged or after `max_iters` updates. Deterministic for a given seed.
pub fn fit_kmeans(points: &Matrix, k: usize, seed: u64) -> Result<KMeansFit, KMeansError> {
    fit_kmeans_with(points, k, seed, DEFAULT_MAX_ITERS)
}

pub fn fit_kmeans_with(
    points: &Matrix,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansFit, KMeansError> {
    let n = points.rows();
    if k == 0 {
        return Err(KMeansError::ZeroK);
    }
    if k > n {
        return Err(KMeansError::KTooLarge { k, n });
    }
    if !points.all_finite() {
        return Err(KMeansError::NonFinite);
    }
    let dim = points.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);

    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut repairs = 0;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iters {
        let mut next: Vec<usize> = points
            .iter_rows()
            .map(|p| nearest(p, &centroids, None).0)
            .collect();
        repairs += repair_empty(points, &mut centroids, &mut next);

        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
        iterations += 1;

        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter_rows().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums.row_mut(a).iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            // repair_empty guarantees counts[j] > 0
            let c = counts[j] as f64;
            for (dst, s) in centroids.row_mut(j).iter_mut().zip(sums.row(j)) {
                *dst = s / c;
            }
        }
        history.push(objective(points, &centroids, &assignments));
    }

    Ok(KMeansFit {
        centroids,
        assignments,
        objective_history: history,
        iterations,
        converged,
        repairs,
    })
}

/// Give every empty cluster the point of the largest cluster farthest from its
/// centroid. Returns the number of repairs.
fn repair_empty(points: &Matrix, centroids: &mut Matrix, assignments: &mut [usize]) -> usize {
    let k = centroids.rows();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    let mut repairs = 0;
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let largest = (0..k)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .expect("k >= 1");
        let mut far = (usize::MAX, -1.0);
        for (i, p) in points.iter_rows().enumerate() {
            if assignments[i] != largest {
                continue;
            }
            let d = squared_distance(p, centroids.row(largest));
            if d > far.1 {
                far = (i, d);
            }
        }
        let (idx, _) = far;
        let p = points.row(idx).to_vec();
        centroids.row_mut(j).copy_from_slice(&p);
        assignments[idx] = j;
        counts[largest] -= 1;
        counts[j] += 1;
        repairs += 1;
        tracing::debug!(cluster = j, from = largest, point = idx, "repaired empty cluster");
    }
    repairs
}

/// Result of merging clusters smaller than `delta` into their nearest large
/// neighbour. Centroids are left untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct Reassignment {
    pub assignments: Vec<usize>,
    /// Retired cluster → surviving cluster.
    pub map: BTreeMap<usize, usize>,
    pub surviving: Vec<bool>,
}

pub fn cluster_sizes(assignments: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    sizes
}

pub fn reassign_small_clusters(
    centroids: &Matrix,
    assignments: &[usize],
    delta: usize,
) -> Result<Reassignment, KMeansError> {
    let k = centroids.rows();
    if let Some(&bad) = assignments.iter().find(|&&a| a >= k) {
        return Err(KMeansError::BadAssignment(bad));
    }
    let sizes = cluster_sizes(assignments, k);
    let surviving: Vec<bool> = sizes.iter().map(|&s| s >= delta).collect();
    if !surviving.iter().any(|&s| s) {
        return Err(KMeansError::NoLargeCluster { delta });
    }
    let mut map = BTreeMap::new();
    for j in (0..k).filter(|&j| !surviving[j]) {
        let (target, _) = nearest(centroids.row(j), centroids, Some(&surviving));
        map.insert(j, target);
    }
    let assignments = assignments
        .iter()
        .map(|a| map.get(a).copied().unwrap_or(*a))
        .collect();
    Ok(Reassignment {
        assignments,
        map,
        surviving,
    })
}
