//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::IngestError;
use crate::scalar::Scalar;

pub const MAX_ITERATIONS: usize = 300;

#[derive(Clone, Debug)]
pub struct KMeans<S> {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<S>>,
    /// Within-cluster sum of squares of the final assignment.
    pub wcss: S,
    /// WCSS after every assignment step, first to last.
    pub wcss_history: Vec<S>,
    pub iterations: usize,
}

fn sq_dist<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(S::zero(), |acc, v| acc + v)
}

fn seed_centroids<S: Scalar>(points: &[Vec<S>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<S>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p, &centroids[0]).as_f64())
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&w| {
                    acc += w;
                    acc > target
                })
                .unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(n - 1))
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(p, &c).as_f64());
        }
        centroids.push(c);
    }
    centroids
}

/// Nearest centroid index (ties by smallest index) and the squared distance to it.
fn nearest<S: Scalar>(p: &[S], centroids: &[Vec<S>]) -> (usize, S) {
    let mut best = (0, sq_dist(p, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Clusters `points` into `k` groups. Iterates until the assignment is a fixed point or
/// [`MAX_ITERATIONS`] is reached. An emptied cluster keeps its previous centroid.
pub fn kmeans<S: Scalar>(points: &[Vec<S>], k: usize, seed: u64) -> Result<KMeans<S>, IngestError> {
    if points.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    if k == 0 || k > points.len() {
        return Err(IngestError::InvalidClusterCount {
            k,
            points: points.len(),
        });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(IngestError::DimensionMismatch);
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(IngestError::NonFinite);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let mut wcss = S::zero();
        let next: Vec<usize> = points
            .iter()
            .map(|p| {
                let (j, d) = nearest(p, &centroids);
                wcss += d;
                j
            })
            .collect();
        if let Some(&prev) = history.last() {
            let slack = S::of(1e-9) * (S::one() + prev);
            debug_assert!(wcss <= prev + slack, "WCSS increased: {prev} -> {wcss}");
        }
        history.push(wcss);
        iterations += 1;
        if next == assignments || iterations >= MAX_ITERATIONS {
            assignments = next;
            break;
        }
        assignments = next;

        let mut sums = vec![vec![S::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&assignments) {
            counts[j] += 1;
            for (s, &v) in sums[j].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let n = S::of_usize(counts[j]);
                centroids[j] = sums[j].iter().map(|&s| s / n).collect();
            }
        }
    }
    let wcss = *history.last().expect("at least one assignment step");
    Ok(KMeans {
        assignments,
        centroids,
        wcss,
        wcss_history: history,
        iterations,
    })
}
