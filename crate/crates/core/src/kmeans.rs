//! Lloyd's k-means with k-means++ seeding and best-of-runs selection.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// Zero-based cluster index per point.
    pub labels: Vec<usize>,
    /// `k × d` centroids.
    pub centroids: DMatrix<f64>,
    /// Sum of squared distances to assigned centroids.
    pub sse: f64,
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols()).map(|d| (points[(i, d)] - centroids[(c, d)]).powi(2)).sum()
}

fn seed_plus_plus<R: Rng + ?Sized>(points: &DMatrix<f64>, k: usize, rng: &mut R) -> DMatrix<f64> {
    let (n, d) = points.shape();
    let mut centroids = DMatrix::zeros(k, d);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from(&points.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centroids, 0)).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                acc += w;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from(&points.row(pick));
        for (i, best) in nearest.iter_mut().enumerate() {
            *best = best.min(sq_dist(points, i, &centroids, c));
        }
    }
    centroids
}

fn assign(points: &DMatrix<f64>, centroids: &DMatrix<f64>, labels: &mut [usize]) -> (bool, f64) {
    let mut changed = false;
    let mut sse = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..centroids.nrows() {
            let dist = sq_dist(points, i, centroids, c);
            if dist < best_d {
                best_d = dist;
                best = c;
            }
        }
        if *label != best {
            *label = best;
            changed = true;
        }
        sse += best_d;
    }
    (changed, sse)
}

fn lloyd<R: Rng + ?Sized>(points: &DMatrix<f64>, k: usize, rng: &mut R) -> KMeans {
    let (n, d) = points.shape();
    let mut centroids = seed_plus_plus(points, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut sse = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let (changed, s) = assign(points, &centroids, &mut labels);
        sse = s;
        if !changed {
            break;
        }
        let mut sums = DMatrix::<f64>::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for j in 0..d {
                sums[(l, j)] += points[(i, j)];
            }
        }
        for c in 0..k {
            // an empty cluster keeps its previous centroid
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[(c, j)] = sums[(c, j)] / counts[c] as f64;
                }
            }
        }
    }
    KMeans { labels, centroids, sse }
}

/// Cluster the rows of `points` into `k` groups, keeping the run with the
/// smallest sum of squared distances.
pub fn kmeans<R: Rng + ?Sized>(points: &DMatrix<f64>, k: usize, runs: usize, rng: &mut R) -> Result<KMeans> {
    let n = points.nrows();
    if k == 0 || runs == 0 {
        return Err(Error::InvalidParameter("k-means needs k >= 1 and runs >= 1".into()));
    }
    if k > n {
        return Err(Error::InvalidParameter(format!("k-means with k = {k} needs at least k points, got {n}")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let mut best: Option<KMeans> = None;
    for _ in 0..runs {
        let run = lloyd(points, k, rng);
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    Ok(best.expect("runs >= 1"))
}
