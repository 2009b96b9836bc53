//! k-means with k-means++ seeding and Lloyd iterations.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const MAX_ITERS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    /// `b×d` centroids.
    pub centroids: Tensor,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid, after each
    /// assignment pass.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(row, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_plus_plus(points: &Tensor, b: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let m = points.rows();
    let mut centroids = vec![points.row(rng.random_range(0..m)).to_vec()];
    let mut d2: Vec<f64> = (0..m)
        .map(|r| sq_dist(points.row(r), &centroids[0]))
        .collect();
    while centroids.len() < b {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = m - 1;
            for (r, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = r;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        let c = points.row(pick).to_vec();
        for (r, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(r), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Clusters the rows of `points` into `b` groups. Ties in assignment go to
/// the lowest centroid index; an emptied cluster is moved to the point
/// farthest from its current centroid.
pub fn kmeans(points: &Tensor, b: usize, rng: &mut Rng) -> Result<KMeans> {
    let (m, d) = (points.rows(), points.cols());
    if b == 0 {
        return Err(Error::Contract("k-means needs b >= 1".into()));
    }
    if b > m {
        return Err(Error::Contract(format!(
            "k-means with {b} clusters over {m} points"
        )));
    }
    let mut centroids = seed_plus_plus(points, b, rng);
    let mut assignments = vec![usize::MAX; m];
    let mut objective = Vec::new();
    let mut iterations = 0;
    for _ in 0..MAX_ITERS {
        iterations += 1;
        let mut changed = false;
        let mut dists = vec![0.0; m];
        for r in 0..m {
            let (c, dist) = nearest(points.row(r), &centroids);
            dists[r] = dist;
            if assignments[r] != c {
                assignments[r] = c;
                changed = true;
            }
        }
        objective.push(dists.iter().sum());
        if !changed {
            break;
        }

        let mut sums = vec![vec![0.0; d]; b];
        let mut counts = vec![0usize; b];
        for r in 0..m {
            let c = assignments[r];
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(points.row(r)) {
                *s += x;
            }
        }
        for c in 0..b {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..b {
            if counts[c] == 0 {
                let far = (0..m)
                    .max_by(|&x, &y| dists[x].total_cmp(&dists[y]).then(y.cmp(&x)))
                    .expect("m >= 1");
                centroids[c] = points.row(far).to_vec();
                dists[far] = 0.0;
            }
        }
    }
    let flat: Vec<f64> = centroids.into_iter().flatten().collect();
    Ok(KMeans {
        centroids: Tensor::matrix(b, d, flat)?,
        assignments,
        objective,
        iterations,
    })
}
