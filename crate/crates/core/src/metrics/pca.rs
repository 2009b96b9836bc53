//! Dominant principal axis by power iteration.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const ITERS: usize = 200;
const TOL: f64 = 1e-10;

/// Top-two eigenvalue ratio above which the axis is reported as ambiguous.
pub const AMBIGUOUS_RATIO: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct PrincipalAxis {
    /// Unit vector; first nonzero component positive.
    pub axis: Vec<f64>,
    /// Variance of the centered points along `axis`.
    pub eigenvalue: f64,
    /// Covariance is zero; `axis` is the first basis vector.
    pub degenerate: bool,
    /// Second eigenvalue is at least [`AMBIGUOUS_RATIO`] of the first.
    pub ambiguous: bool,
}

/// Centered covariance (divided by M) of the rows of `points`.
pub fn covariance(points: &Tensor) -> Vec<Vec<f64>> {
    let (m, d) = (points.rows(), points.cols());
    let mean: Vec<f64> = (0..d)
        .map(|j| points.column(j).iter().sum::<f64>() / m as f64)
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in 0..m {
        let row = points.row(r);
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in a..d {
                cov[a][b] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[a][b] /= m as f64;
            cov[b][a] = cov[a][b];
        }
    }
    cov
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn rayleigh(m: &[Vec<f64>], v: &[f64]) -> f64 {
    mat_vec(m, v).iter().zip(v).map(|(a, b)| a * b).sum()
}

fn power_iteration(cov: &[Vec<f64>], start: Vec<f64>) -> Vec<f64> {
    let mut v = start;
    normalize(&mut v);
    for _ in 0..ITERS {
        let mut next = mat_vec(cov, &v);
        if normalize(&mut next) == 0.0 {
            break;
        }
        // Compare up to sign, since a negative eigenvalue would flip it.
        let diff: f64 = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if diff < TOL {
            break;
        }
    }
    v
}

fn fix_sign(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|x| **x != 0.0) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// First principal axis of the centered rows of `points`.
pub fn pca_first_axis(points: &Tensor) -> Result<PrincipalAxis> {
    if points.rows() < 2 {
        return Err(Error::Contract(
            "principal axis needs at least 2 points".into(),
        ));
    }
    let d = points.cols();
    let cov = covariance(points);
    let scale = cov.iter().flatten().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut e1 = vec![0.0; d];
    e1[0] = 1.0;
    if scale == 0.0 {
        return Ok(PrincipalAxis {
            axis: e1,
            eigenvalue: 0.0,
            degenerate: true,
            ambiguous: false,
        });
    }
    // Start from the all-ones direction tilted by index so the start is not
    // orthogonal to the top eigenvector in common symmetric cases.
    let start: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * i as f64).collect();
    let mut axis = power_iteration(&cov, start);
    fix_sign(&mut axis);
    let eigenvalue = rayleigh(&cov, &axis);

    // Deflate once to estimate the second eigenvalue.
    let deflated: Vec<Vec<f64>> = (0..d)
        .map(|a| {
            (0..d)
                .map(|b| cov[a][b] - eigenvalue * axis[a] * axis[b])
                .collect()
        })
        .collect();
    let start2: Vec<f64> = (0..d)
        .map(|i| if i % 2 == 0 { 1.0 } else { -0.7 })
        .collect();
    let second_axis = power_iteration(&deflated, start2);
    let second = rayleigh(&deflated, &second_axis).max(0.0);
    Ok(PrincipalAxis {
        axis,
        eigenvalue,
        degenerate: false,
        ambiguous: eigenvalue > 0.0 && second >= AMBIGUOUS_RATIO * eigenvalue,
    })
}

/// Projects the centered rows of `points` onto `axis`.
pub fn project_onto(points: &Tensor, axis: &[f64]) -> Vec<f64> {
    let (m, d) = (points.rows(), points.cols());
    let mean: Vec<f64> = (0..d)
        .map(|j| points.column(j).iter().sum::<f64>() / m as f64)
        .collect();
    (0..m)
        .map(|r| {
            points
                .row(r)
                .iter()
                .zip(&mean)
                .zip(axis)
                .map(|((x, mu), a)| (x - mu) * a)
                .sum()
        })
        .collect()
}
