//! Plug-in entropy and mutual information over integer columns, plus the
//! quantile binning used to discretize continuous latents.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Number of quantile bins used for continuous latents.
pub const DEFAULT_BINS: usize = 20;

fn plogp_sum(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Empirical entropy in nats.
pub fn entropy(column: &[usize]) -> Result<f64> {
    if column.is_empty() {
        return Err(Error::Contract("entropy of an empty column".into()));
    }
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &v in column {
        *counts.entry(v).or_default() += 1;
    }
    let mut c: Vec<usize> = counts.into_values().collect();
    c.sort_unstable();
    Ok(plogp_sum(c.into_iter(), column.len() as f64))
}

/// Plug-in mutual information (nats) from the joint empirical histogram.
pub fn discrete_mi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Contract(
            "mutual information of empty columns".into(),
        ));
    }
    if a.len() != b.len() {
        return Err(Error::dim(
            "discrete_mi",
            format!("column lengths {} and {}", a.len(), b.len()),
        ));
    }
    let n = a.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ca: HashMap<usize, usize> = HashMap::new();
    let mut cb: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    // Sum in key order so the result does not depend on hash iteration.
    let mut cells: Vec<((usize, usize), usize)> = joint.into_iter().collect();
    cells.sort_unstable();
    let mut mi = 0.0;
    for ((x, y), c) in cells {
        let pxy = c as f64 / n;
        let px = ca[&x] as f64 / n;
        let py = cb[&y] as f64 / n;
        mi += pxy * (pxy / (px * py)).ln();
    }
    Ok(mi.max(0.0))
}

/// Discretizes `values` into at most `bins` quantile bins. A value's bin is
/// the number of distinct quantile edges at or below it, so columns with at
/// most `bins` equally frequent distinct values keep them apart.
pub fn quantile_bins(values: &[f64], bins: usize) -> Result<Vec<usize>> {
    if bins < 2 {
        return Err(Error::Contract(format!("need at least 2 bins, got {bins}")));
    }
    if values.is_empty() {
        return Ok(Vec::new());
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "quantile_bins",
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let mut edges: Vec<f64> = (1..bins)
        .map(|i| sorted[(i * m / bins).min(m - 1)])
        .collect();
    edges.dedup();
    Ok(values
        .iter()
        .map(|&v| edges.partition_point(|&e| e <= v))
        .collect())
}
