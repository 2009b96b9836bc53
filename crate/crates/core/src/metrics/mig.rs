//! Mutual information gap over latent dimensions, over per-subspace
//! principal projections, and over per-subspace k-means assignments.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use super::kmeans::kmeans;
use super::mi::{discrete_mi, entropy, quantile_bins};
use super::pca::{pca_first_axis, project_onto};
use super::EvalSet;
use crate::error::{Error, Result};
use crate::rng::Streams;

/// MIG over pre-discretized codes. `codes[j]` and `factors[f]` are columns
/// of equal length. Factors with zero entropy are skipped.
pub fn mig_from_codes(codes: &[Vec<usize>], factors: &[Vec<usize>]) -> Result<f64> {
    if codes.is_empty() {
        return Err(Error::Contract("MIG needs at least one code column".into()));
    }
    let mut gaps = Vec::new();
    for (f, factor) in factors.iter().enumerate() {
        let h = entropy(factor)?;
        if h <= 0.0 {
            log::warn!("factor {f} has zero entropy; skipped in MIG");
            continue;
        }
        let mut mi = codes
            .iter()
            .map(|c| discrete_mi(c, factor))
            .collect::<Result<Vec<f64>>>()?;
        mi.sort_by(|a, b| b.total_cmp(a));
        let second = mi.get(1).copied().unwrap_or(0.0);
        gaps.push(((mi[0] - second) / h).clamp(0.0, 1.0));
    }
    if gaps.is_empty() {
        return Err(Error::Degenerate("every factor has zero entropy".into()));
    }
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

/// MIG over the quantile-binned dimensions of the aggregated latent.
pub fn mig(set: &EvalSet, bins: usize) -> Result<f64> {
    let codes = (0..set.z.cols())
        .map(|j| quantile_bins(&set.z.column(j), bins))
        .collect::<Result<Vec<_>>>()?;
    mig_from_codes(&codes, &set.factor_columns())
}

/// MIG after replacing each subspace by its projection on its first
/// principal axis.
pub fn mig_pca(set: &EvalSet, bins: usize) -> Result<f64> {
    set.require_codes()?;
    let mut codes = Vec::with_capacity(set.codes.len());
    for (i, c) in set.codes.iter().enumerate() {
        let axis = pca_first_axis(c)?;
        if axis.ambiguous {
            log::debug!("subspace {i}: principal axis is ambiguous");
        }
        codes.push(quantile_bins(&project_onto(c, &axis.axis), bins)?);
    }
    mig_from_codes(&codes, &set.factor_columns())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CentroidCount {
    /// As many centroids as the evaluated factor has levels.
    FactorLevels,
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MigKmOptions {
    pub centroids: CentroidCount,
    pub seed: u64,
}

impl Default for MigKmOptions {
    fn default() -> Self {
        Self {
            centroids: CentroidCount::FactorLevels,
            seed: 0,
        }
    }
}

/// MIG where each subspace is summarized by its k-means cluster index.
pub fn mig_km(set: &EvalSet, opts: &MigKmOptions) -> Result<f64> {
    set.require_codes()?;
    if set.codes.iter().all(|c| c.max_abs() == 0.0)
        || super::subspace_activity(&set.codes)
            .iter()
            .all(|&a| a == 0.0)
    {
        log::warn!("every subspace is constant; MIG-KM is 0");
    }
    let streams = Streams::new(opts.seed);
    let factors = set.factor_columns();
    let mut cache: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    let mut gaps = Vec::new();
    for (f, factor) in factors.iter().enumerate() {
        let b = match opts.centroids {
            CentroidCount::FactorLevels => set.levels[f],
            CentroidCount::Fixed(b) => b,
        };
        let mut codes = Vec::with_capacity(set.codes.len());
        for (i, c) in set.codes.iter().enumerate() {
            if let Entry::Vacant(e) = cache.entry((i, b)) {
                let mut rng = streams.indexed("kmeans", (i as u64) << 32 | b as u64);
                e.insert(kmeans(c, b, &mut rng)?.assignments);
            }
            codes.push(cache[&(i, b)].clone());
        }
        match mig_from_codes(&codes, std::slice::from_ref(factor)) {
            Ok(g) => gaps.push(g),
            Err(Error::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if gaps.is_empty() {
        return Err(Error::Degenerate("every factor has zero entropy".into()));
    }
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}
