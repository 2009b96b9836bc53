//! Disentanglement metrics and the primitives behind them.

mod dci;
mod kmeans;
mod mi;
mod mig;
mod pca;
mod scores;

pub use dci::{dci_disentanglement, dci_from_importance, importance_matrix, RIDGE_LAMBDA};
pub use kmeans::{kmeans, KMeans};
pub use mi::{discrete_mi, entropy, quantile_bins, DEFAULT_BINS};
pub use mig::{mig, mig_from_codes, mig_km, mig_pca, CentroidCount, MigKmOptions};
pub use pca::{covariance, pca_first_axis, project_onto, PrincipalAxis, AMBIGUOUS_RATIO};
pub use scores::{betavae_score, factorvae_score, LatentSampler, ScoreOptions, SpecSampler};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::{Rng, Streams};
use crate::synthdata::Dataset;
use crate::tensor::Tensor;

/// Evaluation samples: discretized factors alongside the aggregated latent
/// and the per-subspace codes.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    /// `M` rows of discretized factor values.
    pub factors: Vec<Vec<usize>>,
    /// Number of levels of each factor.
    pub levels: Vec<usize>,
    /// `M×D` aggregated latents.
    pub z: Tensor,
    /// One `M×d` matrix per subspace; may be empty for flat latents.
    pub codes: Vec<Tensor>,
}

impl EvalSet {
    pub fn new(
        factors: Vec<Vec<usize>>,
        levels: Vec<usize>,
        z: Tensor,
        codes: Vec<Tensor>,
    ) -> Result<Self> {
        let m = factors.len();
        if m == 0 {
            return Err(Error::Contract("empty evaluation set".into()));
        }
        if factors.iter().any(|r| r.len() != levels.len()) {
            return Err(Error::dim(
                "EvalSet",
                "factor rows disagree with level count",
            ));
        }
        if factors
            .iter()
            .any(|r| r.iter().zip(&levels).any(|(v, l)| v >= l))
        {
            return Err(Error::Contract(
                "factor value outside its level range".into(),
            ));
        }
        if z.rows() != m || codes.iter().any(|c| c.rows() != m) {
            return Err(Error::dim(
                "EvalSet",
                "latent rows disagree with sample count",
            ));
        }
        if !z.is_finite() || codes.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite { op: "EvalSet" });
        }
        let recommended = 100 * levels.iter().copied().max().unwrap_or(1);
        if m < recommended {
            log::debug!("evaluation set of {m} samples is below the recommended {recommended}");
        }
        Ok(Self {
            factors,
            levels,
            z,
            codes,
        })
    }

    /// Encodes `m` fresh observations of `dataset` with `model`.
    pub fn from_model(model: &Model, dataset: &Dataset, m: usize, rng: &mut Rng) -> Result<Self> {
        let (raw, x) = dataset.sample_observations(m, rng)?;
        let enc = model.encode_batch(&x)?;
        let spec = dataset.spec();
        Self::new(
            raw.iter().map(|f| spec.discretize(f)).collect(),
            spec.levels(),
            enc.z,
            enc.codes,
        )
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Factor values as one column per factor.
    pub fn factor_columns(&self) -> Vec<Vec<usize>> {
        (0..self.levels.len())
            .map(|f| self.factors.iter().map(|r| r[f]).collect())
            .collect()
    }

    fn require_codes(&self) -> Result<()> {
        if self.codes.is_empty() {
            return Err(Error::Contract("metric needs per-subspace codes".into()));
        }
        Ok(())
    }
}

/// Per subspace, the mean over its coordinates of the per-coordinate
/// standard deviation across samples.
pub fn subspace_activity(codes: &[Tensor]) -> Vec<f64> {
    codes
        .iter()
        .map(|c| {
            let (m, d) = (c.rows() as f64, c.cols());
            if d == 0 || m == 0.0 {
                return 0.0;
            }
            (0..d)
                .map(|j| {
                    // Shift by the first entry so constant columns give exactly 0.
                    let col: Vec<f64> = c.column(j).iter().map(|x| x - c.at(0, j)).collect();
                    let mean = col.iter().sum::<f64>() / m;
                    (col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m).sqrt()
                })
                .sum::<f64>()
                / d as f64
        })
        .collect()
}

/// Subspaces whose activity exceeds `ratio` times the largest activity.
pub fn active_subspaces(activity: &[f64], ratio: f64) -> Vec<usize> {
    let top = activity.iter().cloned().fold(0.0, f64::max);
    (0..activity.len())
        .filter(|&i| top > 0.0 && activity[i] > ratio * top)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub betavae: f64,
    pub factorvae: f64,
    pub dci: f64,
    pub mig: f64,
    pub mig_pca: f64,
    pub mig_km: f64,
    pub activity: Vec<f64>,
}

impl MetricsReport {
    /// Metric names and values in report order.
    pub fn scores(&self) -> [(&'static str, f64); 6] {
        [
            ("betavae", self.betavae),
            ("factorvae", self.factorvae),
            ("dci", self.dci),
            ("mig", self.mig),
            ("mig_pca", self.mig_pca),
            ("mig_km", self.mig_km),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub samples: usize,
    pub bins: usize,
    pub scores: ScoreOptions,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            samples: 10_000,
            bins: DEFAULT_BINS,
            scores: ScoreOptions::default(),
            seed: 0,
        }
    }
}

/// Latents of fresh observations encoded by `model`.
pub fn model_sampler<'a>(
    model: &'a Model,
    dataset: &'a Dataset,
    rng: Rng,
) -> impl LatentSampler + 'a {
    SpecSampler::new(
        dataset.spec().clone(),
        rng,
        move |factors: &[Vec<f64>], rng: &mut Rng| {
            let rows: Vec<Vec<f64>> = factors.iter().map(|f| dataset.observe(f, rng)).collect();
            Ok(model.encode_batch(&Tensor::from_rows(&rows)?)?.z)
        },
    )
}

/// Runs every metric on `model` over data drawn from `dataset`.
pub fn evaluate(model: &Model, dataset: &Dataset, opts: &EvalOptions) -> Result<MetricsReport> {
    evaluate_with_set(model, dataset, opts).map(|(report, _)| report)
}

/// As [`evaluate`], also returning the encoded samples the latent metrics
/// were computed on.
pub fn evaluate_with_set(
    model: &Model,
    dataset: &Dataset,
    opts: &EvalOptions,
) -> Result<(MetricsReport, EvalSet)> {
    let streams = Streams::new(opts.seed);
    let set = EvalSet::from_model(model, dataset, opts.samples, &mut streams.stream("eval"))?;
    let mut sampler = model_sampler(model, dataset, streams.stream("eval.sampler"));
    let mut score_rng = streams.stream("eval.scores");
    let betavae = betavae_score(&mut sampler, &opts.scores, &mut score_rng)?;
    let factorvae = factorvae_score(&mut sampler, &opts.scores, &mut score_rng)?;
    let dci = if set.levels.len() >= 2 {
        dci_disentanglement(&set.z, &set.factors)?
    } else {
        log::warn!("DCI needs at least 2 factors; reporting 0");
        0.0
    };
    let report = MetricsReport {
        betavae,
        factorvae,
        dci,
        mig: mig(&set, opts.bins)?,
        mig_pca: mig_pca(&set, opts.bins)?,
        mig_km: mig_km(
            &set,
            &MigKmOptions {
                seed: opts.seed,
                ..Default::default()
            },
        )?,
        activity: subspace_activity(&set.codes),
    };
    Ok((report, set))
}
