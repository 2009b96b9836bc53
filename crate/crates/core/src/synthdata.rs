//! Synthetic product-manifold observations with known factors.
//!
//! Factor tuples are mapped to raw coordinates (circles as `(cos, sin)`,
//! intervals rescaled to `[-1, 1]`, categorical values as fixed random
//! anchors, or the whole tuple through a torus in R³) and pushed through a
//! frozen random two-layer `tanh` map into the ambient space.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{Rng, Streams};
use crate::tensor::Tensor;

/// Levels used to discretize continuous factors for evaluation.
pub const CONTINUOUS_LEVELS: usize = 10;
const ANCHOR_DIM: usize = 3;
const EMBED_HIDDEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FactorKind {
    Circle { radius: f64 },
    Interval { lo: f64, hi: f64 },
    Categorical { values: usize },
}

impl FactorKind {
    fn raw_dim(&self) -> usize {
        match self {
            FactorKind::Circle { .. } => 2,
            FactorKind::Interval { .. } => 1,
            FactorKind::Categorical { .. } => ANCHOR_DIM,
        }
    }

    pub fn levels(&self) -> usize {
        match self {
            FactorKind::Categorical { values } => *values,
            _ => CONTINUOUS_LEVELS,
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            FactorKind::Circle { .. } => rng.random_range(0.0..TAU),
            FactorKind::Interval { lo, hi } => rng.random_range(lo..hi),
            FactorKind::Categorical { values } => rng.random_range(0..values) as f64,
        }
    }

    /// Draws a value guaranteed to differ from `current`.
    fn resample(&self, current: f64, rng: &mut Rng) -> f64 {
        loop {
            let v = self.sample(rng);
            if v != current {
                return v;
            }
        }
    }

    fn check(&self, v: f64) -> Result<()> {
        let ok = match *self {
            FactorKind::Circle { .. } => v.is_finite(),
            FactorKind::Interval { lo, hi } => (lo..=hi).contains(&v),
            FactorKind::Categorical { values } => {
                v >= 0.0 && v.fract() == 0.0 && (v as usize) < values
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "value {v} outside the domain of {self}"
            )))
        }
    }

    /// Index in `0..levels()`.
    pub fn discretize(&self, v: f64) -> usize {
        let bucket = |u: f64| ((u * CONTINUOUS_LEVELS as f64) as usize).min(CONTINUOUS_LEVELS - 1);
        match *self {
            FactorKind::Circle { .. } => bucket(v.rem_euclid(TAU) / TAU),
            FactorKind::Interval { lo, hi } => bucket(((v - lo) / (hi - lo)).clamp(0.0, 1.0)),
            FactorKind::Categorical { .. } => v as usize,
        }
    }

    /// Per-factor metric: arc angle on circles, absolute difference on
    /// intervals, discrete metric on categories.
    pub fn distance(&self, a: f64, b: f64) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        Ok(match self {
            FactorKind::Circle { .. } => {
                let d = (a - b).abs().rem_euclid(TAU);
                d.min(TAU - d)
            }
            FactorKind::Interval { .. } => (a - b).abs(),
            FactorKind::Categorical { .. } => {
                if a == b {
                    0.0
                } else {
                    1.0
                }
            }
        })
    }
}

impl fmt::Display for FactorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FactorKind::Circle { radius } if *radius == 1.0 => write!(f, "circle"),
            FactorKind::Circle { radius } => write!(f, "circle:{radius}"),
            FactorKind::Interval { lo, hi } => write!(f, "interval:{lo}:{hi}"),
            FactorKind::Categorical { values } => write!(f, "categorical:{values}"),
        }
    }
}

impl FromStr for FactorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut parts = s.trim().split(':');
        let head = parts.next().unwrap_or_default();
        let args: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| format!("bad number `{p}` in `{s}`"))
            })
            .collect::<std::result::Result<_, _>>()?;
        match (head, args.as_slice()) {
            ("circle", []) => Ok(FactorKind::Circle { radius: 1.0 }),
            ("circle", [r]) if *r > 0.0 => Ok(FactorKind::Circle { radius: *r }),
            ("interval", []) => Ok(FactorKind::Interval { lo: 0.0, hi: 1.0 }),
            ("interval", [lo, hi]) if lo < hi => Ok(FactorKind::Interval { lo: *lo, hi: *hi }),
            ("categorical", [v]) if *v >= 2.0 && v.fract() == 0.0 => Ok(FactorKind::Categorical {
                values: *v as usize,
            }),
            _ => Err(format!("unrecognized factor `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorSpec {
    pub factors: Vec<FactorKind>,
}

impl FactorSpec {
    pub fn new(factors: Vec<FactorKind>) -> Self {
        Self { factors }
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn levels(&self) -> Vec<usize> {
        self.factors.iter().map(FactorKind::levels).collect()
    }

    pub fn discretize(&self, values: &[f64]) -> Vec<usize> {
        self.factors
            .iter()
            .zip(values)
            .map(|(f, &v)| f.discretize(v))
            .collect()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.factors.iter().map(|f| f.sample(rng)).collect()
    }
}

impl FromStr for FactorSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let factors = s
            .split(',')
            .map(str::parse)
            .collect::<std::result::Result<Vec<FactorKind>, _>>()?;
        Ok(Self { factors })
    }
}

impl fmt::Display for FactorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.factors.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join(","))
    }
}

pub fn factor_distance(spec: &FactorSpec, factor: usize, a: f64, b: f64) -> Result<f64> {
    let kind = spec
        .factors
        .get(factor)
        .ok_or_else(|| Error::Contract(format!("factor {factor} out of range")))?;
    kind.distance(a, b)
}

/// L2 combination of the per-factor distances.
pub fn product_distance(spec: &FactorSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != spec.len() || b.len() != spec.len() {
        return Err(Error::dim("product_distance", "factor counts differ"));
    }
    let mut sq = 0.0;
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        let d = factor_distance(spec, i, x, y)?;
        sq += d * d;
    }
    Ok(sq.sqrt())
}

/// Point on a torus with tube angle `theta`, ring angle `phi`, ring radius
/// `major` and tube radius `minor`.
pub fn torus_point(theta: f64, phi: f64, major: f64, minor: f64) -> [f64; 3] {
    let ring = major + minor * theta.cos();
    [ring * phi.cos(), ring * phi.sin(), minor * theta.sin()]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DatasetKind {
    /// Two circle factors placed on a torus in R³ before the ambient map.
    Torus {
        major: f64,
        minor: f64,
    },
    Product,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChangePolicy {
    ExactlyOne,
    /// `|C|` uniform in `1..=num_factors-1`.
    Variable,
}

impl FromStr for ChangePolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "one" => Ok(ChangePolicy::ExactlyOne),
            "variable" => Ok(ChangePolicy::Variable),
            _ => Err(format!("unknown policy `{s}` (one | variable)")),
        }
    }
}

impl fmt::Display for ChangePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChangePolicy::ExactlyOne => "one",
            ChangePolicy::Variable => "variable",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub factors: FactorSpec,
    pub ambient_dim: usize,
    pub noise: f64,
    pub policy: ChangePolicy,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn torus() -> Self {
        Self {
            kind: DatasetKind::Torus {
                major: 2.0,
                minor: 0.5,
            },
            factors: FactorSpec::new(vec![FactorKind::Circle { radius: 1.0 }; 2]),
            ambient_dim: 12,
            noise: 0.01,
            policy: ChangePolicy::ExactlyOne,
            seed: 0,
        }
    }
}

/// A frozen random two-layer `tanh` map from raw coordinates to R^N.
#[derive(Clone, Debug)]
struct Embedding {
    raw_dim: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    /// Per factor, per value: anchor coordinates (empty for non-categorical).
    anchors: Vec<Vec<Vec<f64>>>,
}

impl Embedding {
    fn map(&self, raw: &[f64], out_dim: usize) -> Vec<f64> {
        let hidden: Vec<f64> = (0..EMBED_HIDDEN)
            .map(|h| {
                let s: f64 = (0..self.raw_dim)
                    .map(|i| raw[i] * self.w1[i * EMBED_HIDDEN + h])
                    .sum();
                (s + self.b1[h]).tanh()
            })
            .collect();
        (0..out_dim)
            .map(|o| {
                let s: f64 = hidden
                    .iter()
                    .enumerate()
                    .map(|(h, &v)| v * self.w2[h * out_dim + o])
                    .sum();
                s + self.b2[o]
            })
            .collect()
    }
}

/// One weakly supervised pair. `changed` is for evaluation only.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPair {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub factors1: Vec<f64>,
    pub factors2: Vec<f64>,
    pub changed: Vec<usize>,
}

/// `N` pairs as two `N×ambient` matrices.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub x1: Tensor,
    pub x2: Tensor,
    pub pairs: Vec<LabeledPair>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    config: DatasetConfig,
    embedding: Embedding,
}

impl Dataset {
    pub fn new(config: DatasetConfig) -> Result<Self> {
        if config.factors.is_empty() {
            return Err(Error::Contract("dataset needs at least one factor".into()));
        }
        if config.ambient_dim == 0 || config.noise < 0.0 || !config.noise.is_finite() {
            return Err(Error::Contract(
                "ambient_dim must be >= 1 and noise >= 0".into(),
            ));
        }
        let raw_dim = match config.kind {
            DatasetKind::Torus { major, minor } => {
                let two_circles = config.factors.len() == 2
                    && config
                        .factors
                        .factors
                        .iter()
                        .all(|f| matches!(f, FactorKind::Circle { .. }));
                if !two_circles {
                    return Err(Error::Contract(
                        "torus dataset needs exactly two circle factors".into(),
                    ));
                }
                if !(major > minor && minor > 0.0) {
                    return Err(Error::Contract("torus needs major > minor > 0".into()));
                }
                3
            }
            DatasetKind::Product => config.factors.factors.iter().map(FactorKind::raw_dim).sum(),
        };

        let mut rng = Streams::new(config.seed).stream("embedding");
        let mut normal = |n: usize, scale: f64| -> Vec<f64> {
            (0..n)
                .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect::<Vec<f64>>()
        };
        let w1 = normal(raw_dim * EMBED_HIDDEN, 1.0 / (raw_dim as f64).sqrt());
        let b1 = normal(EMBED_HIDDEN, 0.1);
        let w2 = normal(
            EMBED_HIDDEN * config.ambient_dim,
            1.0 / (EMBED_HIDDEN as f64).sqrt(),
        );
        let b2 = normal(config.ambient_dim, 0.1);
        let anchors = config
            .factors
            .factors
            .iter()
            .map(|f| match f {
                FactorKind::Categorical { values } => {
                    (0..*values).map(|_| normal(ANCHOR_DIM, 1.0)).collect()
                }
                _ => Vec::new(),
            })
            .collect();
        let embedding = Embedding {
            raw_dim,
            w1,
            b1,
            w2,
            b2,
            anchors,
        };
        Ok(Self { config, embedding })
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.config
    }

    pub fn spec(&self) -> &FactorSpec {
        &self.config.factors
    }

    pub fn ambient_dim(&self) -> usize {
        self.config.ambient_dim
    }

    pub fn raw_coordinates(&self, factors: &[f64]) -> Vec<f64> {
        if let DatasetKind::Torus { major, minor } = self.config.kind {
            return torus_point(factors[0], factors[1], major, minor).to_vec();
        }
        let mut raw = Vec::with_capacity(self.embedding.raw_dim);
        for (i, (kind, &v)) in self.config.factors.factors.iter().zip(factors).enumerate() {
            match *kind {
                FactorKind::Circle { radius } => {
                    raw.push(radius * v.cos());
                    raw.push(radius * v.sin());
                }
                FactorKind::Interval { lo, hi } => raw.push(2.0 * (v - lo) / (hi - lo) - 1.0),
                FactorKind::Categorical { .. } => {
                    raw.extend_from_slice(&self.embedding.anchors[i][v as usize])
                }
            }
        }
        raw
    }

    /// Noise-free observation of a factor tuple.
    pub fn embed(&self, factors: &[f64]) -> Vec<f64> {
        let raw = self.raw_coordinates(factors);
        self.embedding.map(&raw, self.config.ambient_dim)
    }

    /// Observation with isotropic Gaussian noise.
    pub fn observe(&self, factors: &[f64], rng: &mut Rng) -> Vec<f64> {
        let mut x = self.embed(factors);
        if self.config.noise > 0.0 {
            for v in &mut x {
                let e: f64 = StandardNormal.sample(rng);
                *v += self.config.noise * e;
            }
        }
        x
    }

    pub fn sample_factors(&self, rng: &mut Rng) -> Vec<f64> {
        self.config.factors.sample(rng)
    }

    /// Draws the changed set according to `policy`.
    pub fn sample_changed(&self, policy: ChangePolicy, rng: &mut Rng) -> Vec<usize> {
        let k = self.config.factors.len();
        let count = match policy {
            ChangePolicy::ExactlyOne => 1,
            ChangePolicy::Variable => rng.random_range(1..k.max(2)),
        };
        let mut idx = sample_indices(rng, k, count.min(k)).into_vec();
        idx.sort_unstable();
        idx
    }

    /// Pair whose factors differ exactly on `changed`.
    pub fn sample_pair_with(&self, changed: &[usize], rng: &mut Rng) -> LabeledPair {
        let factors1 = self.sample_factors(rng);
        let mut factors2 = factors1.clone();
        for &c in changed {
            factors2[c] = self.config.factors.factors[c].resample(factors1[c], rng);
        }
        let x1 = self.observe(&factors1, rng);
        let x2 = self.observe(&factors2, rng);
        LabeledPair {
            x1,
            x2,
            factors1,
            factors2,
            changed: changed.to_vec(),
        }
    }

    pub fn sample_pair(&self, policy: ChangePolicy, rng: &mut Rng) -> LabeledPair {
        let changed = self.sample_changed(policy, rng);
        self.sample_pair_with(&changed, rng)
    }

    pub fn sample_batch(&self, n: usize, policy: ChangePolicy, rng: &mut Rng) -> Result<PairBatch> {
        let pairs: Vec<LabeledPair> = (0..n).map(|_| self.sample_pair(policy, rng)).collect();
        Self::batch_from(pairs)
    }

    pub fn batch_from(pairs: Vec<LabeledPair>) -> Result<PairBatch> {
        let x1 = Tensor::from_rows(&pairs.iter().map(|p| p.x1.clone()).collect::<Vec<_>>())?;
        let x2 = Tensor::from_rows(&pairs.iter().map(|p| p.x2.clone()).collect::<Vec<_>>())?;
        Ok(PairBatch { x1, x2, pairs })
    }

    /// `m` independent observations and their factor tuples.
    pub fn sample_observations(&self, m: usize, rng: &mut Rng) -> Result<(Vec<Vec<f64>>, Tensor)> {
        let factors: Vec<Vec<f64>> = (0..m).map(|_| self.sample_factors(rng)).collect();
        let rows: Vec<Vec<f64>> = factors.iter().map(|f| self.observe(f, rng)).collect();
        Ok((factors, Tensor::from_rows(&rows)?))
    }

    /// `count` observations that all share one random value of `factor`.
    pub fn sample_fixed(
        &self,
        factor: usize,
        count: usize,
        rng: &mut Rng,
    ) -> Result<(Vec<Vec<f64>>, Tensor)> {
        let shared = self.config.factors.factors[factor].sample(rng);
        let factors: Vec<Vec<f64>> = (0..count)
            .map(|_| {
                let mut f = self.sample_factors(rng);
                f[factor] = shared;
                f
            })
            .collect();
        let rows: Vec<Vec<f64>> = factors.iter().map(|f| self.observe(f, rng)).collect();
        Ok((factors, Tensor::from_rows(&rows)?))
    }
}
