//! Empirical checks of the learned structure: disjointness of subspace
//! supports under the sparsity loss, and whether each factor change shows up
//! in exactly its own subspace.

use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::losses::{argmax, spar_loss, NORM_FLOOR};
use crate::metrics::{active_subspaces, subspace_activity};
use crate::model::Model;
use crate::rng::Rng;
use crate::synthdata::Dataset;
use crate::tensor::Tensor;

/// Support threshold relative to the largest absolute code entry.
pub const SUPPORT_THRESHOLD: f64 = 1e-4;

/// Subspaces below this fraction of the largest activity count as collapsed.
pub const ACTIVE_RATIO: f64 = 1e-2;

/// Coordinates each subspace uses.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportProfile {
    pub supports: Vec<Vec<usize>>,
    /// Absolute threshold that was applied.
    pub threshold: f64,
    /// Every code entry was zero.
    pub degenerate: bool,
}

impl SupportProfile {
    /// Coordinate `r` belongs to subspace `i` if `|sⁱ[n, r]|` exceeds
    /// `relative × max|s|` for some row `n`.
    pub fn of(codes: &[Tensor], relative: f64) -> Result<Self> {
        if codes.len() < 2 {
            return Err(Error::Contract("support profile needs k >= 2".into()));
        }
        if !(relative > 0.0) {
            return Err(Error::Contract("support threshold must be positive".into()));
        }
        let d = codes[0].cols();
        if codes.iter().any(|c| c.cols() != d) {
            return Err(Error::dim("support_profile", "subspace widths differ"));
        }
        let top = codes.iter().map(Tensor::max_abs).fold(0.0, f64::max);
        let threshold = relative * top;
        let supports = codes
            .iter()
            .map(|c| {
                (0..d)
                    .filter(|&r| top > 0.0 && (0..c.rows()).any(|n| c.at(n, r).abs() > threshold))
                    .collect()
            })
            .collect();
        Ok(Self {
            supports,
            threshold,
            degenerate: top == 0.0,
        })
    }

    /// Fraction of claimed coordinates that at least two subspaces claim.
    pub fn overlap(&self) -> f64 {
        let d = self
            .supports
            .iter()
            .flatten()
            .copied()
            .max()
            .map_or(0, |m| m + 1);
        let mut claims = vec![0usize; d];
        for s in &self.supports {
            for &r in s {
                claims[r] += 1;
            }
        }
        let claimed = claims.iter().filter(|&&c| c >= 1).count();
        let contested = claims.iter().filter(|&&c| c >= 2).count();
        if claimed == 0 {
            0.0
        } else {
            contested as f64 / claimed as f64
        }
    }
}

/// Overlap of the supports of `codes`; all-zero codes give 0 with the
/// degenerate flag set on the returned profile.
pub fn support_overlap(codes: &[Tensor], relative: f64) -> Result<(f64, SupportProfile)> {
    let profile = SupportProfile::of(codes, relative)?;
    if profile.degenerate {
        log::warn!("all codes are zero; support overlap reported as 0");
    }
    Ok((profile.overlap(), profile))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparRunConfig {
    pub k: usize,
    pub d: usize,
    /// Standard deviation of the Gaussian initial entries.
    pub init_scale: f64,
    pub steps: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Minimum norm each vector is pushed towards.
    pub norm_floor: f64,
    pub trace_every: usize,
}

impl SparRunConfig {
    pub fn new(k: usize, d: usize, steps: usize) -> Self {
        Self {
            k,
            d,
            init_scale: 0.5,
            steps,
            lr_start: 0.05,
            lr_end: 1e-8,
            norm_floor: 0.5,
            trace_every: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparRun {
    /// `k` vectors, each `1×d`.
    pub vectors: Vec<Tensor>,
    /// `(step, overlap)` every `trace_every` steps and at the end.
    pub trace: Vec<(usize, f64)>,
    pub final_overlap: f64,
    /// Sparsity loss of the final vectors.
    pub spar: f64,
    /// Norm-floor penalty of the final vectors.
    pub floor_penalty: f64,
    /// Smallest Euclidean norm among the final vectors.
    pub min_norm: f64,
}

/// The penalty is soft, so vectors settle marginally below the floor; within
/// this fraction of it counts as satisfied.
pub const FLOOR_TOLERANCE: f64 = 1e-2;

impl SparRun {
    pub fn floor_satisfied(&self, floor: f64) -> bool {
        self.min_norm >= (1.0 - FLOOR_TOLERANCE) * floor
    }
}

/// `Σᵢ max(0, floor − ‖sⁱ‖)²` over `1×d` vectors.
fn norm_floor_penalty(tape: &mut Tape, vectors: &[Var], floor: f64) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &v in vectors {
        let sq = tape.mul(v, v)?;
        let s = tape.sum_rows(sq)?;
        let norm = tape.sqrt(s)?;
        let neg = tape.scale(norm, -1.0)?;
        let gap = tape.add_scalar(neg, floor)?;
        let hinge = tape.max_scalar(gap, 0.0)?;
        let h2 = tape.sq_l2_norm(hinge)?;
        total = Some(match total {
            Some(t) => tape.add(t, h2)?,
            None => h2,
        });
    }
    total.ok_or_else(|| Error::Contract("no vectors".into()))
}

/// Sparsity loss and its gradient for `1×d` vectors.
pub fn spar_value_and_grad(vectors: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = vectors.iter().map(|v| tape.param(v.clone())).collect();
    let loss = spar_loss(&mut tape, &vars)?;
    let value = tape.scalar(loss);
    let mut g = tape.backward(loss)?;
    Ok((
        value,
        vars.iter().map(|&v| g.take(v).expect("leaf")).collect(),
    ))
}

/// Hand-derived subgradient of the sparsity loss for single vectors:
/// `∂/∂sⁱ[r] = sign(sⁱ[r])·|Σ_{j≠i} sʲ[r]| + Σ_{q≠i} sign(Σ_{j≠q} sʲ[r])·|s^q[r]|`,
/// with `sign(0) = 0`.
pub fn spar_gradient_by_hand(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = vectors.len();
    let d = vectors[0].len();
    let sign = |x: f64| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let others =
        |q: usize, r: usize| -> f64 { (0..k).filter(|&j| j != q).map(|j| vectors[j][r]).sum() };
    (0..k)
        .map(|i| {
            (0..d)
                .map(|r| {
                    let own = sign(vectors[i][r]) * others(i, r).abs();
                    let cross: f64 = (0..k)
                        .filter(|&q| q != i)
                        .map(|q| sign(others(q, r)) * vectors[q][r].abs())
                        .sum();
                    own + cross
                })
                .collect()
        })
        .collect()
}

/// Gradient descent on the sparsity loss plus a norm floor over `k` free
/// vectors in R^d, with a geometrically decaying step size.
pub fn minimize_spar_free(cfg: &SparRunConfig, rng: &mut Rng) -> Result<SparRun> {
    if cfg.k < 2 || cfg.d < cfg.k {
        return Err(Error::Contract(format!(
            "need k >= 2 and d >= k, got k={} d={}",
            cfg.k, cfg.d
        )));
    }
    let init: Vec<Tensor> = (0..cfg.k)
        .map(|_| {
            let row: Vec<f64> = (0..cfg.d)
                .map(|_| cfg.init_scale * Distribution::<f64>::sample(&StandardNormal, &mut *rng))
                .collect();
            Tensor::matrix(1, cfg.d, row).expect("row shape")
        })
        .collect();
    minimize_spar_from(cfg, init)
}

/// As [`minimize_spar_free`], starting from the given `1×d` vectors.
pub fn minimize_spar_from(cfg: &SparRunConfig, init: Vec<Tensor>) -> Result<SparRun> {
    let mut vectors = init;
    let mut trace = Vec::new();
    let decay = if cfg.steps > 1 {
        (cfg.lr_end / cfg.lr_start).powf(1.0 / (cfg.steps - 1) as f64)
    } else {
        1.0
    };
    let mut lr = cfg.lr_start;
    let mut last = (0.0, 0.0);
    for step in 0..=cfg.steps {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vectors.iter().map(|v| tape.param(v.clone())).collect();
        let spar = spar_loss(&mut tape, &vars)?;
        let floor = norm_floor_penalty(&mut tape, &vars, cfg.norm_floor)?;
        let total = tape.add(spar, floor)?;
        last = (tape.scalar(spar), tape.scalar(floor));
        if step % cfg.trace_every == 0 || step == cfg.steps {
            trace.push((
                step,
                SupportProfile::of(&vectors, SUPPORT_THRESHOLD)?.overlap(),
            ));
        }
        if step == cfg.steps {
            break;
        }
        let mut g = tape.backward(total).map_err(|e| Error::Numeric {
            step,
            detail: e.to_string(),
        })?;
        for (v, &var) in vectors.iter_mut().zip(&vars) {
            let grad = g.take(var).expect("leaf");
            for (x, dx) in v.data_mut().iter_mut().zip(grad.data()) {
                *x -= lr * dx;
            }
            if !v.is_finite() {
                return Err(Error::Numeric {
                    step,
                    detail: "sparsity descent diverged".into(),
                });
            }
        }
        lr *= decay;
    }
    let final_overlap = trace.last().map_or(0.0, |t| t.1);
    let min_norm = vectors
        .iter()
        .map(|v| v.data().iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min);
    Ok(SparRun {
        min_norm,
        vectors,
        trace,
        final_overlap,
        spar: last.0,
        floor_penalty: last.1,
    })
}

/// Per-pair normalized subspace distances `‖s₁ⁱ − s₂ⁱ‖ / μᵢ` for two
/// observation batches. Returns an `N×k` matrix.
pub fn pair_distances(
    model: &Model,
    mean_norms: &[f64],
    x1: &Tensor,
    x2: &Tensor,
) -> Result<Tensor> {
    let a = model.encode_batch(x1)?;
    let b = model.encode_batch(x2)?;
    let k = a.codes.len();
    if mean_norms.len() != k {
        return Err(Error::dim("pair_distances", "norm count differs from k"));
    }
    let n = x1.rows();
    let mut out = vec![0.0; n * k];
    for (i, (ca, cb)) in a.codes.iter().zip(&b.codes).enumerate() {
        for r in 0..n {
            let d2: f64 = ca
                .row(r)
                .iter()
                .zip(cb.row(r))
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            out[r * k + i] = d2.sqrt() / mean_norms[i].max(NORM_FLOOR);
        }
    }
    Tensor::matrix(n, k, out)
}

/// Counts of (true changed factor, estimated oracle) over single-factor
/// pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleConfusion {
    counts: Vec<Vec<usize>>,
}

impl OracleConfusion {
    pub fn new(num_factors: usize, k: usize) -> Self {
        Self {
            counts: vec![vec![0; k]; num_factors],
        }
    }

    pub fn record(&mut self, factor: usize, delta_row: &[f64]) {
        self.counts[factor][argmax(delta_row)] += 1;
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// One-to-one factor→subspace assignment, greedy on the largest count.
    pub fn mapping(&self) -> Vec<Option<usize>> {
        let cells: Vec<Vec<f64>> = self
            .counts
            .iter()
            .map(|r| r.iter().map(|&c| c as f64).collect())
            .collect();
        greedy_match(&cells).0
    }

    /// Fraction of recorded pairs whose oracle equals the subspace matched
    /// to their factor. 0 if nothing was recorded.
    pub fn agreement(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let hit: usize = self
            .mapping()
            .iter()
            .enumerate()
            .filter_map(|(f, m)| m.map(|i| self.counts[f][i]))
            .sum();
        hit as f64 / total as f64
    }
}

/// Greedy one-to-one matching of rows to columns by descending score.
/// Returns the assignment and whether any row's own argmax was taken by
/// another row.
fn greedy_match(scores: &[Vec<f64>]) -> (Vec<Option<usize>>, bool) {
    let rows = scores.len();
    let cols = scores.first().map_or(0, |r| r.len());
    let mut cells: Vec<(usize, usize)> = (0..rows)
        .flat_map(|f| (0..cols).map(move |i| (f, i)))
        .collect();
    cells.sort_by(|&(f1, i1), &(f2, i2)| {
        scores[f2][i2]
            .total_cmp(&scores[f1][i1])
            .then((f1, i1).cmp(&(f2, i2)))
    });
    let mut row_used = vec![None; rows];
    let mut col_used = vec![false; cols];
    for (f, i) in cells {
        if row_used[f].is_none() && !col_used[i] {
            row_used[f] = Some(i);
            col_used[i] = true;
        }
    }
    let conflict = (0..rows).any(|f| row_used[f] != Some(argmax(&scores[f])) && cols > 0);
    (row_used, conflict)
}

/// Factor→subspace assignment from the mean distance each subspace shows
/// when a given factor changes.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceMatching {
    pub factor_to_subspace: Vec<usize>,
    /// `factors×k` mean distances the matching was computed from.
    pub mean_delta: Vec<Vec<f64>>,
    /// Two factors shared an argmax and one had to take its runner-up.
    pub conflict: bool,
}

pub fn match_subspaces(mean_delta: Vec<Vec<f64>>) -> Result<SubspaceMatching> {
    let k = mean_delta.first().map_or(0, |r| r.len());
    if mean_delta.len() > k {
        return Err(Error::Contract(format!(
            "cannot match {} factors to {k} subspaces",
            mean_delta.len()
        )));
    }
    let (m, conflict) = greedy_match(&mean_delta);
    if conflict {
        log::warn!("subspace matching conflict: two factors prefer the same subspace");
    }
    Ok(SubspaceMatching {
        factor_to_subspace: m.into_iter().map(|x| x.expect("k >= factors")).collect(),
        mean_delta,
        conflict,
    })
}

/// `count` pairs per factor, each changing only that factor; returns
/// the distances and the changed factor of each row.
fn single_factor_distances(
    model: &Model,
    mean_norms: &[f64],
    dataset: &Dataset,
    count: usize,
    rng: &mut Rng,
) -> Result<(Tensor, Vec<usize>)> {
    let num_factors = dataset.spec().len();
    let mut pairs = Vec::with_capacity(count * num_factors);
    let mut labels = Vec::with_capacity(count * num_factors);
    for f in 0..num_factors {
        for _ in 0..count {
            pairs.push(dataset.sample_pair_with(&[f], rng));
            labels.push(f);
        }
    }
    let batch = Dataset::batch_from(pairs)?;
    Ok((
        pair_distances(model, mean_norms, &batch.x1, &batch.x2)?,
        labels,
    ))
}

fn calibrate(
    model: &Model,
    mean_norms: &[f64],
    dataset: &Dataset,
    count: usize,
    rng: &mut Rng,
) -> Result<SubspaceMatching> {
    let (delta, labels) = single_factor_distances(model, mean_norms, dataset, count, rng)?;
    let k = delta.cols();
    let mut mean = vec![vec![0.0; k]; dataset.spec().len()];
    for (r, &f) in labels.iter().enumerate() {
        for (m, v) in mean[f].iter_mut().zip(delta.row(r)) {
            *m += v / count as f64;
        }
    }
    match_subspaces(mean)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Definition2Report {
    pub hit_rate: f64,
    pub leak_rate: f64,
    pub matching: SubspaceMatching,
    pub active: Vec<usize>,
    pub activity: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Definition2Options {
    /// Single-factor pairs per factor, for calibration and for scoring.
    pub pairs: usize,
    /// Distance above which a subspace counts as having changed.
    pub threshold: f64,
    /// Observations used to decide which subspaces are active.
    pub activity_samples: usize,
}

impl Default for Definition2Options {
    fn default() -> Self {
        Self {
            pairs: 1000,
            threshold: 0.1,
            activity_samples: 2000,
        }
    }
}

/// For pairs that change one factor: a hit is a distance above threshold
/// in the factor's matched subspace; a leak is a distance above threshold
/// in any other active subspace.
pub fn check_definition2(
    model: &Model,
    mean_norms: &[f64],
    dataset: &Dataset,
    opts: &Definition2Options,
    rng: &mut Rng,
) -> Result<Definition2Report> {
    let (_, x) = dataset.sample_observations(opts.activity_samples, rng)?;
    let activity = subspace_activity(&model.encode_batch(&x)?.codes);
    let active = active_subspaces(&activity, ACTIVE_RATIO);
    if active.is_empty() {
        return Err(Error::Degenerate("no active subspaces".into()));
    }
    let matching = calibrate(model, mean_norms, dataset, opts.pairs, rng)?;
    let (delta, labels) = single_factor_distances(model, mean_norms, dataset, opts.pairs, rng)?;
    let (hits, leaks) = hit_and_leak(
        &delta,
        &labels,
        &matching.factor_to_subspace,
        &active,
        opts.threshold,
    );
    let n = labels.len() as f64;
    Ok(Definition2Report {
        hit_rate: hits as f64 / n,
        leak_rate: leaks as f64 / n,
        matching,
        active,
        activity,
    })
}

/// Counts hits and leaks over rows of `delta`.
pub fn hit_and_leak(
    delta: &Tensor,
    labels: &[usize],
    factor_to_subspace: &[usize],
    active: &[usize],
    threshold: f64,
) -> (usize, usize) {
    let mut hits = 0;
    let mut leaks = 0;
    for (r, &f) in labels.iter().enumerate() {
        let own = factor_to_subspace[f];
        let row = delta.row(r);
        if row[own] > threshold {
            hits += 1;
        }
        if active.iter().any(|&i| i != own && row[i] > threshold) {
            leaks += 1;
        }
    }
    (hits, leaks)
}

/// Agreement of the estimated oracle with the changed factor on `eval`
/// pairs per factor, after matching subspaces on separate `calibration`
/// pairs.
pub fn oracle_agreement(
    model: &Model,
    mean_norms: &[f64],
    dataset: &Dataset,
    calibration: usize,
    eval: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let matching = calibrate(model, mean_norms, dataset, calibration, rng)?;
    let (delta, labels) = single_factor_distances(model, mean_norms, dataset, eval, rng)?;
    let agree = labels
        .iter()
        .enumerate()
        .filter(|&(r, &f)| argmax(delta.row(r)) == matching.factor_to_subspace[f])
        .count();
    Ok(agree as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng::Streams;
    use crate::synthdata::DatasetConfig;

    fn rows(v: &[&[f64]]) -> Vec<Tensor> {
        v.iter()
            .map(|r| Tensor::matrix(1, r.len(), r.to_vec()).unwrap())
            .collect()
    }

    #[test]
    fn overlap_examples() {
        let disjoint = rows(&[&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0]]);
        assert_eq!(
            support_overlap(&disjoint, SUPPORT_THRESHOLD).unwrap().0,
            0.0
        );
        let same = rows(&[&[1.0, 1.0, 0.0], &[3.0, -1.0, 0.0], &[0.5, 0.5, 0.0]]);
        assert_eq!(support_overlap(&same, SUPPORT_THRESHOLD).unwrap().0, 1.0);
        let partial = rows(&[&[1.0, 1.0, 0.0, 0.0], &[0.0, 1.0, 1.0, 0.0]]);
        let (o, p) = support_overlap(&partial, SUPPORT_THRESHOLD).unwrap();
        assert!((o - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.supports, vec![vec![0, 1], vec![1, 2]]);
    }

    #[test]
    fn zero_codes_are_degenerate() {
        let z = rows(&[&[0.0, 0.0], &[0.0, 0.0]]);
        let (o, p) = support_overlap(&z, SUPPORT_THRESHOLD).unwrap();
        assert_eq!(o, 0.0);
        assert!(p.degenerate);
        assert!(support_overlap(&z[..1], SUPPORT_THRESHOLD).is_err());
    }

    #[test]
    fn overlap_ignores_sign_and_scale() {
        let a = rows(&[&[1.0, 0.3, 0.0, 1e-6], &[0.0, 0.2, 0.9, 0.0]]);
        let flipped = rows(&[&[-1.0, 0.3, 0.0, -1e-6], &[0.0, -0.2, 0.9, 0.0]]);
        let scaled: Vec<Tensor> = a.iter().map(|t| t.map(|x| 40.0 * x)).collect();
        let base = support_overlap(&a, SUPPORT_THRESHOLD).unwrap().0;
        assert_eq!(
            base,
            support_overlap(&flipped, SUPPORT_THRESHOLD).unwrap().0
        );
        assert_eq!(base, support_overlap(&scaled, SUPPORT_THRESHOLD).unwrap().0);
    }

    #[test]
    fn disjoint_start_stays_disjoint() {
        let cfg = SparRunConfig::new(2, 2, 500);
        let run = minimize_spar_from(&cfg, rows(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(run.final_overlap, 0.0);
        assert_eq!(run.spar, 0.0);
        assert!(run.trace.iter().all(|&(_, o)| o == 0.0));
        assert_eq!(run.trace.len(), 6);
        // Already above the floor, so nothing moves.
        assert_eq!(run.min_norm, 1.0);
        assert!(run.floor_satisfied(cfg.norm_floor));
        assert!(!run.floor_satisfied(1.5));
    }

    #[test]
    fn random_start_separates() {
        let cfg = SparRunConfig::new(3, 6, 5000);
        let run = minimize_spar_free(&cfg, &mut Streams::new(0).stream("spar")).unwrap();
        assert!(run.final_overlap < 0.05, "{:?}", run.trace.last());
    }

    #[test]
    fn shared_coordinate_gradient_matches_hand_formula() {
        // Two subspaces share coordinate 1 with equal values.
        let v = vec![
            vec![0.8, 0.5, 0.0],
            vec![0.0, 0.5, 0.3],
            vec![0.0, 0.0, 0.0],
        ];
        let (_, g) = spar_value_and_grad(
            &v.iter()
                .map(|r| Tensor::matrix(1, 3, r.clone()).unwrap())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let hand = spar_gradient_by_hand(&v);
        for (a, h) in g.iter().zip(&hand) {
            for (x, y) in a.data().iter().zip(h) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
        // The shared coordinate is not stationary.
        assert!(g[0].data()[1].abs() > 0.0 && g[1].data()[1].abs() > 0.0);
    }

    #[test]
    fn hand_gradient_matches_autodiff_on_random_points() {
        let mut rng = Streams::new(4).stream("grad");
        for _ in 0..20 {
            let v: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..5).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let t: Vec<Tensor> = v
                .iter()
                .map(|r| Tensor::matrix(1, 5, r.clone()).unwrap())
                .collect();
            let (_, g) = spar_value_and_grad(&t).unwrap();
            let hand = spar_gradient_by_hand(&v);
            for (a, h) in g.iter().zip(&hand) {
                for (x, y) in a.data().iter().zip(h) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn confusion_agreement_uses_one_to_one_matching() {
        let mut c = OracleConfusion::new(2, 3);
        for _ in 0..8 {
            c.record(0, &[0.0, 1.0, 0.0]);
        }
        for _ in 0..2 {
            c.record(0, &[1.0, 0.0, 0.0]);
        }
        for _ in 0..5 {
            c.record(1, &[0.0, 1.0, 0.0]);
        }
        for _ in 0..5 {
            c.record(1, &[0.0, 0.0, 1.0]);
        }
        assert_eq!(c.mapping(), vec![Some(1), Some(2)]);
        assert!((c.agreement() - 13.0 / 20.0).abs() < 1e-15);
        assert_eq!(OracleConfusion::new(2, 2).agreement(), 0.0);
    }

    #[test]
    fn matching_detects_conflicts() {
        let m = match_subspaces(vec![vec![0.1, 2.0, 0.0], vec![0.5, 1.0, 0.2]]).unwrap();
        assert_eq!(m.factor_to_subspace, vec![1, 0]);
        assert!(m.conflict);
        let ok = match_subspaces(vec![vec![3.0, 0.1], vec![0.2, 1.0]]).unwrap();
        assert_eq!(ok.factor_to_subspace, vec![0, 1]);
        assert!(!ok.conflict);
        assert!(match_subspaces(vec![vec![1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn identical_pairs_neither_hit_nor_leak() {
        let delta = Tensor::zeros(&[5, 3]);
        let labels = vec![0, 1, 0, 1, 1];
        assert_eq!(
            hit_and_leak(&delta, &labels, &[0, 2], &[0, 1, 2], 0.1),
            (0, 0)
        );
    }

    #[test]
    fn untrained_model_leaks() {
        let dataset = Dataset::new(DatasetConfig::torus()).unwrap();
        let cfg = ModelConfig {
            input_dim: 12,
            latent_dim: 6,
            num_subspaces: 4,
            ..Default::default()
        };
        let model = Model::new(cfg, &mut Streams::new(1).stream("init")).unwrap();
        let opts = Definition2Options {
            pairs: 200,
            activity_samples: 500,
            ..Default::default()
        };
        let (_, x) = dataset
            .sample_observations(500, &mut Streams::new(3).stream("mu"))
            .unwrap();
        let codes = model.encode_batch(&x).unwrap().codes;
        let mu = crate::losses::code_norm_means(&codes.iter().collect::<Vec<_>>());
        let report = check_definition2(
            &model,
            &mu,
            &dataset,
            &opts,
            &mut Streams::new(2).stream("def2"),
        )
        .unwrap();
        assert!(report.leak_rate > 0.8, "{report:?}");
    }
}
