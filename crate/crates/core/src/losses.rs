//! Training objective: reconstruction, consistency, distance, sparsity and
//! oracle-balance terms, plus the normalized subspace distances and the soft
//! oracle mask they share.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{swap_aggregate, BoundModel};
use crate::tensor::Tensor;

/// Lower bound applied to every running subspace norm.
pub const NORM_FLOOR: f64 = 1e-8;

/// Exponential moving average of `‖sⁱ‖` per subspace.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceNormTracker {
    mean_norm: Vec<f64>,
    momentum: f64,
}

impl SubspaceNormTracker {
    pub const MOMENTUM: f64 = 0.99;

    pub fn new(k: usize) -> Self {
        Self {
            mean_norm: vec![1.0; k],
            momentum: Self::MOMENTUM,
        }
    }

    pub fn from_means(mean_norm: Vec<f64>) -> Self {
        Self {
            mean_norm: mean_norm.into_iter().map(|m| m.max(NORM_FLOOR)).collect(),
            momentum: Self::MOMENTUM,
        }
    }

    pub fn mean_norms(&self) -> &[f64] {
        &self.mean_norm
    }

    /// Folds in one batch of per-subspace mean norms.
    pub fn update(&mut self, batch_means: &[f64]) {
        for (mu, &b) in self.mean_norm.iter_mut().zip(batch_means) {
            *mu = (self.momentum * *mu + (1.0 - self.momentum) * b).max(NORM_FLOOR);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta1: 0.1,
            beta2: 100.0,
            beta3: 0.0001,
            margin: 1.0,
        }
    }
}

/// Which terms beyond reconstruction currently contribute. The distance
/// flag also covers the sparsity term, since both share β₁.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PhaseFlags {
    pub reg: bool,
    pub dis: bool,
    pub cons: bool,
}

/// How the per-pair subspace selection enters the distance loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    /// Rows of the soft mask A weight the two branches.
    Soft,
    /// One-hot argmax of A; no gradient through the selection.
    Hard,
}

/// Soft mask `A` and its row-argmax.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleMask {
    pub soft: Tensor,
    pub hard: Vec<usize>,
}

impl OracleMask {
    pub fn from_soft(soft: Tensor) -> Self {
        let hard = (0..soft.rows()).map(|r| argmax(soft.row(r))).collect();
        Self { soft, hard }
    }

    /// One-hot matrix of the hard selection.
    pub fn one_hot(&self) -> Tensor {
        let k = self.soft.cols();
        let mut data = vec![0.0; self.hard.len() * k];
        for (r, &i) in self.hard.iter().enumerate() {
            data[r * k + i] = 1.0;
        }
        Tensor::matrix(self.hard.len(), k, data).expect("one-hot shape")
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Estimated oracle: the subspace whose projections differ the most.
pub fn estimate_oracle(delta: &[f64]) -> usize {
    argmax(delta)
}

/// Mean over the batch of `‖x − x̂‖²`.
pub fn rec_loss(tape: &mut Tape, x: Var, xhat: Var) -> Result<Var> {
    let n = tape.value(x).rows() as f64;
    let diff = tape.sub(x, xhat)?;
    let sq = tape.sq_l2_norm(diff)?;
    tape.scale(sq, 1.0 / n)
}

/// Per-row Euclidean norm of each subspace difference, divided by that
/// subspace's running mean norm. Returns an `N×k` matrix.
pub fn subspace_distances(
    tape: &mut Tape,
    codes1: &[Var],
    codes2: &[Var],
    mean_norms: &[f64],
) -> Result<Var> {
    if codes1.len() != codes2.len() || codes1.len() != mean_norms.len() {
        return Err(Error::dim("subspace_distances", "subspace counts differ"));
    }
    let mut cols = Vec::with_capacity(codes1.len());
    for ((&a, &b), &mu) in codes1.iter().zip(codes2).zip(mean_norms) {
        let diff = tape.sub(a, b)?;
        let sq = tape.mul(diff, diff)?;
        let rows = tape.sum_rows(sq)?;
        let norm = tape.sqrt(rows)?;
        cols.push(tape.scale(norm, 1.0 / mu.max(NORM_FLOOR))?);
    }
    tape.concat_cols(&cols)
}

/// Mean of `‖sⁱ‖` over the rows of each code matrix.
pub fn code_norm_means(codes: &[&Tensor]) -> Vec<f64> {
    codes
        .iter()
        .map(|c| {
            let total: f64 = (0..c.rows())
                .map(|r| c.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
                .sum();
            total / c.rows() as f64
        })
        .collect()
}

/// `A = softmax_rows(τ · δ²)`.
pub fn soft_mask(tape: &mut Tape, delta: Var, tau: f64) -> Result<Var> {
    if tau <= 0.0 {
        return Err(Error::Contract(
            "soft-mask temperature must be positive".into(),
        ));
    }
    let sq = tape.mul(delta, delta)?;
    let logits = tape.scale(sq, tau)?;
    tape.softmax_rows(logits)
}

/// Mean over pairs of `Σᵢ (1−αᵢ)·δᵢ² + αᵢ·max(m−δᵢ, 0)²`.
///
/// `selection` is an `N×k` matrix of per-pair weights: one-hot rows for the
/// hard oracle, or the soft mask rows.
pub fn dis_loss(tape: &mut Tape, delta: Var, selection: Var, margin: f64) -> Result<Var> {
    let n = tape.value(delta).rows() as f64;
    let sq = tape.mul(delta, delta)?;
    let neg_sel = tape.scale(selection, -1.0)?;
    let unselected = tape.add_scalar(neg_sel, 1.0)?;
    let pull = tape.mul(unselected, sq)?;
    let neg_delta = tape.scale(delta, -1.0)?;
    let gap = tape.add_scalar(neg_delta, margin)?;
    let hinge = tape.max_scalar(gap, 0.0)?;
    let hinge_sq = tape.mul(hinge, hinge)?;
    let push = tape.mul(selection, hinge_sq)?;
    let both = tape.add(pull, push)?;
    let total = tape.sum(both)?;
    tape.scale(total, 1.0 / n)
}

/// Mean over the batch of `Σᵢ ‖sⁱ ⊙ Σ_{j≠i} sʲ‖₁`.
pub fn spar_loss(tape: &mut Tape, codes: &[Var]) -> Result<Var> {
    if codes.len() < 2 {
        return Err(Error::Contract("sparsity loss needs k >= 2".into()));
    }
    let n = tape.value(codes[0]).rows() as f64;
    let mut terms = Vec::with_capacity(codes.len());
    for i in 0..codes.len() {
        let mut others = codes
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v);
        let first = others.next().expect("k >= 2");
        let rest = others.try_fold(first, |acc, s| tape.add(acc, s))?;
        let prod = tape.mul(codes[i], rest)?;
        terms.push(tape.l1_norm(prod)?);
    }
    let total = terms[1..]
        .iter()
        .try_fold(terms[0], |acc, &t| tape.add(acc, t))?;
    tape.scale(total, 1.0 / n)
}

/// `Σⱼ ((1/N) Σₙ A[n,j] − 1/k)²`.
pub fn reg_loss(tape: &mut Tape, mask: Var) -> Result<Var> {
    let (n, k) = (tape.value(mask).rows(), tape.value(mask).cols());
    let avg = tape.constant(Tensor::full(&[1, n], 1.0 / n as f64));
    let col_means = tape.matmul(avg, mask)?;
    let centered = tape.add_scalar(col_means, -1.0 / k as f64)?;
    tape.sq_l2_norm(centered)
}

/// Mean over the batch of `Σᵢ ‖Pᵢ(f(x̂_{sᵢ})) − sᵢ‖²`, where `x̂_{sᵢ}` decodes
/// subspace `i` of the first sample with the other subspaces of the second.
pub fn cons_loss(
    tape: &mut Tape,
    model: &BoundModel<'_>,
    codes1: &[Var],
    codes2: &[Var],
) -> Result<Var> {
    let n = tape.value(codes1[0]).rows() as f64;
    let mut total: Option<Var> = None;
    for i in 0..codes1.len() {
        let z = swap_aggregate(tape, codes1, codes2, i)?;
        let xhat = model.decode(tape, z)?;
        let zhat = model.encode(tape, xhat)?;
        let back = model.project_one(tape, zhat, i)?;
        let diff = tape.sub(back, codes1[i])?;
        let sq = tape.sq_l2_norm(diff)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, sq)?,
            None => sq,
        });
    }
    let total = total.ok_or_else(|| Error::Contract("no subspaces".into()))?;
    tape.scale(total, 1.0 / n)
}

/// Unweighted term values plus the weights they were combined with.
/// Terms whose phase is off are exactly 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub rec: f64,
    pub dis: f64,
    pub spar: f64,
    pub cons: f64,
    pub reg: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl LossBreakdown {
    /// The weighted terms, in the order rec, dis, spar, cons, reg.
    pub fn weighted_terms(&self) -> [f64; 5] {
        [
            self.rec,
            self.beta1 * self.dis,
            self.beta1 * self.spar,
            self.beta2 * self.cons,
            self.beta3 * self.reg,
        ]
    }

    pub fn total(&self) -> f64 {
        self.weighted_terms().iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    /// Softmax sharpness for the oracle mask.
    pub tau: f64,
    pub selection: Selection,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            tau: 10.0,
            selection: Selection::Soft,
        }
    }
}

/// The recorded objective for one pair batch.
pub struct TotalLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
    /// `N×k` normalized distances.
    pub delta: Tensor,
    pub mask: OracleMask,
    /// Batch mean of `‖sⁱ‖` over both elements of every pair.
    pub batch_norms: Vec<f64>,
}

/// `L_rec + β₁(L_dis + L_spar) + β₂ L_cons + β₃ L_reg`, skipping every term
/// whose phase flag is off (or whose weight is exactly zero).
///
/// Reconstruction and sparsity are averaged over both pair elements.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape,
    model: &BoundModel<'_>,
    x1: Var,
    x2: Var,
    mean_norms: &[f64],
    weights: &LossWeights,
    flags: PhaseFlags,
    opts: &LossOptions,
) -> Result<TotalLoss> {
    let zhat1 = model.encode(tape, x1)?;
    let zhat2 = model.encode(tape, x2)?;
    let c1 = model.project(tape, zhat1)?;
    let c2 = model.project(tape, zhat2)?;

    let z1 = model.aggregate(tape, &c1)?;
    let z2 = model.aggregate(tape, &c2)?;
    let xh1 = model.decode(tape, z1)?;
    let xh2 = model.decode(tape, z2)?;
    let r1 = rec_loss(tape, x1, xh1)?;
    let r2 = rec_loss(tape, x2, xh2)?;
    let rs = tape.add(r1, r2)?;
    let rec = tape.scale(rs, 0.5)?;

    let mut breakdown = LossBreakdown {
        rec: tape.scalar(rec),
        beta1: if flags.dis { weights.beta1 } else { 0.0 },
        beta2: if flags.cons { weights.beta2 } else { 0.0 },
        beta3: if flags.reg { weights.beta3 } else { 0.0 },
        ..Default::default()
    };
    let mut total = rec;

    let delta = subspace_distances(tape, &c1, &c2, mean_norms)?;
    let mask = soft_mask(tape, delta, opts.tau)?;
    let oracle = OracleMask::from_soft(tape.value(mask).clone());

    if breakdown.beta3 > 0.0 {
        let reg = reg_loss(tape, mask)?;
        breakdown.reg = tape.scalar(reg);
        let w = tape.scale(reg, breakdown.beta3)?;
        total = tape.add(total, w)?;
    }
    if breakdown.beta1 > 0.0 {
        let selection = match opts.selection {
            Selection::Soft => mask,
            Selection::Hard => tape.constant(oracle.one_hot()),
        };
        let dis = dis_loss(tape, delta, selection, weights.margin)?;
        let s1 = spar_loss(tape, &c1)?;
        let s2 = spar_loss(tape, &c2)?;
        let ss = tape.add(s1, s2)?;
        let spar = tape.scale(ss, 0.5)?;
        breakdown.dis = tape.scalar(dis);
        breakdown.spar = tape.scalar(spar);
        let both = tape.add(dis, spar)?;
        let w = tape.scale(both, breakdown.beta1)?;
        total = tape.add(total, w)?;
    }
    if breakdown.beta2 > 0.0 {
        let cons = cons_loss(tape, model, &c1, &c2)?;
        breakdown.cons = tape.scalar(cons);
        let w = tape.scale(cons, breakdown.beta2)?;
        total = tape.add(total, w)?;
    }

    let delta_t = tape.value(delta).clone();
    if (0..delta_t.rows()).any(|r| delta_t.row(r).iter().all(|&v| v == 0.0)) {
        log::warn!("pair with zero distance in every subspace; oracle falls back to subspace 0");
    }
    let norms1 = code_norm_means(&c1.iter().map(|&c| tape.value(c)).collect::<Vec<_>>());
    let norms2 = code_norm_means(&c2.iter().map(|&c| tape.value(c)).collect::<Vec<_>>());
    let batch_norms = norms1
        .iter()
        .zip(&norms2)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();

    Ok(TotalLoss {
        total,
        breakdown,
        delta: delta_t,
        mask: oracle,
        batch_norms,
    })
}
