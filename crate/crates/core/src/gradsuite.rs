//! Central-difference checks of every training loss, taken with respect to
//! the parameters of a small random model.

use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{finite_diff_check, GradCheck, Tape, Var};
use crate::error::{Error, Result};
use crate::losses::{
    code_norm_means, cons_loss, dis_loss, rec_loss, reg_loss, soft_mask, spar_loss,
    subspace_distances, total_loss, LossOptions, LossWeights, OracleMask, PhaseFlags, Selection,
};
use crate::model::{BoundModel, ModelConfig, ModelParams};
use crate::rng::Streams;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub model: ModelConfig,
    pub batch: usize,
    pub step: f64,
    /// Draws are rejected until every kink and every hard-selection tie is
    /// at least this far away.
    pub min_margin: f64,
    pub tau: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub max_draws: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                input_dim: 5,
                latent_dim: 4,
                num_subspaces: 3,
                encoder_hidden: vec![6],
                decoder_hidden: vec![6],
            },
            batch: 2,
            step: 1e-5,
            min_margin: 1e-3,
            tau: 10.0,
            weights: LossWeights {
                beta1: 0.1,
                beta2: 100.0,
                beta3: 1e-4,
                margin: 1.0,
            },
            seed: 0,
            max_draws: 1000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TermCheck {
    pub term: &'static str,
    pub check: GradCheck,
}

/// Terms checked, in report order.
pub const TERMS: [&str; 6] = ["rec", "cons", "dis", "spar", "reg", "total"];

struct Draw {
    params: ModelParams,
    x1: Tensor,
    x2: Tensor,
    mean_norms: Vec<f64>,
    hard: Tensor,
}

fn gaussian(rows: usize, cols: usize, rng: &mut crate::rng::Rng) -> Tensor {
    let v = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut *rng))
        .collect();
    Tensor::matrix(rows, cols, v).expect("shape")
}

/// Smallest gap between the two largest entries of any row.
fn selection_gap(delta: &Tensor) -> f64 {
    (0..delta.rows())
        .map(|r| {
            let mut row = delta.row(r).to_vec();
            row.sort_by(|a, b| b.total_cmp(a));
            row[0] - row.get(1).copied().unwrap_or(f64::NEG_INFINITY)
        })
        .fold(f64::INFINITY, f64::min)
}

fn draw(cfg: &SuiteConfig) -> Result<(Draw, usize)> {
    let streams = Streams::new(cfg.seed);
    let all = PhaseFlags {
        reg: true,
        dis: true,
        cons: true,
    };
    for attempt in 0..cfg.max_draws {
        let mut rng = streams.indexed("gradcheck", attempt as u64);
        let params = ModelParams::init(&cfg.model, &mut rng)?;
        let x1 = gaussian(cfg.batch, cfg.model.input_dim, &mut rng);
        let x2 = gaussian(cfg.batch, cfg.model.input_dim, &mut rng);

        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, &cfg.model, &params);
        let v1 = tape.constant(x1.clone());
        let c1 = {
            let z = bound.encode(&mut tape, v1)?;
            bound.project(&mut tape, z)?
        };
        let mean_norms = code_norm_means(&c1.iter().map(|&c| tape.value(c)).collect::<Vec<_>>());
        let v2 = tape.constant(x2.clone());
        let opts = LossOptions {
            tau: cfg.tau,
            selection: Selection::Soft,
        };
        let out = total_loss(
            &mut tape,
            &bound,
            v1,
            v2,
            &mean_norms,
            &cfg.weights,
            all,
            &opts,
        )?;
        let d = &out.delta;
        let scale = d.max_abs().max(1.0);
        // The hinge and the square roots are kinks on the tape; the argmax
        // behind the hard selection is not.
        if tape.kink_margin() > cfg.min_margin && selection_gap(d) > cfg.min_margin * scale {
            let hard = OracleMask {
                soft: d.clone(),
                hard: out.mask.hard,
            }
            .one_hot();
            return Ok((
                Draw {
                    params,
                    x1,
                    x2,
                    mean_norms,
                    hard,
                },
                attempt + 1,
            ));
        }
    }
    Err(Error::Degenerate(format!(
        "no kink-free draw in {} attempts",
        cfg.max_draws
    )))
}

fn term_value(
    cfg: &SuiteConfig,
    d: &Draw,
    term: &str,
    tape: &mut Tape,
    vars: &[Var],
) -> Result<Var> {
    let bound = BoundModel::with_vars(&cfg.model, &d.params, vars.to_vec())?;
    let x1 = tape.constant(d.x1.clone());
    let x2 = tape.constant(d.x2.clone());
    let zh1 = bound.encode(tape, x1)?;
    let zh2 = bound.encode(tape, x2)?;
    let c1 = bound.project(tape, zh1)?;
    let c2 = bound.project(tape, zh2)?;
    match term {
        "rec" => {
            let z = bound.aggregate(tape, &c1)?;
            let xh = bound.decode(tape, z)?;
            rec_loss(tape, x1, xh)
        }
        "cons" => cons_loss(tape, &bound, &c1, &c2),
        "dis" => {
            let delta = subspace_distances(tape, &c1, &c2, &d.mean_norms)?;
            let sel = tape.constant(d.hard.clone());
            dis_loss(tape, delta, sel, cfg.weights.margin)
        }
        "spar" => spar_loss(tape, &c1),
        "reg" => {
            let delta = subspace_distances(tape, &c1, &c2, &d.mean_norms)?;
            let mask = soft_mask(tape, delta, cfg.tau)?;
            reg_loss(tape, mask)
        }
        "total" => {
            let flags = PhaseFlags {
                reg: true,
                dis: true,
                cons: true,
            };
            let opts = LossOptions {
                tau: cfg.tau,
                selection: Selection::Soft,
            };
            Ok(total_loss(
                tape,
                &bound,
                x1,
                x2,
                &d.mean_norms,
                &cfg.weights,
                flags,
                &opts,
            )?
            .total)
        }
        other => Err(Error::Contract(format!("unknown loss term `{other}`"))),
    }
}

/// Checks every term in [`TERMS`] at one kink-free random draw. Also returns
/// how many draws were needed.
pub fn gradient_suite(cfg: &SuiteConfig) -> Result<(Vec<TermCheck>, usize)> {
    let (d, draws) = draw(cfg)?;
    let checks = TERMS
        .iter()
        .map(|&term| {
            let check = finite_diff_check(
                |tape, vars| term_value(cfg, &d, term, tape, vars),
                d.params.tensors(),
                cfg.step,
            )?;
            Ok(TermCheck { term, check })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((checks, draws))
}
