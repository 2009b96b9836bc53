//! Two-phase training: reconstruction only during warm-up, then the
//! balance, distance/sparsity and consistency terms enter one after the
//! other on exponential ramps.

use crate::autodiff::{AdamConfig, AdamState, Tape};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::losses::{
    total_loss, LossBreakdown, LossOptions, LossWeights, PhaseFlags, Selection, SubspaceNormTracker,
};
use crate::model::{BoundModel, Model, ModelConfig};
use crate::rng::Streams;
use crate::synthdata::{Dataset, DatasetConfig};
use crate::tensor::Tensor;
use crate::verify::OracleConfusion;

/// Steps per logging epoch.
pub const EPOCH_STEPS: usize = 1000;

/// Below this fraction of its maximum, β₃ counts as decayed and the distance
/// loss switches from soft to hard selection.
pub const HARD_SELECTION_BELOW: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct BetaSchedule {
    pub total_steps: usize,
    pub warmup_frac: f64,
    pub entry_reg: f64,
    pub entry_dis: f64,
    pub entry_cons: f64,
    /// Ramp time constant as a fraction of `total_steps`.
    pub ramp_frac: f64,
    pub beta1_max: f64,
    pub beta2_max: f64,
    pub beta3_max: f64,
}

impl BetaSchedule {
    pub fn new(total_steps: usize) -> Self {
        Self {
            total_steps,
            warmup_frac: 0.2,
            entry_reg: 0.2,
            entry_dis: 0.3,
            entry_cons: 0.4,
            ramp_frac: 0.1,
            beta1_max: 0.1,
            beta2_max: 100.0,
            beta3_max: 0.0001,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::config(key, why));
        if self.total_steps == 0 {
            return bad("steps", "must be >= 1");
        }
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return bad("warmup_frac", "must lie in (0, 1)");
        }
        if self.entry_reg < self.warmup_frac {
            return bad("entry_reg", "must not precede the warm-up end");
        }
        if self.entry_dis < self.entry_reg {
            return bad("entry_dis", "must not precede entry_reg");
        }
        if self.entry_cons < self.entry_dis {
            return bad("entry_cons", "must not precede entry_dis");
        }
        if !(self.ramp_frac > 0.0) {
            return bad("ramp_frac", "must be positive");
        }
        for (key, v) in [
            ("beta1_max", self.beta1_max),
            ("beta2_max", self.beta2_max),
            ("beta3_max", self.beta3_max),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(key, "must be finite and >= 0");
            }
        }
        Ok(())
    }

    fn ramp(&self, step: f64, entry_frac: f64, max: f64) -> f64 {
        let t = self.total_steps as f64;
        let entry = entry_frac * t;
        if step < entry {
            0.0
        } else {
            max * (1.0 - (-(step - entry) / (self.ramp_frac * t)).exp())
        }
    }

    /// Weights and phase flags at `step` (`0..=total_steps`).
    pub fn beta_at(&self, step: usize) -> Result<Betas> {
        if step > self.total_steps {
            return Err(Error::Contract(format!(
                "step {step} beyond schedule of {} steps",
                self.total_steps
            )));
        }
        let s = step as f64;
        let t = self.total_steps as f64;
        let flags = PhaseFlags {
            reg: s >= self.entry_reg * t,
            dis: s >= self.entry_dis * t,
            cons: s >= self.entry_cons * t,
        };
        let beta1 = self.ramp(s, self.entry_dis, self.beta1_max);
        let beta2 = self.ramp(s, self.entry_cons, self.beta2_max);
        let beta3 = if !flags.reg {
            0.0
        } else if self.beta2_max > 0.0 {
            self.beta3_max * (1.0 - beta2 / self.beta2_max)
        } else {
            self.beta3_max
        };
        Ok(Betas {
            beta1,
            beta2,
            beta3,
            flags,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Betas {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub flags: PhaseFlags,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub model: ModelConfig,
    pub schedule: BetaSchedule,
    pub margin: f64,
    pub tau: f64,
    /// Use the soft mask as selection weights until β₃ has decayed.
    pub soft_oracle: bool,
    pub adam: AdamConfig,
    pub dataset: DatasetConfig,
}

impl TrainConfig {
    pub fn new(steps: usize) -> Self {
        Self {
            seed: 0,
            batch_size: 32,
            model: ModelConfig::default(),
            schedule: BetaSchedule::new(steps),
            margin: 1.0,
            tau: 10.0,
            soft_oracle: true,
            adam: AdamConfig::default(),
            dataset: DatasetConfig::torus(),
        }
    }

    pub fn steps(&self) -> usize {
        self.schedule.total_steps
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be >= 2"));
        }
        if !(self.margin > 0.0) {
            return Err(Error::config("margin", "must be positive"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config("tau", "must be positive"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if self.model.input_dim != self.dataset.ambient_dim {
            return Err(Error::config(
                "dataset.ambient_dim",
                "must equal the model input width",
            ));
        }
        if self.model.num_subspaces < 2 {
            return Err(Error::config("k", "must be >= 2"));
        }
        self.model.validate()?;
        self.schedule.validate()
    }

    fn weights(&self, betas: &Betas) -> LossWeights {
        LossWeights {
            beta1: betas.beta1,
            beta2: betas.beta2,
            beta3: betas.beta3,
            margin: self.margin,
        }
    }

    fn selection(&self, betas: &Betas) -> Selection {
        let decayed = betas.beta3 <= HARD_SELECTION_BELOW * self.schedule.beta3_max;
        if self.soft_oracle && !decayed {
            Selection::Soft
        } else {
            Selection::Hard
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub breakdown: LossBreakdown,
    pub flags: PhaseFlags,
    pub selection: Selection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// Last step included in the epoch.
    pub step: usize,
    /// Agreement of the estimated oracle with the true changed factor over
    /// the single-factor pairs seen this epoch.
    pub oracle_agreement: f64,
    pub mean_rec: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub tracker: SubspaceNormTracker,
    pub history: History,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.model.params.clone(),
            tracker: self.tracker.clone(),
        }
    }
}

/// State carried across steps; lets callers drive training one step at a
/// time.
pub struct Trainer<'a> {
    cfg: &'a TrainConfig,
    dataset: &'a Dataset,
    pub model: Model,
    pub tracker: SubspaceNormTracker,
    adam: AdamState,
    data_rng: crate::rng::Rng,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a TrainConfig, dataset: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        let streams = Streams::new(cfg.seed);
        let model = Model::new(cfg.model.clone(), &mut streams.stream("init"))?;
        let adam = AdamState::new(cfg.adam, model.params.tensors());
        Ok(Self {
            cfg,
            dataset,
            tracker: SubspaceNormTracker::new(cfg.model.num_subspaces),
            model,
            adam,
            data_rng: streams.stream("data"),
            step: 0,
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    /// Runs one optimization step on a freshly sampled batch.
    pub fn step(&mut self) -> Result<(StepRecord, Tensor, Vec<Vec<usize>>)> {
        let batch = self.dataset.sample_batch(
            self.cfg.batch_size,
            self.cfg.dataset.policy,
            &mut self.data_rng,
        )?;
        let betas = self.cfg.schedule.beta_at(self.step)?;
        let weights = self.cfg.weights(&betas);
        let opts = LossOptions {
            tau: self.cfg.tau,
            selection: self.cfg.selection(&betas),
        };
        let step = self.step;
        let numeric = |e: Error| match e {
            Error::NonFinite { op } => Error::Numeric {
                step,
                detail: format!("non-finite value in {op}"),
            },
            other => other,
        };

        let (out, grads) = {
            let mut tape = Tape::new();
            let bound = BoundModel::bind(&mut tape, &self.model.config, &self.model.params);
            let x1 = tape.constant(batch.x1.clone());
            let x2 = tape.constant(batch.x2.clone());
            let out = total_loss(
                &mut tape,
                &bound,
                x1,
                x2,
                self.tracker.mean_norms(),
                &weights,
                betas.flags,
                &opts,
            )
            .map_err(numeric)?;
            let mut g = tape.backward(out.total)?;
            let grads: Vec<Tensor> = bound
                .vars()
                .iter()
                .map(|&v| g.take(v).expect("parameter gradient"))
                .collect();
            (out, grads)
        };
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                step,
                detail: format!(
                    "non-finite gradient for {} (losses {:?})",
                    self.model.params.names()[bad],
                    out.breakdown
                ),
            });
        }
        self.adam.step(self.model.params.tensors_mut(), &grads)?;
        self.tracker.update(&out.batch_norms);
        self.step += 1;

        let record = StepRecord {
            step,
            breakdown: out.breakdown,
            flags: betas.flags,
            selection: opts.selection,
        };
        let changed = batch.pairs.into_iter().map(|p| p.changed).collect();
        Ok((record, out.delta, changed))
    }
}

/// Runs every scheduled step and returns the trained model.
pub fn train(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    train_with(cfg, dataset, |_| {})
}

/// Training events reported to the [`train_with`] callback.
pub enum Progress<'a> {
    Step(&'a StepRecord),
    Epoch(&'a EpochRecord),
    /// Training stops on `error`. `state` holds the parameters and norms from
    /// before the failing step; `history` the steps that completed.
    Abort {
        error: &'a Error,
        state: Checkpoint,
        history: &'a History,
    },
}

/// As [`train`], reporting progress to `on_progress`.
pub fn train_with(
    cfg: &TrainConfig,
    dataset: &Dataset,
    mut on_progress: impl FnMut(Progress<'_>),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg, dataset)?;
    let k = cfg.model.num_subspaces;
    let mut history = History::default();
    let mut confusion = OracleConfusion::new(dataset.spec().len(), k);
    let mut rec_sum = 0.0;
    let mut in_epoch = 0usize;

    for step in 0..cfg.steps() {
        let (record, delta, changed) = match trainer.step() {
            Ok(out) => out,
            Err(error) => {
                on_progress(Progress::Abort {
                    error: &error,
                    state: Checkpoint {
                        params: trainer.model.params.clone(),
                        tracker: trainer.tracker.clone(),
                    },
                    history: &history,
                });
                return Err(error);
            }
        };
        for (r, c) in changed.iter().enumerate() {
            if let [factor] = c.as_slice() {
                confusion.record(*factor, delta.row(r));
            }
        }
        rec_sum += record.breakdown.rec;
        in_epoch += 1;
        on_progress(Progress::Step(&record));
        history.steps.push(record);

        if (step + 1) % EPOCH_STEPS == 0 || step + 1 == cfg.steps() {
            let epoch = EpochRecord {
                step,
                oracle_agreement: confusion.agreement(),
                mean_rec: rec_sum / in_epoch as f64,
            };
            log::info!(
                "step {:>6}  rec {:.5}  oracle agreement {:.3}",
                step + 1,
                epoch.mean_rec,
                epoch.oracle_agreement
            );
            on_progress(Progress::Epoch(&epoch));
            history.epochs.push(epoch);
            confusion = OracleConfusion::new(dataset.spec().len(), k);
            rec_sum = 0.0;
            in_epoch = 0;
        }
    }

    Ok(TrainOutcome {
        model: trainer.model,
        tracker: trainer.tracker,
        history,
    })
}

/// Convenience wrapper building the dataset from the config.
pub fn train_from_config(cfg: &TrainConfig) -> Result<(Dataset, TrainOutcome)> {
    let dataset = Dataset::new(cfg.dataset.clone())?;
    let outcome = train(cfg, &dataset)?;
    Ok((dataset, outcome))
}
