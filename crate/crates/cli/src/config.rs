//! Flat `key = value` run configuration with `#` comments.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use pmdp_core::metrics::EvalOptions;
use pmdp_core::schedule::TrainConfig;
use pmdp_core::synthdata::{ChangePolicy, DatasetConfig, DatasetKind, FactorSpec};
use pmdp_core::verify::{Definition2Options, SparRunConfig};
use pmdp_core::{Error, Result};
use sha2::{Digest, Sha256};

/// Everything a run needs: training, evaluation and verification settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub def2: Definition2Options,
    pub spar: SparRunConfig,
    /// Seeds swept by `verify --mode spar`.
    pub spar_seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::new(30_000),
            eval: EvalOptions::default(),
            def2: Definition2Options::default(),
            spar: SparRunConfig::new(3, 6, 20_000),
            spar_seeds: 10,
        }
    }
}

fn bad(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| bad(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, format!("expected true/false, got `{value}`"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Round-trip float formatting.
fn num(v: f64) -> String {
    format!("{v:?}")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        let mut major = None;
        let mut minor = None;
        let mut kind = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(line, format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(bad(key, "given more than once"));
            }
            cfg.set(key, value, &mut kind, &mut major, &mut minor)?;
        }
        cfg.train.dataset.kind = match kind.as_deref() {
            None | Some("torus") => {
                let DatasetKind::Torus {
                    major: m0,
                    minor: r0,
                } = DatasetConfig::torus().kind
                else {
                    unreachable!("the default dataset is a torus")
                };
                DatasetKind::Torus {
                    major: major.unwrap_or(m0),
                    minor: minor.unwrap_or(r0),
                }
            }
            Some("product") => {
                if major.is_some() || minor.is_some() {
                    return Err(bad("dataset.major", "only valid with dataset.kind = torus"));
                }
                DatasetKind::Product
            }
            Some(other) => return Err(bad("dataset.kind", format!("unknown kind `{other}`"))),
        };
        cfg.train.model.input_dim = cfg.train.dataset.ambient_dim;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn set(
        &mut self,
        key: &str,
        v: &str,
        kind: &mut Option<String>,
        major: &mut Option<f64>,
        minor: &mut Option<f64>,
    ) -> Result<()> {
        let t = &mut self.train;
        match key {
            "seed" => t.seed = parse(key, v)?,
            "steps" => t.schedule.total_steps = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "d" => t.model.latent_dim = parse(key, v)?,
            "k" => t.model.num_subspaces = parse(key, v)?,
            "encoder_hidden" => t.model.encoder_hidden = parse_list(key, v)?,
            "decoder_hidden" => t.model.decoder_hidden = parse_list(key, v)?,
            "margin" => t.margin = parse(key, v)?,
            "tau" => t.tau = parse(key, v)?,
            "soft_oracle" => t.soft_oracle = parse_bool(key, v)?,
            "beta1_max" => t.schedule.beta1_max = parse(key, v)?,
            "beta2_max" => t.schedule.beta2_max = parse(key, v)?,
            "beta3_max" => t.schedule.beta3_max = parse(key, v)?,
            "warmup_frac" => t.schedule.warmup_frac = parse(key, v)?,
            "entry_reg" => t.schedule.entry_reg = parse(key, v)?,
            "entry_dis" => t.schedule.entry_dis = parse(key, v)?,
            "entry_cons" => t.schedule.entry_cons = parse(key, v)?,
            "ramp_frac" => t.schedule.ramp_frac = parse(key, v)?,
            "lr" => t.adam.lr = parse(key, v)?,
            "adam_b1" => t.adam.b1 = parse(key, v)?,
            "adam_b2" => t.adam.b2 = parse(key, v)?,
            "adam_eps" => t.adam.eps = parse(key, v)?,
            "dataset.kind" => *kind = Some(v.to_string()),
            "dataset.major" => *major = Some(parse(key, v)?),
            "dataset.minor" => *minor = Some(parse(key, v)?),
            "dataset.factors" => {
                t.dataset.factors = FactorSpec::from_str(v).map_err(|e| bad(key, e))?
            }
            "dataset.ambient_dim" => t.dataset.ambient_dim = parse(key, v)?,
            "dataset.noise" => t.dataset.noise = parse(key, v)?,
            "dataset.policy" => {
                t.dataset.policy = ChangePolicy::from_str(v).map_err(|e| bad(key, e))?
            }
            "dataset.seed" => t.dataset.seed = parse(key, v)?,
            "eval.samples" => self.eval.samples = parse(key, v)?,
            "eval.bins" => self.eval.bins = parse(key, v)?,
            "eval.seed" => self.eval.seed = parse(key, v)?,
            "eval.score_batch" => self.eval.scores.batch = parse(key, v)?,
            "eval.score_train" => self.eval.scores.train = parse(key, v)?,
            "eval.score_test" => self.eval.scores.test = parse(key, v)?,
            "eval.score_iters" => self.eval.scores.iters = parse(key, v)?,
            "eval.score_lr" => self.eval.scores.lr = parse(key, v)?,
            "eval.def2_pairs" => self.def2.pairs = parse(key, v)?,
            "eval.def2_threshold" => self.def2.threshold = parse(key, v)?,
            "verify.k" => self.spar.k = parse(key, v)?,
            "verify.d" => self.spar.d = parse(key, v)?,
            "verify.steps" => self.spar.steps = parse(key, v)?,
            "verify.seeds" => self.spar_seeds = parse(key, v)?,
            "verify.lr_start" => self.spar.lr_start = parse(key, v)?,
            "verify.lr_end" => self.spar.lr_end = parse(key, v)?,
            "verify.init_scale" => self.spar.init_scale = parse(key, v)?,
            "verify.norm_floor" => self.spar.norm_floor = parse(key, v)?,
            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }

    /// Canonical text listing every key with its effective value; parsing it
    /// back yields the same config.
    pub fn snapshot(&self) -> String {
        let t = &self.train;
        let s = &t.schedule;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("seed", t.seed.to_string());
        put("steps", s.total_steps.to_string());
        put("batch_size", t.batch_size.to_string());
        put("d", t.model.latent_dim.to_string());
        put("k", t.model.num_subspaces.to_string());
        put("encoder_hidden", join(&t.model.encoder_hidden));
        put("decoder_hidden", join(&t.model.decoder_hidden));
        put("margin", num(t.margin));
        put("tau", num(t.tau));
        put("soft_oracle", t.soft_oracle.to_string());
        put("beta1_max", num(s.beta1_max));
        put("beta2_max", num(s.beta2_max));
        put("beta3_max", num(s.beta3_max));
        put("warmup_frac", num(s.warmup_frac));
        put("entry_reg", num(s.entry_reg));
        put("entry_dis", num(s.entry_dis));
        put("entry_cons", num(s.entry_cons));
        put("ramp_frac", num(s.ramp_frac));
        put("lr", num(t.adam.lr));
        put("adam_b1", num(t.adam.b1));
        put("adam_b2", num(t.adam.b2));
        put("adam_eps", num(t.adam.eps));
        match t.dataset.kind {
            DatasetKind::Torus { major, minor } => {
                put("dataset.kind", "torus".into());
                put("dataset.major", num(major));
                put("dataset.minor", num(minor));
            }
            DatasetKind::Product => put("dataset.kind", "product".into()),
        }
        put("dataset.factors", t.dataset.factors.to_string());
        put("dataset.ambient_dim", t.dataset.ambient_dim.to_string());
        put("dataset.noise", num(t.dataset.noise));
        put("dataset.policy", t.dataset.policy.to_string());
        put("dataset.seed", t.dataset.seed.to_string());
        let e = &self.eval;
        put("eval.samples", e.samples.to_string());
        put("eval.bins", e.bins.to_string());
        put("eval.seed", e.seed.to_string());
        put("eval.score_batch", e.scores.batch.to_string());
        put("eval.score_train", e.scores.train.to_string());
        put("eval.score_test", e.scores.test.to_string());
        put("eval.score_iters", e.scores.iters.to_string());
        put("eval.score_lr", num(e.scores.lr));
        put("eval.def2_pairs", self.def2.pairs.to_string());
        put("eval.def2_threshold", num(self.def2.threshold));
        put("verify.k", self.spar.k.to_string());
        put("verify.d", self.spar.d.to_string());
        put("verify.steps", self.spar.steps.to_string());
        put("verify.seeds", self.spar_seeds.to_string());
        put("verify.lr_start", num(self.spar.lr_start));
        put("verify.lr_end", num(self.spar.lr_end));
        put("verify.init_scale", num(self.spar.init_scale));
        put("verify.norm_floor", num(self.spar.norm_floor));
        out
    }

    /// Git-style blob hash (SHA-256 of `blob <len>\0<snapshot>`), hex.
    pub fn content_hash(&self) -> String {
        let snap = self.snapshot();
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", snap.len()).as_bytes());
        h.update(snap.as_bytes());
        hex::encode(h.finalize())
    }
}
