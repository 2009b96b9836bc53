//! Encoder, per-subspace projectors, sum aggregation and decoder.

use rand::Rng as _;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Width of ẑ, z and every subspace.
    pub latent_dim: usize,
    pub num_subspaces: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 12,
            latent_dim: 10,
            num_subspaces: 10,
            encoder_hidden: vec![64, 64],
            decoder_hidden: vec![64, 64],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = self
            .encoder_hidden
            .iter()
            .chain(&self.decoder_hidden)
            .chain([&self.input_dim, &self.latent_dim, &self.num_subspaces]);
        for &w in widths {
            if w == 0 {
                return Err(Error::Contract("all model widths must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// `(name, rows, cols)` for every parameter, sorted by name.
    fn layout(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut mlp = |prefix: &str, widths: Vec<usize>| {
            for (l, pair) in widths.windows(2).enumerate() {
                out.push((format!("{prefix}.{l}.weight"), pair[0], pair[1]));
                out.push((format!("{prefix}.{l}.bias"), 1, pair[1]));
            }
        };
        let d = self.latent_dim;
        let enc = std::iter::once(self.input_dim)
            .chain(self.encoder_hidden.iter().copied())
            .chain(std::iter::once(d))
            .collect();
        let dec = std::iter::once(d)
            .chain(self.decoder_hidden.iter().copied())
            .chain(std::iter::once(self.input_dim))
            .collect();
        mlp("encoder", enc);
        mlp("decoder", dec);
        for i in 0..self.num_subspaces {
            mlp(&format!("projector.{i}"), vec![d, d, d]);
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(|(_, r, c)| r * c).sum()
    }
}

/// All trainable tensors, kept sorted by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, rows, cols) in config.layout() {
            let t = if name.ends_with(".bias") {
                Tensor::zeros(&[rows, cols])
            } else {
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                let data = (0..rows * cols)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                Tensor::matrix(rows, cols, data)?
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(Self { names, tensors })
    }

    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (names, tensors) = config
            .layout()
            .into_iter()
            .map(|(n, r, c)| (n, Tensor::zeros(&[r, c])))
            .unzip();
        Ok(Self { names, tensors })
    }

    /// Rebuilds parameters from named tensors, checking them against `config`.
    pub fn from_named(config: &ModelConfig, mut named: Vec<(String, Tensor)>) -> Result<Self> {
        named.sort_by(|a, b| a.0.cmp(&b.0));
        let layout = config.layout();
        if layout.len() != named.len() {
            return Err(Error::dim(
                "model params",
                format!("expected {} tensors, got {}", layout.len(), named.len()),
            ));
        }
        for ((name, r, c), (got, t)) in layout.iter().zip(&named) {
            if name != got || t.shape() != [*r, *c] {
                return Err(Error::dim(
                    "model params",
                    format!("expected {name} [{r}, {c}], got {got} {:?}", t.shape()),
                ));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self { names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Per-sample subspace codes: `k` matrices of shape `N×d`.
pub type SubspaceCodes = Vec<Var>;

/// A model whose parameters have been placed on a tape as trainable leaves.
pub struct BoundModel<'a> {
    config: &'a ModelConfig,
    params: &'a ModelParams,
    vars: Vec<Var>,
}

impl<'a> BoundModel<'a> {
    pub fn bind(tape: &mut Tape, config: &'a ModelConfig, params: &'a ModelParams) -> Self {
        let vars = params
            .tensors
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect();
        Self {
            config,
            params,
            vars,
        }
    }

    /// Uses leaves already on the tape, given in [`ModelParams::tensors`]
    /// order, instead of creating new ones.
    pub fn with_vars(
        config: &'a ModelConfig,
        params: &'a ModelParams,
        vars: Vec<Var>,
    ) -> Result<Self> {
        if vars.len() != params.tensors.len() {
            return Err(Error::dim(
                "BoundModel::with_vars",
                format!(
                    "{} leaves for {} parameters",
                    vars.len(),
                    params.tensors.len()
                ),
            ));
        }
        Ok(Self {
            config,
            params,
            vars,
        })
    }

    /// Parameter leaves, in the same order as [`ModelParams::tensors`].
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn config(&self) -> &ModelConfig {
        self.config
    }

    fn var(&self, name: &str) -> Var {
        self.vars[self
            .params
            .index_of(name)
            .expect("parameter present in layout")]
    }

    fn mlp(&self, tape: &mut Tape, prefix: &str, layers: usize, x: Var) -> Result<Var> {
        let mut h = x;
        for l in 0..layers {
            let w = self.var(&format!("{prefix}.{l}.weight"));
            let b = self.var(&format!("{prefix}.{l}.bias"));
            let lin = tape.matmul(h, w)?;
            h = tape.add(lin, b)?;
            if l + 1 < layers {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    fn check_width(&self, tape: &Tape, op: &'static str, x: Var, want: usize) -> Result<()> {
        let v = tape.value(x);
        if v.shape().len() != 2 || v.shape()[1] != want {
            return Err(Error::dim(
                op,
                format!("expected width {want}, got {:?}", v.shape()),
            ));
        }
        Ok(())
    }

    /// ẑ = f(x).
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.check_width(tape, "encode", x, self.config.input_dim)?;
        self.mlp(tape, "encoder", self.config.encoder_hidden.len() + 1, x)
    }

    /// sⁱ = Pᵢ(ẑ) for every subspace.
    pub fn project(&self, tape: &mut Tape, zhat: Var) -> Result<SubspaceCodes> {
        self.check_width(tape, "project", zhat, self.config.latent_dim)?;
        (0..self.config.num_subspaces)
            .map(|i| self.project_one(tape, zhat, i))
            .collect()
    }

    pub fn project_one(&self, tape: &mut Tape, zhat: Var, i: usize) -> Result<Var> {
        self.mlp(tape, &format!("projector.{i}"), 2, zhat)
    }

    /// z = Σᵢ sⁱ.
    pub fn aggregate(&self, tape: &mut Tape, codes: &[Var]) -> Result<Var> {
        aggregate(tape, codes)
    }

    /// x̂ = g(z).
    pub fn decode(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        self.check_width(tape, "decode", z, self.config.latent_dim)?;
        self.mlp(tape, "decoder", self.config.decoder_hidden.len() + 1, z)
    }

    /// Decodes subspace `i` of the first sample combined with every other
    /// subspace of the second.
    pub fn swap_recombine(
        &self,
        tape: &mut Tape,
        codes1: &[Var],
        codes2: &[Var],
        i: usize,
    ) -> Result<Var> {
        let z = swap_aggregate(tape, codes1, codes2, i)?;
        self.decode(tape, z)
    }
}

/// Elementwise sum of subspace codes, accumulated in subspace order.
pub fn aggregate(tape: &mut Tape, codes: &[Var]) -> Result<Var> {
    let (&first, rest) = codes
        .split_first()
        .ok_or_else(|| Error::Contract("aggregate needs at least one subspace".into()))?;
    rest.iter().try_fold(first, |acc, &s| tape.add(acc, s))
}

/// Aggregate of `codes1[i]` with `codes2[j]` for every `j != i`, summed in
/// subspace order.
pub fn swap_aggregate(tape: &mut Tape, codes1: &[Var], codes2: &[Var], i: usize) -> Result<Var> {
    if codes1.len() != codes2.len() {
        return Err(Error::dim("swap_recombine", "subspace counts differ"));
    }
    if i >= codes1.len() {
        return Err(Error::Contract(format!(
            "subspace index {i} out of range for k = {}",
            codes1.len()
        )));
    }
    let mixed: Vec<Var> = (0..codes1.len())
        .map(|j| if j == i { codes1[j] } else { codes2[j] })
        .collect();
    aggregate(tape, &mixed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Forward results for a batch, detached from any tape.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub zhat: Tensor,
    pub codes: Vec<Tensor>,
    pub z: Tensor,
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let params = ModelParams::init(&config, rng)?;
        Ok(Self { config, params })
    }

    /// Runs encoder, projectors and aggregation without keeping gradients.
    /// Large batches are processed in chunks.
    pub fn encode_batch(&self, x: &Tensor) -> Result<Encoded> {
        const CHUNK: usize = 1024;
        let n = x.rows();
        let k = self.config.num_subspaces;
        let mut zhats = Vec::new();
        let mut zs = Vec::new();
        let mut codes: Vec<Vec<Tensor>> = vec![Vec::new(); k];
        let mut start = 0;
        while start < n {
            let idx: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
            let mut tape = Tape::new();
            let bound = BoundModel::bind(&mut tape, &self.config, &self.params);
            let xv = tape.constant(x.select_rows(&idx));
            let zhat = bound.encode(&mut tape, xv)?;
            let cs = bound.project(&mut tape, zhat)?;
            let z = bound.aggregate(&mut tape, &cs)?;
            zhats.push(tape.value(zhat).clone());
            zs.push(tape.value(z).clone());
            for (acc, c) in codes.iter_mut().zip(&cs) {
                acc.push(tape.value(*c).clone());
            }
            start += CHUNK;
        }
        Ok(Encoded {
            zhat: Tensor::vstack(&zhats)?,
            codes: codes
                .iter()
                .map(|parts| Tensor::vstack(parts))
                .collect::<Result<_>>()?,
            z: Tensor::vstack(&zs)?,
        })
    }

    /// Full reconstruction x̂ = g(aggr(P(f(x)))).
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = BoundModel::bind(&mut tape, &self.config, &self.params);
        let xv = tape.constant(x.clone());
        let zhat = bound.encode(&mut tape, xv)?;
        let cs = bound.project(&mut tape, zhat)?;
        let z = bound.aggregate(&mut tape, &cs)?;
        let out = bound.decode(&mut tape, z)?;
        Ok(tape.value(out).clone())
    }
}
