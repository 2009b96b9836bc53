//! Classifier-based scores that need fresh samples with one factor held
//! fixed: the BetaVAE linear-classifier score and the FactorVAE
//! majority-vote score.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::synthdata::FactorSpec;
use crate::tensor::Tensor;

/// Source of latent codes for freshly drawn factor settings.
pub trait LatentSampler {
    fn num_factors(&self) -> usize;

    /// `n` independent latents.
    fn sample(&mut self, n: usize) -> Result<Tensor>;

    /// `n` latents that share one random value of `factor`.
    fn sample_fixed(&mut self, factor: usize, n: usize) -> Result<Tensor>;

    /// `n` pairs; each pair shares its own random value of `factor`.
    fn sample_fixed_pairs(&mut self, factor: usize, n: usize) -> Result<(Tensor, Tensor)>;
}

/// Draws factor tuples from `spec` and maps each batch of tuples to latents
/// with `encode`.
pub struct SpecSampler<F> {
    spec: FactorSpec,
    rng: Rng,
    encode: F,
}

impl<F> SpecSampler<F>
where
    F: FnMut(&[Vec<f64>], &mut Rng) -> Result<Tensor>,
{
    pub fn new(spec: FactorSpec, rng: Rng, encode: F) -> Self {
        Self { spec, rng, encode }
    }

    fn encode(&mut self, factors: &[Vec<f64>]) -> Result<Tensor> {
        (self.encode)(factors, &mut self.rng)
    }
}

impl<F> LatentSampler for SpecSampler<F>
where
    F: FnMut(&[Vec<f64>], &mut Rng) -> Result<Tensor>,
{
    fn num_factors(&self) -> usize {
        self.spec.len()
    }

    fn sample(&mut self, n: usize) -> Result<Tensor> {
        let f: Vec<Vec<f64>> = (0..n).map(|_| self.spec.sample(&mut self.rng)).collect();
        self.encode(&f)
    }

    fn sample_fixed(&mut self, factor: usize, n: usize) -> Result<Tensor> {
        let shared = self.spec.factors[factor].sample(&mut self.rng);
        let f: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut v = self.spec.sample(&mut self.rng);
                v[factor] = shared;
                v
            })
            .collect();
        self.encode(&f)
    }

    fn sample_fixed_pairs(&mut self, factor: usize, n: usize) -> Result<(Tensor, Tensor)> {
        let mut f = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let mut a = self.spec.sample(&mut self.rng);
            let mut b = self.spec.sample(&mut self.rng);
            let shared = self.spec.factors[factor].sample(&mut self.rng);
            a[factor] = shared;
            b[factor] = shared;
            f.push(a);
            f.push(b);
        }
        let z = self.encode(&f)?;
        let first: Vec<usize> = (0..n).map(|i| 2 * i).collect();
        let second: Vec<usize> = (0..n).map(|i| 2 * i + 1).collect();
        Ok((z.select_rows(&first), z.select_rows(&second)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreOptions {
    /// Samples (or pairs) per training example / vote.
    pub batch: usize,
    pub train: usize,
    pub test: usize,
    /// Gradient-descent iterations for the linear classifier.
    pub iters: usize,
    pub lr: f64,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            batch: 64,
            train: 1000,
            test: 500,
            iters: 2000,
            lr: 0.5,
        }
    }
}

fn check_options(opts: &ScoreOptions, sampler: &dyn LatentSampler) -> Result<()> {
    if opts.batch < 2 || opts.train == 0 || opts.test == 0 {
        return Err(Error::Contract(
            "classifier scores need batch >= 2 and non-empty train/test sets".into(),
        ));
    }
    if sampler.num_factors() == 0 {
        return Err(Error::Contract("no factors to score".into()));
    }
    Ok(())
}

/// Multinomial logistic regression trained by full-batch gradient descent
/// on standardized features.
struct Softmax {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl Softmax {
    fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, iters: usize, lr: f64) -> Self {
        let n = x.len();
        let d = x[0].len();
        let mean: Vec<f64> = (0..d)
            .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
                if v > 0.0 {
                    1.0 / v.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let mut model = Self {
            mean,
            scale,
            weights: vec![vec![0.0; d]; classes],
            bias: vec![0.0; classes],
        };
        let xs: Vec<Vec<f64>> = x.iter().map(|r| model.standardize(r)).collect();
        for _ in 0..iters {
            let mut gw = vec![vec![0.0; d]; classes];
            let mut gb = vec![0.0; classes];
            for (row, &label) in xs.iter().zip(y) {
                let p = model.probs(row);
                for c in 0..classes {
                    let e = p[c] - if c == label { 1.0 } else { 0.0 };
                    gb[c] += e;
                    for (g, v) in gw[c].iter_mut().zip(row) {
                        *g += e * v;
                    }
                }
            }
            for c in 0..classes {
                model.bias[c] -= lr * gb[c] / n as f64;
                for (w, g) in model.weights[c].iter_mut().zip(&gw[c]) {
                    *w -= lr * g / n as f64;
                }
            }
        }
        model
    }

    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) * s)
            .collect()
    }

    fn probs(&self, standardized: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(standardized).map(|(a, x)| a * x).sum::<f64>())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / s).collect()
    }

    fn predict(&self, row: &[f64]) -> usize {
        crate::losses::argmax(&self.probs(&self.standardize(row)))
    }
}

fn betavae_example(
    sampler: &mut dyn LatentSampler,
    factor: usize,
    pairs: usize,
) -> Result<Vec<f64>> {
    let (a, b) = sampler.sample_fixed_pairs(factor, pairs)?;
    let d = a.cols();
    let mut feature = vec![0.0; d];
    for r in 0..pairs {
        for ((f, x), y) in feature.iter_mut().zip(a.row(r)).zip(b.row(r)) {
            *f += (x - y).abs() / pairs as f64;
        }
    }
    Ok(feature)
}

/// Held-out accuracy of a linear classifier predicting the fixed factor
/// from the mean absolute latent difference over pairs that share it.
pub fn betavae_score(
    sampler: &mut dyn LatentSampler,
    opts: &ScoreOptions,
    rng: &mut Rng,
) -> Result<f64> {
    check_options(opts, sampler)?;
    let k = sampler.num_factors();
    let mut make =
        |count: usize, sampler: &mut dyn LatentSampler| -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
            let mut x = Vec::with_capacity(count);
            let mut y = Vec::with_capacity(count);
            for _ in 0..count {
                let f = rng.random_range(0..k);
                x.push(betavae_example(sampler, f, opts.batch)?);
                y.push(f);
            }
            Ok((x, y))
        };
    let (xtr, ytr) = make(opts.train, sampler)?;
    let (xte, yte) = make(opts.test, sampler)?;
    let clf = Softmax::fit(&xtr, &ytr, k, opts.iters, opts.lr);
    let correct = xte
        .iter()
        .zip(&yte)
        .filter(|(x, &y)| clf.predict(x) == y)
        .count();
    Ok(correct as f64 / opts.test as f64)
}

/// Relative spread below which a latent dimension counts as collapsed.
const COLLAPSED_STD: f64 = 1e-8;

fn column_var(t: &Tensor, j: usize) -> f64 {
    let c = t.column(j);
    let n = c.len() as f64;
    let mean = c.iter().sum::<f64>() / n;
    c.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Held-out accuracy of a majority-vote classifier mapping the latent
/// dimension of least normalized variance to the fixed factor.
pub fn factorvae_score(
    sampler: &mut dyn LatentSampler,
    opts: &ScoreOptions,
    rng: &mut Rng,
) -> Result<f64> {
    check_options(opts, sampler)?;
    let k = sampler.num_factors();
    let reference = sampler.sample(opts.batch.max(10_000))?;
    let d = reference.cols();
    let scale: Vec<f64> = (0..d).map(|j| column_var(&reference, j).sqrt()).collect();
    let top = scale.iter().cloned().fold(0.0, f64::max);
    let active: Vec<usize> = (0..d)
        .filter(|&j| scale[j] > COLLAPSED_STD * top.max(1e-300))
        .collect();
    if active.len() < d {
        log::warn!(
            "excluding {} collapsed latent dimension(s) from the FactorVAE score",
            d - active.len()
        );
    }
    if active.is_empty() {
        return Err(Error::Degenerate(
            "every latent dimension is constant".into(),
        ));
    }

    let mut vote = |sampler: &mut dyn LatentSampler| -> Result<(usize, usize)> {
        let f = rng.random_range(0..k);
        let z = sampler.sample_fixed(f, opts.batch)?;
        let mut best = (active[0], f64::INFINITY);
        for &j in &active {
            let v = column_var(&z, j) / (scale[j] * scale[j]);
            if v < best.1 {
                best = (j, v);
            }
        }
        Ok((best.0, f))
    };

    let mut table = vec![vec![0usize; k]; d];
    for _ in 0..opts.train {
        let (dim, f) = vote(sampler)?;
        table[dim][f] += 1;
    }
    let classify: Vec<usize> = table
        .iter()
        .map(|row| {
            let as_f: Vec<f64> = row.iter().map(|&c| c as f64).collect();
            crate::losses::argmax(&as_f)
        })
        .collect();
    let mut correct = 0;
    for _ in 0..opts.test {
        let (dim, f) = vote(sampler)?;
        if classify[dim] == f {
            correct += 1;
        }
    }
    Ok(correct as f64 / opts.test as f64)
}
