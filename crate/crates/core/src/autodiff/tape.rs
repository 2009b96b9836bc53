//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! Every forward op evaluates eagerly, checks its output for non-finite
//! values, and appends a node to the [`Tape`]. Nodes are stored in creation
//! order, which is a topological order, so [`Tape::backward`] is a single
//! reverse sweep.

use crate::error::{Error, Result};
use crate::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The op kinds understood by [`Tape::apply`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Relu,
    LeakyRelu,
    Sum,
    Mean,
    L1Norm,
    SqL2Norm,
    SoftmaxRows,
    Scale(f64),
    MaxScalar(f64),
    AddScalar(f64),
    Sqrt,
    SumRows,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sum(Var),
    Mean(Var),
    L1Norm(Var),
    SqL2Norm(Var),
    SoftmaxRows(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MaxScalar(Var, f64),
    Sqrt(Var),
    SumRows(Var),
    ConcatCols(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    trainable: bool,
}

/// Leak coefficient used by [`Tape::leaky_relu`].
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`; `None` if `v` is not a trainable leaf and
    /// received no gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn as_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::dim(op, format!("expected a matrix, got {s:?}"))),
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            trainable: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant leaf; it receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            trainable: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value,
            op,
            trainable: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Generic dispatch over the unary/binary op kinds.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::Contract(format!(
                "{kind:?} takes {arity} inputs, got {}",
                inputs.len()
            )));
        }
        let a = inputs[0];
        match kind {
            OpKind::MatMul => self.matmul(a, inputs[1]),
            OpKind::Add => self.add(a, inputs[1]),
            OpKind::Sub => self.sub(a, inputs[1]),
            OpKind::Mul => self.mul(a, inputs[1]),
            OpKind::Relu => self.relu(a),
            OpKind::LeakyRelu => self.leaky_relu(a),
            OpKind::Sum => self.sum(a),
            OpKind::Mean => self.mean(a),
            OpKind::L1Norm => self.l1_norm(a),
            OpKind::SqL2Norm => self.sq_l2_norm(a),
            OpKind::SoftmaxRows => self.softmax_rows(a),
            OpKind::Scale(c) => self.scale(a, c),
            OpKind::MaxScalar(c) => self.max_scalar(a, c),
            OpKind::AddScalar(c) => self.add_scalar(a, c),
            OpKind::Sqrt => self.sqrt(a),
            OpKind::SumRows => self.sum_rows(a),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, m) = as_matrix("matmul", av)?;
        let (m2, p) = as_matrix("matmul", bv)?;
        if m != m2 {
            return Err(Error::dim("matmul", format!("{n}x{m} by {m2}x{p}")));
        }
        let out = Tensor::matrix(n, p, matmul_raw(av.data(), bv.data(), n, m, p))?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    /// Elementwise sum. A `[1, m]` or `[m]` right operand is broadcast over
    /// the rows of an `[n, m]` left operand (bias add).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let data = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| x + y)
                .collect();
            let out = Tensor::new(av.shape().to_vec(), data)?;
            return self.push("add", out, Op::Add(a, b));
        }
        let (n, m) = as_matrix("add", av)?;
        if bv.len() != m || bv.rows() != 1 {
            return Err(Error::dim(
                "add",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(m) {
            for (x, y) in row.iter_mut().zip(bv.data()) {
                *x += y;
            }
        }
        let out = Tensor::matrix(n, m, data)?;
        self.push("add", out, Op::AddRow(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("sub", av, bv)?;
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push("sub", out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("elemwise_mul", av, bv)?;
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push("elemwise_mul", out, Op::Mul(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push("relu", out, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var) -> Result<Var> {
        let out = self
            .value(a)
            .map(|x| if x > 0.0 { x } else { LEAKY_SLOPE * x });
        self.push("leaky_relu", out, Op::LeakyRelu(a, LEAKY_SLOPE))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(a))
    }

    pub fn l1_norm(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().map(|x| x.abs()).sum();
        self.push("l1_norm", Tensor::scalar(s), Op::L1Norm(a))
    }

    pub fn sq_l2_norm(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().map(|x| x * x).sum();
        self.push("sq_l2_norm", Tensor::scalar(s), Op::SqL2Norm(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let (n, m) = as_matrix("softmax_rows", v)?;
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(m) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let out = Tensor::matrix(n, m, data)?;
        self.push("softmax_rows", out, Op::SoftmaxRows(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| c * x);
        self.push("scale", out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + c);
        self.push("add_scalar", out, Op::AddScalar(a))
    }

    /// Elementwise `max(x, c)`.
    pub fn max_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(c));
        self.push("max_scalar", out, Op::MaxScalar(a, c))
    }

    /// Elementwise square root. The derivative at exactly zero is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.data().iter().any(|&x| x < 0.0) {
            return Err(Error::NonFinite { op: "sqrt" });
        }
        let out = v.map(f64::sqrt);
        self.push("sqrt", out, Op::Sqrt(a))
    }

    /// Row sums of an `n×m` matrix, as an `n×1` column.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let (n, m) = as_matrix("sum_rows", v)?;
        let data = v.data().chunks(m).map(|r| r.iter().sum()).collect();
        let out = Tensor::matrix(n, 1, data)?;
        self.push("sum_rows", out, Op::SumRows(a))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_cols", "no inputs"))?;
        let n = as_matrix("concat_cols", self.value(*first))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = as_matrix("concat_cols", self.value(p))?;
            if r != n {
                return Err(Error::dim("concat_cols", "row counts differ"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::matrix(n, total, data)?;
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()))
    }

    /// Smallest distance of any input entry from the kink of a non-smooth
    /// op (ReLU, leaky ReLU, L1 norm, max with a constant, square root at 0).
    /// Infinite if the tape has no such op.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        let mut scan = |v: &Var, at: f64| {
            for &x in self.value(*v).data() {
                margin = margin.min((x - at).abs());
            }
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) | Op::LeakyRelu(a, _) | Op::L1Norm(a) | Op::Sqrt(a) => scan(a, 0.0),
                Op::MaxScalar(a, c) => scan(a, *c),
                _ => {}
            }
        }
        margin
    }

    /// Reverse sweep from a scalar `loss`. Every trainable leaf gets a
    /// gradient, zero if it did not contribute.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, m) = (av.shape()[0], av.shape()[1]);
                    let p = bv.shape()[1];
                    accumulate(&mut grads, *a, matmul_nt(&g, bv.data(), n, p, m));
                    accumulate(&mut grads, *b, matmul_tn(av.data(), &g, n, m, p));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let m = self.value(*b).len();
                    let mut gb = vec![0.0; m];
                    for row in g.chunks(m) {
                        for (s, v) in gb.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Sub(a, b) => {
                    let neg = g.iter().map(|v| -v).collect();
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let ga = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                    let gb = g.iter().zip(av).map(|(g, a)| g * a).collect();
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let ga = g
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a).data();
                    let ga = g
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { slope * g })
                        .collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    accumulate(&mut grads, *a, vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    accumulate(&mut grads, *a, vec![g[0] / n as f64; n]);
                }
                Op::L1Norm(a) => {
                    let ga = self
                        .value(*a)
                        .data()
                        .iter()
                        .map(|&x| g[0] * sign(x))
                        .collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::SqL2Norm(a) => {
                    let ga = self
                        .value(*a)
                        .data()
                        .iter()
                        .map(|&x| 2.0 * g[0] * x)
                        .collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let m = y.shape()[1];
                    let mut ga = vec![0.0; y.len()];
                    for ((gr, yr), out) in g.chunks(m).zip(y.data().chunks(m)).zip(ga.chunks_mut(m))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for ((o, g), y) in out.iter_mut().zip(gr).zip(yr) {
                            *o = y * (g - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, g.iter().map(|v| c * v).collect());
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::MaxScalar(a, c) => {
                    let x = self.value(*a).data();
                    let ga = g
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > *c { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sqrt(a) => {
                    let ga = g
                        .iter()
                        .zip(y.data())
                        .map(|(g, &y)| if y > 0.0 { g / (2.0 * y) } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumRows(a) => {
                    let m = self.value(*a).shape()[1];
                    let ga = g.iter().flat_map(|&v| std::iter::repeat_n(v, m)).collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let total = y.shape()[1];
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).shape()[1];
                        let gp = g
                            .chunks(total)
                            .flat_map(|row| row[offset..offset + w].iter().copied())
                            .collect();
                        accumulate(&mut grads, p, gp);
                        offset += w;
                    }
                }
            }
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                if !node.trainable {
                    return None;
                }
                let data = g.unwrap_or_else(|| vec![0.0; node.value.len()]);
                Some(Tensor::new(node.value.shape().to_vec(), data).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
