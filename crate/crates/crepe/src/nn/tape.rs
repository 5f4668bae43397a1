//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Forward values come from the shared kernels; each node caches what its
//! backward rule needs (softmax probabilities, layer-norm statistics). Node
//! inputs always precede the node, so the tape order is a topological order
//! and one reverse sweep accumulates every gradient.

use crate::error::{Error, Result};
use crate::nn::kernels;
use crate::nn::tensor::{Scalar, Tensor};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<S> {
    Input,
    Matmul { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddRow { a: Var, bias: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Minimum { a: Var, b: Var },
    Maximum { a: Var, b: Var },
    Scale { a: Var, c: S },
    Relu { a: Var },
    Gelu { a: Var },
    Sigmoid { a: Var },
    Abs { a: Var },
    Softmax { a: Var },
    LayerNorm { a: Var, gain: Var, bias: Var, stats: Vec<(S, S)> },
    Embedding { table: Var, ids: Vec<u32> },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    GatherRows { a: Var, rows: Vec<usize> },
    Transpose { a: Var },
    Attention { q: Var, k: Var, v: Var, scale: S, probs: Tensor<S> },
    CrossEntropy { logits: Var, targets: Vec<u32>, ignore: Vec<bool>, probs: Tensor<S> },
    SumAll { a: Var },
}

impl<S> Op<S> {
    fn inputs(&self, out: &mut Vec<Var>) {
        match self {
            Op::Input => {}
            Op::Matmul { a, b }
            | Op::Add { a, b }
            | Op::Sub { a, b }
            | Op::Mul { a, b }
            | Op::Div { a, b }
            | Op::Minimum { a, b }
            | Op::Maximum { a, b } => out.extend([*a, *b]),
            Op::AddRow { a, bias } => out.extend([*a, *bias]),
            Op::Scale { a, .. }
            | Op::Relu { a }
            | Op::Gelu { a }
            | Op::Sigmoid { a }
            | Op::Abs { a }
            | Op::Softmax { a }
            | Op::SliceRows { a, .. }
            | Op::SliceCols { a, .. }
            | Op::GatherRows { a, .. }
            | Op::Transpose { a }
            | Op::SumAll { a } => out.push(*a),
            Op::LayerNorm { a, gain, bias, .. } => out.extend([*a, *gain, *bias]),
            Op::Embedding { table, .. } => out.push(*table),
            Op::ConcatRows { parts } | Op::ConcatCols { parts } => out.extend(parts.iter().copied()),
            Op::Attention { q, k, v, .. } => out.extend([*q, *k, *v]),
            Op::CrossEntropy { logits, .. } => out.push(*logits),
        }
    }
}

struct Node<S> {
    op: Op<S>,
    value: Tensor<S>,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>) -> Var {
        self.nodes.push(Node { op, value });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(Op::Input, t)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by the latest backward sweep; `None` when the
    /// node does not influence the root.
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads[v.0].as_ref()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Matmul { a, b }, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add { a, b }, value))
    }

    /// Adds a 1xN bias row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = kernels::add_row(self.value(a), self.value(bias))?;
        Ok(self.push(Op::AddRow { a, bias }, value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::sub(self.value(a), self.value(b))?;
        Ok(self.push(Op::Sub { a, b }, value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::mul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Mul { a, b }, value))
    }

    /// Elementwise quotient; the caller keeps the denominator away from 0.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::div(self.value(a), self.value(b))?;
        Ok(self.push(Op::Div { a, b }, value))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::minimum(self.value(a), self.value(b))?;
        Ok(self.push(Op::Minimum { a, b }, value))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::maximum(self.value(a), self.value(b))?;
        Ok(self.push(Op::Maximum { a, b }, value))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let value = kernels::scale(self.value(a), c);
        self.push(Op::Scale { a, c }, value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = kernels::relu(self.value(a));
        self.push(Op::Relu { a }, value)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = kernels::gelu(self.value(a));
        self.push(Op::Gelu { a }, value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = kernels::sigmoid(self.value(a));
        self.push(Op::Sigmoid { a }, value)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = kernels::abs(self.value(a));
        self.push(Op::Abs { a }, value)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = kernels::softmax_rows(self.value(a));
        self.push(Op::Softmax { a }, value)
    }

    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: S) -> Result<Var> {
        let (value, stats) =
            kernels::layer_norm(self.value(a), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(Op::LayerNorm { a, gain, bias, stats }, value))
    }

    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let value = kernels::embedding(self.value(table), ids)?;
        Ok(self.push(
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            value,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<S>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = kernels::concat_rows(&tensors)?;
        Ok(self.push(
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            value,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<S>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = kernels::concat_cols(&tensors)?;
        Ok(self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            value,
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let value = kernels::slice_rows(self.value(a), start, len)?;
        Ok(self.push(Op::SliceRows { a, start }, value))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let value = kernels::slice_cols(self.value(a), start, len)?;
        Ok(self.push(Op::SliceCols { a, start }, value))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let value = kernels::gather_rows(self.value(a), rows)?;
        Ok(self.push(
            Op::GatherRows {
                a,
                rows: rows.to_vec(),
            },
            value,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transposed();
        self.push(Op::Transpose { a }, value)
    }

    /// Fused scaled dot-product attention for one head.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        causal: bool,
        scale: S,
    ) -> Result<Var> {
        let (value, probs) =
            kernels::attention(self.value(q), self.value(k), self.value(v), causal, scale)?;
        Ok(self.push(Op::Attention { q, k, v, scale, probs }, value))
    }

    /// Softmax cross-entropy summed over non-ignored rows; the 1x1 output
    /// holds the sum, and the returned count supports external averaging.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[u32],
        ignore: &[bool],
    ) -> Result<(Var, usize)> {
        let (sum, count, probs) = kernels::cross_entropy(self.value(logits), targets, ignore)?;
        let var = self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore: ignore.to_vec(),
                probs,
            },
            Tensor::scalar(sum),
        );
        Ok((var, count))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(kernels::sum_all(self.value(a)));
        self.push(Op::SumAll { a }, value)
    }

    /// Backward sweep from a scalar root with seed gradient 1.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        self.backward_seeded(root, S::one())
    }

    /// Backward sweep from a scalar root, scaling every gradient by `seed`.
    pub fn backward_seeded(&mut self, root: Var, seed: S) -> Result<()> {
        if self.shape(root) != (1, 1) {
            let (r, c) = self.shape(root);
            return Err(Error::Dimension(format!(
                "backward root must be 1x1, got {r}x{c}"
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }

        // Only nodes the root depends on need gradient work.
        let mut reachable = vec![false; self.nodes.len()];
        let mut stack = vec![root];
        let mut edge = Vec::new();
        while let Some(v) = stack.pop() {
            if reachable[v.0] {
                continue;
            }
            reachable[v.0] = true;
            edge.clear();
            self.nodes[v.0].op.inputs(&mut edge);
            stack.extend(edge.iter().copied());
        }

        self.grads[root.0] = Some(Tensor::scalar(seed));
        for i in (0..self.nodes.len()).rev() {
            if !reachable[i] {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Input) {
                continue;
            }
            let Some(dc) = self.grads[i].take() else {
                continue;
            };
            self.apply_backward(i, &dc)?;
        }
        Ok(())
    }

    fn acc(grads: &mut [Option<Tensor<S>>], v: Var, delta: Tensor<S>) {
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn apply_backward(&mut self, i: usize, dc: &Tensor<S>) -> Result<()> {
        let value = &self.nodes[i].value;
        let grads = &mut self.grads;
        let nodes = &self.nodes;
        let val_of = |v: Var| &nodes[v.0].value;
        match &self.nodes[i].op {
            Op::Input => {}
            Op::Matmul { a, b } => {
                let da = kernels::matmul(dc, &val_of(*b).transposed())?;
                let db = kernels::matmul(&val_of(*a).transposed(), dc)?;
                Self::acc(grads, *a, da);
                Self::acc(grads, *b, db);
            }
            Op::Add { a, b } => {
                Self::acc(grads, *a, dc.clone());
                Self::acc(grads, *b, dc.clone());
            }
            Op::AddRow { a, bias } => {
                Self::acc(grads, *a, dc.clone());
                let mut db = Tensor::zeros(1, dc.cols());
                for r in 0..dc.rows() {
                    for (o, &v) in db.row_mut(0).iter_mut().zip(dc.row(r)) {
                        *o += v;
                    }
                }
                Self::acc(grads, *bias, db);
            }
            Op::Sub { a, b } => {
                Self::acc(grads, *a, dc.clone());
                Self::acc(grads, *b, kernels::scale(dc, -S::one()));
            }
            Op::Mul { a, b } => {
                Self::acc(grads, *a, kernels::mul(dc, val_of(*b))?);
                Self::acc(grads, *b, kernels::mul(dc, val_of(*a))?);
            }
            Op::Div { a, b } => {
                let da = kernels::div(dc, val_of(*b))?;
                let db = kernels::scale(&kernels::div(&kernels::mul(dc, value)?, val_of(*b))?, -S::one());
                Self::acc(grads, *a, da);
                Self::acc(grads, *b, db);
            }
            Op::Minimum { a, b } => {
                let (da, db) = route_pick(dc, val_of(*a), val_of(*b), |x, y| x <= y);
                Self::acc(grads, *a, da);
                Self::acc(grads, *b, db);
            }
            Op::Maximum { a, b } => {
                let (da, db) = route_pick(dc, val_of(*a), val_of(*b), |x, y| x >= y);
                Self::acc(grads, *a, da);
                Self::acc(grads, *b, db);
            }
            Op::Scale { a, c } => {
                Self::acc(grads, *a, kernels::scale(dc, *c));
            }
            Op::Relu { a } => {
                let x = val_of(*a);
                let mut da = dc.clone();
                for (g, &xv) in da.data_mut().iter_mut().zip(x.data()) {
                    if xv <= S::zero() {
                        *g = S::zero();
                    }
                }
                Self::acc(grads, *a, da);
            }
            Op::Gelu { a } => {
                let x = val_of(*a);
                let mut da = dc.clone();
                for (g, &xv) in da.data_mut().iter_mut().zip(x.data()) {
                    *g = *g * kernels::gelu_grad(xv);
                }
                Self::acc(grads, *a, da);
            }
            Op::Sigmoid { a } => {
                let mut da = dc.clone();
                for (g, &y) in da.data_mut().iter_mut().zip(value.data()) {
                    *g = *g * y * (S::one() - y);
                }
                Self::acc(grads, *a, da);
            }
            Op::Abs { a } => {
                let x = val_of(*a);
                let mut da = dc.clone();
                for (g, &xv) in da.data_mut().iter_mut().zip(x.data()) {
                    *g = if xv > S::zero() {
                        *g
                    } else if xv < S::zero() {
                        -*g
                    } else {
                        S::zero()
                    };
                }
                Self::acc(grads, *a, da);
            }
            Op::Softmax { a } => {
                Self::acc(grads, *a, softmax_backward(value, dc));
            }
            Op::LayerNorm { a, gain, bias, stats } => {
                let x = val_of(*a);
                let g = val_of(*gain);
                let n = x.cols();
                let inv_n = S::one() / S::from_usize(n);
                let mut da = Tensor::zeros(x.rows(), n);
                let mut dgain = Tensor::zeros(1, n);
                let mut dbias = Tensor::zeros(1, n);
                for r in 0..x.rows() {
                    let (mean, inv_std) = stats[r];
                    let xrow = x.row(r);
                    let dyrow = dc.row(r);
                    let mut m1 = S::zero();
                    let mut m2 = S::zero();
                    for i2 in 0..n {
                        let xhat = (xrow[i2] - mean) * inv_std;
                        let dxhat = dyrow[i2] * g.get(0, i2);
                        m1 += dxhat;
                        m2 += dxhat * xhat;
                        dgain.row_mut(0)[i2] += dyrow[i2] * xhat;
                        dbias.row_mut(0)[i2] += dyrow[i2];
                    }
                    m1 *= inv_n;
                    m2 *= inv_n;
                    let darow = da.row_mut(r);
                    for i2 in 0..n {
                        let xhat = (xrow[i2] - mean) * inv_std;
                        let dxhat = dyrow[i2] * g.get(0, i2);
                        darow[i2] = inv_std * (dxhat - m1 - xhat * m2);
                    }
                }
                Self::acc(grads, *a, da);
                Self::acc(grads, *gain, dgain);
                Self::acc(grads, *bias, dbias);
            }
            Op::Embedding { table, ids } => {
                let shape = val_of(*table).shape();
                let mut dt = Tensor::zeros(shape.0, shape.1);
                for (r, &id) in ids.iter().enumerate() {
                    for (o, &v) in dt.row_mut(id as usize).iter_mut().zip(dc.row(r)) {
                        *o += v;
                    }
                }
                Self::acc(grads, *table, dt);
            }
            Op::ConcatRows { parts } => {
                let mut at = 0;
                for &p in parts {
                    let rows = val_of(p).rows();
                    let slice = kernels::slice_rows(dc, at, rows)?;
                    Self::acc(grads, p, slice);
                    at += rows;
                }
            }
            Op::ConcatCols { parts } => {
                let mut at = 0;
                for &p in parts {
                    let cols = val_of(p).cols();
                    let slice = kernels::slice_cols(dc, at, cols)?;
                    Self::acc(grads, p, slice);
                    at += cols;
                }
            }
            Op::SliceRows { a, start } => {
                let shape = val_of(*a).shape();
                let mut da = Tensor::zeros(shape.0, shape.1);
                for r in 0..dc.rows() {
                    da.row_mut(start + r).copy_from_slice(dc.row(r));
                }
                Self::acc(grads, *a, da);
            }
            Op::SliceCols { a, start } => {
                let shape = val_of(*a).shape();
                let mut da = Tensor::zeros(shape.0, shape.1);
                for r in 0..dc.rows() {
                    da.row_mut(r)[*start..start + dc.cols()].copy_from_slice(dc.row(r));
                }
                Self::acc(grads, *a, da);
            }
            Op::GatherRows { a, rows } => {
                let shape = val_of(*a).shape();
                let mut da = Tensor::zeros(shape.0, shape.1);
                for (r, &src) in rows.iter().enumerate() {
                    for (o, &v) in da.row_mut(src).iter_mut().zip(dc.row(r)) {
                        *o += v;
                    }
                }
                Self::acc(grads, *a, da);
            }
            Op::Transpose { a } => {
                Self::acc(grads, *a, dc.transposed());
            }
            Op::Attention { q, k, v, scale, probs } => {
                let dv = kernels::matmul(&probs.transposed(), dc)?;
                let dp = kernels::matmul(dc, &val_of(*v).transposed())?;
                let ds = softmax_backward(probs, &dp);
                let dq = kernels::scale(&kernels::matmul(&ds, val_of(*k))?, *scale);
                let dk = kernels::scale(&kernels::matmul(&ds.transposed(), val_of(*q))?, *scale);
                Self::acc(grads, *q, dq);
                Self::acc(grads, *k, dk);
                Self::acc(grads, *v, dv);
            }
            Op::CrossEntropy { logits, targets, ignore, probs } => {
                let seed = dc.item();
                let shape = val_of(*logits).shape();
                let mut dl = Tensor::zeros(shape.0, shape.1);
                for r in 0..shape.0 {
                    if ignore[r] {
                        continue;
                    }
                    let drow = dl.row_mut(r);
                    for (o, &p) in drow.iter_mut().zip(probs.row(r)) {
                        *o = seed * p;
                    }
                    drow[targets[r] as usize] -= seed;
                }
                Self::acc(grads, *logits, dl);
            }
            Op::SumAll { a } => {
                let shape = val_of(*a).shape();
                Self::acc(grads, *a, Tensor::filled(shape.0, shape.1, dc.item()));
            }
        }
        Ok(())
    }
}

/// dX for y = softmax(x) rows: P o (dY - rowdot(P, dY)).
fn softmax_backward<S: Scalar>(probs: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    let mut dx = Tensor::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let prow = probs.row(r);
        let dyrow = dy.row(r);
        let mut dot = S::zero();
        for (p, d) in prow.iter().zip(dyrow) {
            dot += *p * *d;
        }
        for (i, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = prow[i] * (dyrow[i] - dot);
        }
    }
    dx
}

/// Routes dC to whichever input won the elementwise pick.
fn route_pick<S: Scalar>(
    dc: &Tensor<S>,
    a: &Tensor<S>,
    b: &Tensor<S>,
    a_wins: impl Fn(S, S) -> bool,
) -> (Tensor<S>, Tensor<S>) {
    let mut da = Tensor::zeros(a.rows(), a.cols());
    let mut db = Tensor::zeros(b.rows(), b.cols());
    for i in 0..dc.len() {
        let g = dc.data()[i];
        if a_wins(a.data()[i], b.data()[i]) {
            da.data_mut()[i] = g;
        } else {
            db.data_mut()[i] = g;
        }
    }
    (da, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    /// Central-difference check of every input coordinate of a scalar graph.
    fn fd_check(name: &str, inputs: &[Tensor<f64>], build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let run = |tensors: &[Tensor<f64>]| -> (Tape<f64>, Vec<Var>, Var) {
            let mut tape = Tape::new();
            let vars: Vec<Var> = tensors.iter().map(|t| tape.input(t.clone())).collect();
            let root = build(&mut tape, &vars);
            (tape, vars, root)
        };
        let (mut tape, vars, root) = run(inputs);
        assert_eq!(tape.shape(root), (1, 1), "{name} root not scalar");
        tape.backward(root).unwrap();
        let h = 1e-5;
        for (ti, t) in inputs.iter().enumerate() {
            let analytic = tape
                .grad(vars[ti])
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()));
            for idx in 0..t.len() {
                let probe = |delta: f64| {
                    let mut mod_inputs = inputs.to_vec();
                    mod_inputs[ti].data_mut()[idx] += delta;
                    let (tape, _, root) = run(&mod_inputs);
                    tape.value(root).item()
                };
                let fd = (probe(h) - probe(-h)) / (2.0 * h);
                let an = analytic.data()[idx];
                let err = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
                assert!(
                    err < 1e-6,
                    "{name} input {ti} coord {idx}: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn matmul_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, 3, 4);
        let b = rand_tensor(&mut rng, 4, 2);
        fd_check("matmul", &[a, b], &|t, v| {
            let c = t.matmul(v[0], v[1]).unwrap();
            t.sum_all(c)
        });
    }

    #[test]
    fn elementwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_tensor(&mut rng, 3, 4);
        let b = rand_tensor(&mut rng, 3, 4).map(|v| v + 2.5); // positive denominator
        fd_check("add", &[a.clone(), b.clone()], &|t, v| {
            let c = t.add(v[0], v[1]).unwrap();
            t.sum_all(c)
        });
        fd_check("sub", &[a.clone(), b.clone()], &|t, v| {
            let c = t.sub(v[0], v[1]).unwrap();
            t.sum_all(c)
        });
        fd_check("mul", &[a.clone(), b.clone()], &|t, v| {
            let c = t.mul(v[0], v[1]).unwrap();
            t.sum_all(c)
        });
        fd_check("div", &[a, b], &|t, v| {
            let c = t.div(v[0], v[1]).unwrap();
            t.sum_all(c)
        });
    }

    #[test]
    fn min_max_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_tensor(&mut rng, 2, 5);
        let b = rand_tensor(&mut rng, 2, 5);
        fd_check("minimum", &[a.clone(), b.clone()], &|t, v| {
            let c = t.minimum(v[0], v[1]).unwrap();
            t.sum_all(c)
        });
        fd_check("maximum", &[a, b], &|t, v| {
            let c = t.maximum(v[0], v[1]).unwrap();
            t.sum_all(c)
        });
    }

    #[test]
    fn unary_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // Keep values away from the relu/abs kinks at zero.
        let a = rand_tensor(&mut rng, 3, 4).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
        fd_check("relu", &[a.clone()], &|t, v| {
            let c = t.relu(v[0]);
            t.sum_all(c)
        });
        fd_check("gelu", &[a.clone()], &|t, v| {
            let c = t.gelu(v[0]);
            t.sum_all(c)
        });
        fd_check("sigmoid", &[a.clone()], &|t, v| {
            let c = t.sigmoid(v[0]);
            let sq = t.mul(c, c).unwrap();
            t.sum_all(sq)
        });
        fd_check("abs", &[a.clone()], &|t, v| {
            let c = t.abs(v[0]);
            t.sum_all(c)
        });
        fd_check("scale", &[a], &|t, v| {
            let c = t.scale(v[0], -1.75);
            t.sum_all(c)
        });
    }

    #[test]
    fn softmax_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_tensor(&mut rng, 3, 5);
        let w = rand_tensor(&mut rng, 3, 5);
        fd_check("softmax", &[a, w.clone()], &|t, v| {
            let s = t.softmax_rows(v[0]);
            let weighted = t.mul(s, v[1]).unwrap();
            t.sum_all(weighted)
        });
    }

    #[test]
    fn layer_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = rand_tensor(&mut rng, 3, 6);
        let gain = rand_tensor(&mut rng, 1, 6).map(|v| v + 1.5);
        let bias = rand_tensor(&mut rng, 1, 6);
        let w = rand_tensor(&mut rng, 3, 6);
        fd_check("layer_norm", &[a, gain, bias, w.clone()], &|t, v| {
            let n = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
            let weighted = t.mul(n, v[3]).unwrap();
            t.sum_all(weighted)
        });
    }

    #[test]
    fn embedding_and_gather_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let table = rand_tensor(&mut rng, 5, 3);
        fd_check("embedding", &[table.clone()], &|t, v| {
            let e = t.embedding(v[0], &[4, 0, 4, 2]).unwrap();
            t.sum_all(e)
        });
        fd_check("gather_rows", &[table], &|t, v| {
            let g = t.gather_rows(v[0], &[1, 1, 3]).unwrap();
            t.sum_all(g)
        });
    }

    #[test]
    fn reshape_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = rand_tensor(&mut rng, 3, 4);
        let b = rand_tensor(&mut rng, 2, 4);
        let w = rand_tensor(&mut rng, 5, 4);
        fd_check("concat_rows", &[a.clone(), b.clone(), w.clone()], &|t, v| {
            let c = t.concat_rows(&[v[0], v[1]]).unwrap();
            let m = t.mul(c, v[2]).unwrap();
            t.sum_all(m)
        });
        let c1 = rand_tensor(&mut rng, 3, 2);
        let wc = rand_tensor(&mut rng, 3, 6);
        fd_check("concat_cols", &[a.clone(), c1, wc], &|t, v| {
            let c = t.concat_cols(&[v[0], v[1]]).unwrap();
            let m = t.mul(c, v[2]).unwrap();
            t.sum_all(m)
        });
        let ws = rand_tensor(&mut rng, 1, 4);
        fd_check("slice_rows", &[a.clone(), ws], &|t, v| {
            let s = t.slice_rows(v[0], 1, 1).unwrap();
            let m = t.mul(s, v[1]).unwrap();
            t.sum_all(m)
        });
        let wc2 = rand_tensor(&mut rng, 3, 2);
        fd_check("slice_cols", &[a.clone(), wc2], &|t, v| {
            let s = t.slice_cols(v[0], 1, 2).unwrap();
            let m = t.mul(s, v[1]).unwrap();
            t.sum_all(m)
        });
        let wt = rand_tensor(&mut rng, 4, 3);
        fd_check("transpose", &[a, wt], &|t, v| {
            let tr = t.transpose(v[0]);
            let m = t.mul(tr, v[1]).unwrap();
            t.sum_all(m)
        });
    }

    #[test]
    fn attention_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = rand_tensor(&mut rng, 4, 3);
        let k = rand_tensor(&mut rng, 4, 3);
        let v = rand_tensor(&mut rng, 4, 3);
        let w = rand_tensor(&mut rng, 4, 3);
        let scale = 1.0 / (3.0f64).sqrt();
        fd_check("attention_causal", &[q.clone(), k.clone(), v.clone(), w.clone()], &|t, vars| {
            let o = t.attention(vars[0], vars[1], vars[2], true, scale).unwrap();
            let m = t.mul(o, vars[3]).unwrap();
            t.sum_all(m)
        });
        fd_check("attention_full", &[q, k, v, w], &|t, vars| {
            let o = t.attention(vars[0], vars[1], vars[2], false, scale).unwrap();
            let m = t.mul(o, vars[3]).unwrap();
            t.sum_all(m)
        });
    }

    #[test]
    fn cross_entropy_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let logits = rand_tensor(&mut rng, 4, 5);
        let targets = [1u32, 4, 0, 2];
        let ignore = [false, true, false, false];
        fd_check("cross_entropy", &[logits], &|t, v| {
            let (loss, count) = t.cross_entropy(v[0], &targets, &ignore).unwrap();
            assert_eq!(count, 3);
            loss
        });
    }

    #[test]
    fn ignored_rows_get_exact_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits = rand_tensor(&mut rng, 3, 6);
        let mut tape = Tape::new();
        let l = tape.input(logits);
        let (loss, _) = tape
            .cross_entropy(l, &[0, 3, 5], &[false, true, false])
            .unwrap();
        tape.backward(loss).unwrap();
        let grad = tape.grad(l).unwrap();
        assert!(grad.row(1).iter().all(|&g| g == 0.0));
        assert!(grad.row(0).iter().any(|&g| g != 0.0));
    }

    #[test]
    fn repeated_operand_accumulates_both_paths() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::scalar(3.0));
        let sq = tape.mul(x, x).unwrap();
        tape.backward(sq).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn unreachable_nodes_have_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::scalar(1.0));
        let y = tape.input(Tensor::scalar(2.0));
        let _dead = tape.scale(y, 5.0);
        let live = tape.scale(x, 2.0);
        tape.backward(live).unwrap();
        assert!(tape.grad(x).is_some());
        assert!(tape.grad(y).is_none());
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(Error::Dimension(_))));
    }

    #[test]
    fn tape_values_match_kernels_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a32: Tensor<f32> = rand_tensor(&mut rng, 6, 4).cast();
        let b32: Tensor<f32> = rand_tensor(&mut rng, 4, 3).cast();
        let mut tape = Tape::<f32>::new();
        let av = tape.input(a32.clone());
        let bv = tape.input(b32.clone());
        let mm = tape.matmul(av, bv).unwrap();
        let act = tape.gelu(mm);
        let plain = kernels::gelu(&kernels::matmul(&a32, &b32).unwrap());
        assert_eq!(tape.value(act), &plain);
    }
}
