//! Forward kernels. The training tape and the plain decode path both call
//! these exact functions, so their numerics agree bit for bit. Every loop
//! runs in a fixed order; nothing here depends on thread count.

use crate::error::{Error, Result};
use crate::nn::tensor::{Scalar, Tensor};

pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.cols() != b.rows() {
        return Err(Error::Dimension(format!(
            "matmul {}x{} @ {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let (m, k) = a.shape();
    let n = b.cols();
    let mut out = Tensor::zeros(m, n);
    let bd = b.data();
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out.data_mut()[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate().take(k) {
            let brow = &bd[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

fn same_shape<S: Scalar>(what: &str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{what} {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

fn zip_elementwise<S: Scalar>(
    what: &str,
    a: &Tensor<S>,
    b: &Tensor<S>,
    f: impl Fn(S, S) -> S,
) -> Result<Tensor<S>> {
    same_shape(what, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data)
}

pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    zip_elementwise("add", a, b, |x, y| x + y)
}

pub fn sub<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    zip_elementwise("sub", a, b, |x, y| x - y)
}

pub fn mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    zip_elementwise("mul", a, b, |x, y| x * y)
}

pub fn div<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    zip_elementwise("div", a, b, |x, y| x / y)
}

pub fn minimum<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    zip_elementwise("min", a, b, |x, y| if y < x { y } else { x })
}

pub fn maximum<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    zip_elementwise("max", a, b, |x, y| if y > x { y } else { x })
}

/// Adds a 1xN bias row to every row of `a`.
pub fn add_row<S: Scalar>(a: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    if bias.rows() != 1 || bias.cols() != a.cols() {
        return Err(Error::Dimension(format!(
            "add_row {}x{} + {}x{}",
            a.rows(),
            a.cols(),
            bias.rows(),
            bias.cols()
        )));
    }
    let mut out = a.clone();
    for r in 0..out.rows() {
        for (o, &b) in out.row_mut(r).iter_mut().zip(bias.row(0)) {
            *o += b;
        }
    }
    Ok(out)
}

pub fn scale<S: Scalar>(a: &Tensor<S>, c: S) -> Tensor<S> {
    a.map(|x| x * c)
}

pub fn relu<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    a.map(|x| if x > S::zero() { x } else { S::zero() })
}

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

pub fn gelu_value<S: Scalar>(x: S) -> S {
    let half = S::from_f64(0.5);
    let c0 = S::from_f64(GELU_C0);
    let c1 = S::from_f64(GELU_C1);
    let u = c0 * (x + c1 * x * x * x);
    half * x * (S::one() + u.tanh())
}

pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let half = S::from_f64(0.5);
    let c0 = S::from_f64(GELU_C0);
    let c1 = S::from_f64(GELU_C1);
    let three = S::from_f64(3.0);
    let u = c0 * (x + c1 * x * x * x);
    let t = u.tanh();
    let du = c0 * (S::one() + three * c1 * x * x);
    half * (S::one() + t) + half * x * (S::one() - t * t) * du
}

pub fn gelu<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    a.map(gelu_value)
}

pub fn sigmoid_value<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

pub fn sigmoid<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    a.map(sigmoid_value)
}

pub fn abs<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    a.map(|x| x.abs())
}

/// Numerically stable softmax over the first `len` entries of a slice;
/// entries past `len` are set to exact zero.
fn softmax_prefix<S: Scalar>(row: &mut [S], len: usize) {
    debug_assert!(len > 0 && len <= row.len());
    let mut max = row[0];
    for &v in &row[1..len] {
        if v > max {
            max = v;
        }
    }
    let mut sum = S::zero();
    for v in &mut row[..len] {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in &mut row[..len] {
        *v = *v / sum;
    }
    for v in &mut row[len..] {
        *v = S::zero();
    }
}

pub fn softmax_rows<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let mut out = a.clone();
    let cols = out.cols();
    for r in 0..out.rows() {
        softmax_prefix(out.row_mut(r), cols);
    }
    out
}

/// Per-row layer norm with learned gain and bias; returns the output and
/// per-row (mean, inverse std) for the backward pass.
pub fn layer_norm<S: Scalar>(
    a: &Tensor<S>,
    gain: &Tensor<S>,
    bias: &Tensor<S>,
    eps: S,
) -> Result<(Tensor<S>, Vec<(S, S)>)> {
    let n = a.cols();
    for (name, t) in [("gain", gain), ("bias", bias)] {
        if t.rows() != 1 || t.cols() != n {
            return Err(Error::Dimension(format!(
                "layer_norm {name} {}x{} for input {}x{}",
                t.rows(),
                t.cols(),
                a.rows(),
                a.cols()
            )));
        }
    }
    let inv_n = S::one() / S::from_usize(n);
    let mut out = Tensor::zeros(a.rows(), n);
    let mut stats = Vec::with_capacity(a.rows());
    for r in 0..a.rows() {
        let row = a.row(r);
        let mut mean = S::zero();
        for &v in row {
            mean += v;
        }
        mean *= inv_n;
        let mut var = S::zero();
        for &v in row {
            let d = v - mean;
            var += d * d;
        }
        var *= inv_n;
        let inv_std = S::one() / (var + eps).sqrt();
        let orow = out.row_mut(r);
        for (i, &v) in row.iter().enumerate() {
            orow[i] = (v - mean) * inv_std * gain.get(0, i) + bias.get(0, i);
        }
        stats.push((mean, inv_std));
    }
    Ok((out, stats))
}

pub fn embedding<S: Scalar>(table: &Tensor<S>, ids: &[u32]) -> Result<Tensor<S>> {
    let mut out = Tensor::zeros(ids.len(), table.cols());
    for (r, &id) in ids.iter().enumerate() {
        if id as usize >= table.rows() {
            return Err(Error::Dimension(format!(
                "embedding id {id} out of range for table {}x{}",
                table.rows(),
                table.cols()
            )));
        }
        out.row_mut(r).copy_from_slice(table.row(id as usize));
    }
    Ok(out)
}

pub fn concat_rows<S: Scalar>(parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let cols = parts
        .first()
        .ok_or_else(|| Error::Dimension("concat of zero tensors".to_string()))?
        .cols();
    let rows = parts.iter().map(|p| p.rows()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for p in parts {
        if p.cols() != cols {
            return Err(Error::Dimension(format!(
                "concat_rows column mismatch {} vs {cols}",
                p.cols()
            )));
        }
        data.extend_from_slice(p.data());
    }
    Tensor::new(rows, cols, data)
}

pub fn concat_cols<S: Scalar>(parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let rows = parts
        .first()
        .ok_or_else(|| Error::Dimension("concat of zero tensors".to_string()))?
        .rows();
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Tensor::zeros(rows, cols);
    for r in 0..rows {
        let orow = out.row_mut(r);
        let mut at = 0;
        for p in parts {
            if p.rows() != rows {
                return Err(Error::Dimension(format!(
                    "concat_cols row mismatch {} vs {rows}",
                    p.rows()
                )));
            }
            orow[at..at + p.cols()].copy_from_slice(p.row(r));
            at += p.cols();
        }
    }
    Ok(out)
}

pub fn slice_rows<S: Scalar>(a: &Tensor<S>, start: usize, len: usize) -> Result<Tensor<S>> {
    if start + len > a.rows() {
        return Err(Error::Dimension(format!(
            "slice_rows {start}..{} of {}x{}",
            start + len,
            a.rows(),
            a.cols()
        )));
    }
    let data = a.data()[start * a.cols()..(start + len) * a.cols()].to_vec();
    Tensor::new(len, a.cols(), data)
}

pub fn slice_cols<S: Scalar>(a: &Tensor<S>, start: usize, len: usize) -> Result<Tensor<S>> {
    if start + len > a.cols() {
        return Err(Error::Dimension(format!(
            "slice_cols {start}..{} of {}x{}",
            start + len,
            a.rows(),
            a.cols()
        )));
    }
    let mut out = Tensor::zeros(a.rows(), len);
    for r in 0..a.rows() {
        out.row_mut(r).copy_from_slice(&a.row(r)[start..start + len]);
    }
    Ok(out)
}

/// Picks the rows of `a` listed in `rows` (gather).
pub fn gather_rows<S: Scalar>(a: &Tensor<S>, rows: &[usize]) -> Result<Tensor<S>> {
    let mut out = Tensor::zeros(rows.len(), a.cols());
    for (r, &src) in rows.iter().enumerate() {
        if src >= a.rows() {
            return Err(Error::Dimension(format!(
                "gather row {src} of {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        out.row_mut(r).copy_from_slice(a.row(src));
    }
    Ok(out)
}

/// Scaled dot-product attention for one head. With `causal`, query row i
/// attends to key rows j <= i + (Tk - Tq), so a suffix of queries against a
/// full key set behaves identically to the full square mask. Returns the
/// context and the post-softmax probabilities (masked entries exactly zero).
pub fn attention<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    causal: bool,
    scale_by: S,
) -> Result<(Tensor<S>, Tensor<S>)> {
    if q.cols() != k.cols() || k.rows() != v.rows() {
        return Err(Error::Dimension(format!(
            "attention q {}x{} k {}x{} v {}x{}",
            q.rows(),
            q.cols(),
            k.rows(),
            k.cols(),
            v.rows(),
            v.cols()
        )));
    }
    if causal && q.rows() > k.rows() {
        return Err(Error::Dimension(format!(
            "causal attention with {} queries over {} keys",
            q.rows(),
            k.rows()
        )));
    }
    let offset = k.rows() - if causal { q.rows() } else { k.rows() };
    let mut probs = matmul(q, &k.transposed())?;
    let tk = k.rows();
    for r in 0..probs.rows() {
        let allowed = if causal { (r + offset + 1).min(tk) } else { tk };
        let row = probs.row_mut(r);
        for val in &mut row[..allowed] {
            *val = *val * scale_by;
        }
        softmax_prefix(row, allowed);
    }
    let out = matmul(&probs, v)?;
    Ok((out, probs))
}

/// Softmax cross-entropy summed over rows where `ignore` is false. Returns
/// (loss sum, counted rows, softmax probabilities for the backward pass).
pub fn cross_entropy<S: Scalar>(
    logits: &Tensor<S>,
    targets: &[u32],
    ignore: &[bool],
) -> Result<(S, usize, Tensor<S>)> {
    if targets.len() != logits.rows() || ignore.len() != logits.rows() {
        return Err(Error::Dimension(format!(
            "cross_entropy over {} logit rows with {} targets, {} mask entries",
            logits.rows(),
            targets.len(),
            ignore.len()
        )));
    }
    let mut probs = logits.clone();
    let cols = probs.cols();
    let mut sum = S::zero();
    let mut count = 0usize;
    for r in 0..probs.rows() {
        let target = targets[r] as usize;
        if target >= cols {
            return Err(Error::Dimension(format!(
                "cross_entropy target {target} out of {cols} classes"
            )));
        }
        let row = probs.row_mut(r);
        let mut max = row[0];
        for &v in &row[1..] {
            if v > max {
                max = v;
            }
        }
        let mut denom = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            denom += *v;
        }
        for v in row.iter_mut() {
            *v = *v / denom;
        }
        if !ignore[r] {
            sum += -(row[target].ln());
            count += 1;
        }
    }
    Ok((sum, count, probs))
}

pub fn sum_all<S: Scalar>(a: &Tensor<S>) -> S {
    let mut sum = S::zero();
    for &v in a.data() {
        sum += v;
    }
    sum
}
