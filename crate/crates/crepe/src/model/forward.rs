//! Tape-side forward pass used by training. Mirrors `plain` op for op;
//! both run on the same kernels, so their outputs are bitwise equal.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{patch_rows, CrepeConfig, ModelParams};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::{Scalar, Tensor};

/// Parameters bound onto a tape as leaf nodes, addressed by name.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn bind<S: Scalar>(tape: &mut Tape<S>, params: &ModelParams<S>) -> Self {
        let vars = params
            .tensors
            .iter()
            .map(|(name, tensor)| (name.clone(), tape.input(tensor.clone())))
            .collect();
        BoundParams { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Invariant(format!("unbound parameter {name}")))
    }

    /// Collects gradients present on the tape after a backward sweep.
    pub fn grads<S: Scalar>(&self, tape: &Tape<S>) -> BTreeMap<String, Tensor<S>> {
        self.vars
            .iter()
            .filter_map(|(name, &var)| tape.grad(var).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

fn lnorm<S: Scalar>(
    tape: &mut Tape<S>,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    cfg: &CrepeConfig,
) -> Result<Var> {
    let g = p.var(&format!("{prefix}.g"))?;
    let b = p.var(&format!("{prefix}.b"))?;
    tape.layer_norm(x, g, b, S::from_f64(cfg.ln_eps))
}

fn project<S: Scalar>(
    tape: &mut Tape<S>,
    p: &BoundParams,
    prefix: &str,
    which: char,
    x: Var,
) -> Result<Var> {
    let w = p.var(&format!("{prefix}.w{which}"))?;
    let b = p.var(&format!("{prefix}.b{which}"))?;
    let h = tape.matmul(x, w)?;
    tape.add_row(h, b)
}

/// Multi-head attention: joint projections, per-head fused attention on
/// column slices, concat, output projection.
fn mha<S: Scalar>(
    tape: &mut Tape<S>,
    p: &BoundParams,
    prefix: &str,
    xq: Var,
    xkv: Var,
    causal: bool,
    cfg: &CrepeConfig,
) -> Result<Var> {
    let q = project(tape, p, prefix, 'q', xq)?;
    let k = project(tape, p, prefix, 'k', xkv)?;
    let v = project(tape, p, prefix, 'v', xkv)?;
    let dh = cfg.head_dim();
    let scale = S::from_f64(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        heads.push(tape.attention(qh, kh, vh, causal, scale)?);
    }
    let cat = tape.concat_cols(&heads)?;
    project(tape, p, prefix, 'o', cat)
}

fn ffn<S: Scalar>(tape: &mut Tape<S>, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let h = project(tape, p, prefix, '1', x)?;
    let a = tape.gelu(h);
    project(tape, p, prefix, '2', a)
}

fn encoder_layer<S: Scalar>(
    tape: &mut Tape<S>,
    p: &BoundParams,
    i: usize,
    x: Var,
    cfg: &CrepeConfig,
) -> Result<Var> {
    let n1 = lnorm(tape, p, &format!("enc.{i}.ln1"), x, cfg)?;
    let sa = mha(tape, p, &format!("enc.{i}.attn"), n1, n1, false, cfg)?;
    let x = tape.add(x, sa)?;
    let n2 = lnorm(tape, p, &format!("enc.{i}.ln2"), x, cfg)?;
    let ff = ffn(tape, p, &format!("enc.{i}.ffn"), n2)?;
    tape.add(x, ff)
}

fn decoder_layer<S: Scalar>(
    tape: &mut Tape<S>,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    enc: Var,
    cfg: &CrepeConfig,
) -> Result<Var> {
    let n1 = lnorm(tape, p, &format!("{prefix}.ln1"), x, cfg)?;
    let sa = mha(tape, p, &format!("{prefix}.self"), n1, n1, true, cfg)?;
    let x = tape.add(x, sa)?;
    let n2 = lnorm(tape, p, &format!("{prefix}.ln2"), x, cfg)?;
    let ca = mha(tape, p, &format!("{prefix}.cross"), n2, enc, false, cfg)?;
    let x = tape.add(x, ca)?;
    let n3 = lnorm(tape, p, &format!("{prefix}.ln3"), x, cfg)?;
    let ff = ffn(tape, p, &format!("{prefix}.ffn"), n3)?;
    tape.add(x, ff)
}

/// Image -> (n_patches, d_model) memory.
pub fn encode<S: Scalar>(
    tape: &mut Tape<S>,
    p: &BoundParams,
    cfg: &CrepeConfig,
    image: &[f32],
) -> Result<Var> {
    let patches = tape.input(patch_rows::<S>(cfg, image)?);
    let w = p.var("enc.patch.w")?;
    let b = p.var("enc.patch.b")?;
    let h = tape.matmul(patches, w)?;
    let h = tape.add_row(h, b)?;
    let pos = p.var("enc.pos")?;
    let mut x = tape.add(h, pos)?;
    for i in 0..cfg.enc_layers {
        x = encoder_layer(tape, p, i, x, cfg)?;
    }
    lnorm(tape, p, "enc.final", x, cfg)
}

pub struct SharedDecode {
    /// Hidden states after the shared trunk, (T, d_model).
    pub shared: Var,
    /// Vocabulary logits from the sequence head, (T, vocab).
    pub logits: Var,
}

/// Teacher-forced decode: embeds the full input token row, runs the shared
/// trunk, and produces sequence-head logits for every position.
pub fn decode_teacher_forced<S: Scalar>(
    tape: &mut Tape<S>,
    p: &BoundParams,
    cfg: &CrepeConfig,
    enc: Var,
    tokens: &[u32],
) -> Result<SharedDecode> {
    if tokens.is_empty() || tokens.len() > cfg.max_seq_len {
        return Err(Error::Dimension(format!(
            "decoder input length {} outside 1..={}",
            tokens.len(),
            cfg.max_seq_len
        )));
    }
    let tok = p.var("dec.tok")?;
    let emb = tape.embedding(tok, tokens)?;
    let pos_full = p.var("dec.pos")?;
    let pos = tape.slice_rows(pos_full, 0, tokens.len())?;
    let mut x = tape.add(emb, pos)?;
    for i in 0..cfg.dec_shared_layers {
        x = decoder_layer(tape, p, &format!("dec.{i}"), x, enc, cfg)?;
    }
    let shared = x;
    let y = decoder_layer(tape, p, "seq.layer", shared, enc, cfg)?;
    let y = lnorm(tape, p, "seq.final", y, cfg)?;
    let w = p.var("seq.out.w")?;
    let b = p.var("seq.out.b")?;
    let logits = tape.matmul(y, w)?;
    let logits = tape.add_row(logits, b)?;
    Ok(SharedDecode { shared, logits })
}

fn coord_ffn<S: Scalar>(
    tape: &mut Tape<S>,
    p: &BoundParams,
    branch: &str,
    x: Var,
) -> Result<Var> {
    let prefix = format!("coord.{branch}");
    let h1 = project(tape, p, &prefix, '1', x)?;
    let h1 = tape.relu(h1);
    let h2 = project(tape, p, &prefix, '2', h1)?;
    let h2 = tape.relu(h2);
    let out = project(tape, p, &prefix, '3', h2)?;
    Ok(tape.sigmoid(out))
}

/// Coordinate head over the shared trunk states: one decoder layer, final
/// norm, then per-trigger bbox (n,4) and quad (n,8) predictions in (0,1).
pub fn coord_heads<S: Scalar>(
    tape: &mut Tape<S>,
    p: &BoundParams,
    cfg: &CrepeConfig,
    enc: Var,
    shared: Var,
    triggers: &[usize],
) -> Result<(Var, Var)> {
    let y = decoder_layer(tape, p, "coord.layer", shared, enc, cfg)?;
    let y = lnorm(tape, p, "coord.final", y, cfg)?;
    let picked = tape.gather_rows(y, triggers)?;
    let bbox = coord_ffn(tape, p, "bbox", picked)?;
    let quad = coord_ffn(tape, p, "quad", picked)?;
    Ok((bbox, quad))
}
