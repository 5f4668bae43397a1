//! Tape-free forward passes: full-sequence teacher-style evaluation and an
//! incremental decoder with key/value caches. Every operation calls the
//! same kernels as the tape, in the same order, so full, incremental, and
//! tape evaluations of the same rows agree bit for bit.

use crate::error::{Error, Result};
use crate::model::{patch_rows, CrepeConfig, ModelParams};
use crate::nn::kernels;
use crate::nn::tensor::{Scalar, Tensor};

fn lnorm<S: Scalar>(
    params: &ModelParams<S>,
    prefix: &str,
    x: &Tensor<S>,
    cfg: &CrepeConfig,
) -> Result<Tensor<S>> {
    let g = params.get(&format!("{prefix}.g"))?;
    let b = params.get(&format!("{prefix}.b"))?;
    let (out, _) = kernels::layer_norm(x, g, b, S::from_f64(cfg.ln_eps))?;
    Ok(out)
}

fn project<S: Scalar>(
    params: &ModelParams<S>,
    prefix: &str,
    which: char,
    x: &Tensor<S>,
) -> Result<Tensor<S>> {
    let w = params.get(&format!("{prefix}.w{which}"))?;
    let b = params.get(&format!("{prefix}.b{which}"))?;
    kernels::add_row(&kernels::matmul(x, w)?, b)
}

/// Per-head attention over pre-projected Q/K/V, concatenated and projected.
fn heads_attend<S: Scalar>(
    params: &ModelParams<S>,
    prefix: &str,
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    causal: bool,
    cfg: &CrepeConfig,
) -> Result<Tensor<S>> {
    let dh = cfg.head_dim();
    let scale = S::from_f64(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = kernels::slice_cols(q, h * dh, dh)?;
        let kh = kernels::slice_cols(k, h * dh, dh)?;
        let vh = kernels::slice_cols(v, h * dh, dh)?;
        let (out, _) = kernels::attention(&qh, &kh, &vh, causal, scale)?;
        heads.push(out);
    }
    let refs: Vec<&Tensor<S>> = heads.iter().collect();
    let cat = kernels::concat_cols(&refs)?;
    project(params, prefix, 'o', &cat)
}

fn mha<S: Scalar>(
    params: &ModelParams<S>,
    prefix: &str,
    xq: &Tensor<S>,
    xkv: &Tensor<S>,
    causal: bool,
    cfg: &CrepeConfig,
) -> Result<Tensor<S>> {
    let q = project(params, prefix, 'q', xq)?;
    let k = project(params, prefix, 'k', xkv)?;
    let v = project(params, prefix, 'v', xkv)?;
    heads_attend(params, prefix, &q, &k, &v, causal, cfg)
}

fn ffn<S: Scalar>(params: &ModelParams<S>, prefix: &str, x: &Tensor<S>) -> Result<Tensor<S>> {
    let h = project(params, prefix, '1', x)?;
    let a = kernels::gelu(&h);
    project(params, prefix, '2', &a)
}

fn decoder_layer_full<S: Scalar>(
    params: &ModelParams<S>,
    prefix: &str,
    x: &Tensor<S>,
    enc: &Tensor<S>,
    cfg: &CrepeConfig,
) -> Result<Tensor<S>> {
    let n1 = lnorm(params, &format!("{prefix}.ln1"), x, cfg)?;
    let sa = mha(params, &format!("{prefix}.self"), &n1, &n1, true, cfg)?;
    let x = kernels::add(x, &sa)?;
    let n2 = lnorm(params, &format!("{prefix}.ln2"), &x, cfg)?;
    let ca = mha(params, &format!("{prefix}.cross"), &n2, enc, false, cfg)?;
    let x = kernels::add(&x, &ca)?;
    let n3 = lnorm(params, &format!("{prefix}.ln3"), &x, cfg)?;
    let ff = ffn(params, &format!("{prefix}.ffn"), &n3)?;
    kernels::add(&x, &ff)
}

/// Image -> (n_patches, d_model) memory.
pub fn encode<S: Scalar>(
    params: &ModelParams<S>,
    cfg: &CrepeConfig,
    image: &[f32],
) -> Result<Tensor<S>> {
    let patches = patch_rows::<S>(cfg, image)?;
    let w = params.get("enc.patch.w")?;
    let b = params.get("enc.patch.b")?;
    let h = kernels::add_row(&kernels::matmul(&patches, w)?, b)?;
    let mut x = kernels::add(&h, params.get("enc.pos")?)?;
    for i in 0..cfg.enc_layers {
        let n1 = lnorm(params, &format!("enc.{i}.ln1"), &x, cfg)?;
        let sa = mha(params, &format!("enc.{i}.attn"), &n1, &n1, false, cfg)?;
        x = kernels::add(&x, &sa)?;
        let n2 = lnorm(params, &format!("enc.{i}.ln2"), &x, cfg)?;
        let ff = ffn(params, &format!("enc.{i}.ffn"), &n2)?;
        x = kernels::add(&x, &ff)?;
    }
    lnorm(params, "enc.final", &x, cfg)
}

fn embed_tokens<S: Scalar>(
    params: &ModelParams<S>,
    cfg: &CrepeConfig,
    tokens: &[u32],
    from_pos: usize,
) -> Result<Tensor<S>> {
    if tokens.is_empty() || from_pos + tokens.len() > cfg.max_seq_len {
        return Err(Error::Dimension(format!(
            "decoder positions {from_pos}..{} outside 0..{}",
            from_pos + tokens.len(),
            cfg.max_seq_len
        )));
    }
    let emb = kernels::embedding(params.get("dec.tok")?, tokens)?;
    let pos = kernels::slice_rows(params.get("dec.pos")?, from_pos, tokens.len())?;
    kernels::add(&emb, &pos)
}

/// Full teacher-style decode over a complete token row. Returns the shared
/// trunk states (T, d_model) and the sequence-head logits (T, vocab).
pub fn decode_full<S: Scalar>(
    params: &ModelParams<S>,
    cfg: &CrepeConfig,
    enc: &Tensor<S>,
    tokens: &[u32],
) -> Result<(Tensor<S>, Tensor<S>)> {
    let mut x = embed_tokens(params, cfg, tokens, 0)?;
    for i in 0..cfg.dec_shared_layers {
        x = decoder_layer_full(params, &format!("dec.{i}"), &x, enc, cfg)?;
    }
    let shared = x;
    let logits = seq_logits(params, cfg, enc, &shared)?;
    Ok((shared, logits))
}

fn seq_logits<S: Scalar>(
    params: &ModelParams<S>,
    cfg: &CrepeConfig,
    enc: &Tensor<S>,
    shared: &Tensor<S>,
) -> Result<Tensor<S>> {
    let y = decoder_layer_full(params, "seq.layer", shared, enc, cfg)?;
    let y = lnorm(params, "seq.final", &y, cfg)?;
    kernels::add_row(
        &kernels::matmul(&y, params.get("seq.out.w")?)?,
        params.get("seq.out.b")?,
    )
}

fn coord_ffn<S: Scalar>(
    params: &ModelParams<S>,
    branch: &str,
    x: &Tensor<S>,
) -> Result<Tensor<S>> {
    let prefix = format!("coord.{branch}");
    let h1 = kernels::relu(&project(params, &prefix, '1', x)?);
    let h2 = kernels::relu(&project(params, &prefix, '2', &h1)?);
    Ok(kernels::sigmoid(&project(params, &prefix, '3', &h2)?))
}

/// Batched coordinate prediction: one pass of the coordinate layer over the
/// whole shared sequence, then head FFNs at the trigger rows.
pub fn coord_predict<S: Scalar>(
    params: &ModelParams<S>,
    cfg: &CrepeConfig,
    enc: &Tensor<S>,
    shared: &Tensor<S>,
    triggers: &[usize],
) -> Result<(Tensor<S>, Tensor<S>)> {
    let y = decoder_layer_full(params, "coord.layer", shared, enc, cfg)?;
    let y = lnorm(params, "coord.final", &y, cfg)?;
    let picked = kernels::gather_rows(&y, triggers)?;
    Ok((coord_ffn(params, "bbox", &picked)?, coord_ffn(params, "quad", &picked)?))
}

/// Reference coordinate prediction: each trigger runs the coordinate layer
/// on its own causal prefix, one at a time. Exists to pin the batched path:
/// both must agree bitwise.
pub fn coord_predict_sequential<S: Scalar>(
    params: &ModelParams<S>,
    cfg: &CrepeConfig,
    enc: &Tensor<S>,
    shared: &Tensor<S>,
    triggers: &[usize],
) -> Result<(Tensor<S>, Tensor<S>)> {
    let mut bbox = Tensor::zeros(triggers.len(), 4);
    let mut quad = Tensor::zeros(triggers.len(), 8);
    for (i, &t) in triggers.iter().enumerate() {
        if t >= shared.rows() {
            return Err(Error::Dimension(format!(
                "trigger row {t} outside sequence of {}",
                shared.rows()
            )));
        }
        let prefix = kernels::slice_rows(shared, 0, t + 1)?;
        let y = decoder_layer_full(params, "coord.layer", &prefix, enc, cfg)?;
        let y = lnorm(params, "coord.final", &y, cfg)?;
        let last = kernels::slice_rows(&y, t, 1)?;
        bbox.row_mut(i).copy_from_slice(coord_ffn(params, "bbox", &last)?.row(0));
        quad.row_mut(i).copy_from_slice(coord_ffn(params, "quad", &last)?.row(0));
    }
    Ok((bbox, quad))
}

struct LayerCache<S> {
    self_k: Tensor<S>,
    self_v: Tensor<S>,
    enc_k: Tensor<S>,
    enc_v: Tensor<S>,
}

/// Incremental greedy-decode state: one token in, one logits row out, with
/// self-attention K/V caches per layer and precomputed encoder K/V.
pub struct IncrementalDecoder<'a, S> {
    params: &'a ModelParams<S>,
    cfg: &'a CrepeConfig,
    enc: &'a Tensor<S>,
    layers: Vec<LayerCache<S>>,
    shared_rows: Vec<Tensor<S>>,
    t: usize,
}

impl<'a, S: Scalar> IncrementalDecoder<'a, S> {
    pub fn new(
        params: &'a ModelParams<S>,
        cfg: &'a CrepeConfig,
        enc: &'a Tensor<S>,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        for i in 0..=cfg.dec_shared_layers {
            let prefix = if i < cfg.dec_shared_layers {
                format!("dec.{i}")
            } else {
                "seq.layer".to_string()
            };
            layers.push(LayerCache {
                self_k: Tensor::zeros(0, cfg.d_model),
                self_v: Tensor::zeros(0, cfg.d_model),
                enc_k: project(params, &format!("{prefix}.cross"), 'k', enc)?,
                enc_v: project(params, &format!("{prefix}.cross"), 'v', enc)?,
            });
        }
        Ok(IncrementalDecoder {
            params,
            cfg,
            enc,
            layers,
            shared_rows: Vec::new(),
            t: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    /// Feeds one token and returns the (1, vocab) logits row for it.
    pub fn step(&mut self, token: u32) -> Result<Tensor<S>> {
        let cfg = self.cfg;
        let params = self.params;
        let mut x = embed_tokens(params, cfg, &[token], self.t)?;
        for i in 0..=cfg.dec_shared_layers {
            let prefix = if i < cfg.dec_shared_layers {
                format!("dec.{i}")
            } else {
                "seq.layer".to_string()
            };
            let n1 = lnorm(params, &format!("{prefix}.ln1"), &x, cfg)?;
            let q = project(params, &format!("{prefix}.self"), 'q', &n1)?;
            let k_new = project(params, &format!("{prefix}.self"), 'k', &n1)?;
            let v_new = project(params, &format!("{prefix}.self"), 'v', &n1)?;
            {
                let cache = &mut self.layers[i];
                cache.self_k = kernels::concat_rows(&[&cache.self_k, &k_new])?;
                cache.self_v = kernels::concat_rows(&[&cache.self_v, &v_new])?;
            }
            let cache = &self.layers[i];
            let sa = heads_attend(
                params,
                &format!("{prefix}.self"),
                &q,
                &cache.self_k,
                &cache.self_v,
                true,
                cfg,
            )?;
            x = kernels::add(&x, &sa)?;
            let n2 = lnorm(params, &format!("{prefix}.ln2"), &x, cfg)?;
            let qc = project(params, &format!("{prefix}.cross"), 'q', &n2)?;
            let ca = heads_attend(
                params,
                &format!("{prefix}.cross"),
                &qc,
                &cache.enc_k,
                &cache.enc_v,
                false,
                cfg,
            )?;
            x = kernels::add(&x, &ca)?;
            let n3 = lnorm(params, &format!("{prefix}.ln3"), &x, cfg)?;
            let ff = ffn(params, &format!("{prefix}.ffn"), &n3)?;
            x = kernels::add(&x, &ff)?;
            if i + 1 == cfg.dec_shared_layers {
                self.shared_rows.push(x.clone());
            }
        }
        self.t += 1;
        let y = lnorm(params, "seq.final", &x, cfg)?;
        kernels::add_row(
            &kernels::matmul(&y, params.get("seq.out.w")?)?,
            params.get("seq.out.b")?,
        )
    }

    /// Shared trunk states for every step so far, (t, d_model).
    pub fn shared(&self) -> Result<Tensor<S>> {
        let refs: Vec<&Tensor<S>> = self.shared_rows.iter().collect();
        kernels::concat_rows(&refs)
    }

    pub fn encoder(&self) -> &Tensor<S> {
        self.enc
    }
}

/// Deterministic argmax: highest logit, lowest index on exact ties.
pub fn argmax_row<S: Scalar>(logits: &Tensor<S>) -> u32 {
    let row = logits.row(logits.rows() - 1);
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward::{self, BoundParams};
    use crate::nn::tape::Tape;
    use crate::synth::{gen_ocr_doc, GenConfig};

    fn small_cfg() -> CrepeConfig {
        CrepeConfig {
            enc_layers: 1,
            dec_shared_layers: 2,
            ffn_dim: 64,
            max_seq_len: 32,
            ..CrepeConfig::default()
        }
    }

    fn test_image(cfg: &CrepeConfig) -> Vec<f32> {
        assert_eq!(cfg.image_size, 96);
        gen_ocr_doc(3, &GenConfig::default()).unwrap().image.to_f01()
    }

    #[test]
    fn encode_shape_and_determinism() {
        let cfg = small_cfg();
        let params = ModelParams::<f32>::init(&cfg, 60, 5).unwrap();
        let img = test_image(&cfg);
        let a = encode(&params, &cfg, &img).unwrap();
        let b = encode(&params, &cfg, &img).unwrap();
        assert_eq!(a.shape(), (cfg.n_patches(), cfg.d_model));
        assert_eq!(a, b);
    }

    #[test]
    fn tape_and_plain_forward_agree_bitwise() {
        let cfg = small_cfg();
        let params = ModelParams::<f32>::init(&cfg, 60, 5).unwrap();
        let img = test_image(&cfg);
        let tokens = [2u32, 4, 20, 21, 22, 10, 3];

        let enc_plain = encode(&params, &cfg, &img).unwrap();
        let (shared_plain, logits_plain) = decode_full(&params, &cfg, &enc_plain, &tokens).unwrap();
        let (bbox_plain, quad_plain) =
            coord_predict(&params, &cfg, &enc_plain, &shared_plain, &[5]).unwrap();

        let mut tape = Tape::<f32>::new();
        let bound = BoundParams::bind(&mut tape, &params);
        let enc_t = forward::encode(&mut tape, &bound, &cfg, &img).unwrap();
        let out = forward::decode_teacher_forced(&mut tape, &bound, &cfg, enc_t, &tokens).unwrap();
        let (bbox_t, quad_t) =
            forward::coord_heads(&mut tape, &bound, &cfg, enc_t, out.shared, &[5]).unwrap();

        assert_eq!(tape.value(enc_t), &enc_plain);
        assert_eq!(tape.value(out.shared), &shared_plain);
        assert_eq!(tape.value(out.logits), &logits_plain);
        assert_eq!(tape.value(bbox_t), &bbox_plain);
        assert_eq!(tape.value(quad_t), &quad_plain);
    }

    #[test]
    fn incremental_matches_full_decode_bitwise() {
        let cfg = small_cfg();
        let params = ModelParams::<f32>::init(&cfg, 60, 9).unwrap();
        let img = test_image(&cfg);
        let tokens = [2u32, 5, 9, 30, 31, 10, 9, 33, 10, 3];
        let enc = encode(&params, &cfg, &img).unwrap();
        let (shared_full, logits_full) = decode_full(&params, &cfg, &enc, &tokens).unwrap();
        let mut inc = IncrementalDecoder::new(&params, &cfg, &enc).unwrap();
        for (i, &tk) in tokens.iter().enumerate() {
            let row = inc.step(tk).unwrap();
            assert_eq!(row.row(0), &logits_full.row(i)[..], "logits row {i}");
        }
        assert_eq!(inc.shared().unwrap(), shared_full);
    }

    #[test]
    fn batched_and_sequential_coords_agree_bitwise() {
        let cfg = small_cfg();
        let params = ModelParams::<f32>::init(&cfg, 60, 11).unwrap();
        let img = test_image(&cfg);
        let tokens = [2u32, 4, 20, 10, 21, 10, 22, 10, 3];
        let enc = encode(&params, &cfg, &img).unwrap();
        let (shared, _) = decode_full(&params, &cfg, &enc, &tokens).unwrap();
        let triggers = [3usize, 5, 7];
        let (b1, q1) = coord_predict(&params, &cfg, &enc, &shared, &triggers).unwrap();
        let (b2, q2) = coord_predict_sequential(&params, &cfg, &enc, &shared, &triggers).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(q1, q2);
    }

    #[test]
    fn coord_outputs_live_in_unit_interval() {
        let cfg = small_cfg();
        let params = ModelParams::<f32>::init(&cfg, 60, 2).unwrap();
        let img = test_image(&cfg);
        let tokens = [2u32, 4, 20, 10, 3];
        let enc = encode(&params, &cfg, &img).unwrap();
        let (shared, _) = decode_full(&params, &cfg, &enc, &tokens).unwrap();
        let (bbox, quad) = coord_predict(&params, &cfg, &enc, &shared, &[3]).unwrap();
        for &v in bbox.data().iter().chain(quad.data()) {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn sequence_head_params_cannot_reach_coordinates() {
        let cfg = small_cfg();
        let mut params = ModelParams::<f32>::init(&cfg, 60, 4).unwrap();
        let img = test_image(&cfg);
        let tokens = [2u32, 4, 20, 10, 3];
        let enc = encode(&params, &cfg, &img).unwrap();
        let (shared, _) = decode_full(&params, &cfg, &enc, &tokens).unwrap();
        let before = coord_predict(&params, &cfg, &enc, &shared, &[3]).unwrap();
        for (name, t) in params.tensors.iter_mut() {
            if crate::model::is_seq_param(name) {
                for v in t.data_mut() {
                    *v += 0.37;
                }
            }
        }
        let enc2 = encode(&params, &cfg, &img).unwrap();
        let (shared2, _) = decode_full(&params, &cfg, &enc2, &tokens).unwrap();
        let after = coord_predict(&params, &cfg, &enc2, &shared2, &[3]).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn too_long_input_is_rejected() {
        let cfg = small_cfg();
        let params = ModelParams::<f32>::init(&cfg, 60, 4).unwrap();
        let img = test_image(&cfg);
        let enc = encode(&params, &cfg, &img).unwrap();
        let tokens = vec![2u32; cfg.max_seq_len + 1];
        assert!(decode_full(&params, &cfg, &enc, &tokens).is_err());
    }
}
