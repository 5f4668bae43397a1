//! Coordinate-aware encoder-decoder: a patch-embedding vision encoder, a
//! character-level autoregressive decoder with a shared trunk, a sequence
//! head producing vocabulary logits, and a coordinate head producing
//! normalized box and quadrilateral geometry at trigger positions.

pub mod checkpoint;
pub mod forward;
pub mod plain;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::{Scalar, Tensor};
use crate::util::component_rng;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct CrepeConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_shared_layers: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub coord_hidden: usize,
    pub ln_eps: f64,
}

impl Default for CrepeConfig {
    fn default() -> Self {
        CrepeConfig {
            image_size: 96,
            patch_size: 8,
            d_model: 64,
            n_heads: 4,
            enc_layers: 2,
            dec_shared_layers: 3,
            ffn_dim: 256,
            max_seq_len: 384,
            coord_hidden: 64,
            ln_eps: 1e-5,
        }
    }
}

impl CrepeConfig {
    pub fn validate(&self) -> Result<()> {
        for (v, what) in [
            (self.image_size, "image_size"),
            (self.patch_size, "patch_size"),
            (self.d_model, "d_model"),
            (self.n_heads, "n_heads"),
            (self.enc_layers, "enc_layers"),
            (self.dec_shared_layers, "dec_shared_layers"),
            (self.ffn_dim, "ffn_dim"),
            (self.max_seq_len, "max_seq_len"),
            (self.coord_hidden, "coord_hidden"),
        ] {
            if v == 0 {
                return Err(Error::Dimension(format!("{what} must be positive")));
            }
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Dimension(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Dimension(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Dimension("ln_eps must be positive".to_string()));
        }
        Ok(())
    }

    pub fn patches_per_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn n_patches(&self) -> usize {
        self.patches_per_side() * self.patches_per_side()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ParamKind {
    Xavier,
    Zeros,
    Ones,
}

/// Every trainable tensor: name, rows, cols, and init family. The list is
/// the single source of truth for init, checkpoint validation, and the
/// branch-isolation split.
fn param_specs(cfg: &CrepeConfig, vocab_size: usize) -> Vec<(String, usize, usize, ParamKind)> {
    use ParamKind::*;
    let d = cfg.d_model;
    let f = cfg.ffn_dim;
    let h = cfg.coord_hidden;
    let mut specs: Vec<(String, usize, usize, ParamKind)> = Vec::new();
    let attn = |specs: &mut Vec<(String, usize, usize, ParamKind)>, prefix: &str| {
        for w in ["wq", "wk", "wv", "wo"] {
            specs.push((format!("{prefix}.{w}"), d, d, Xavier));
        }
        for b in ["bq", "bk", "bv", "bo"] {
            specs.push((format!("{prefix}.{b}"), 1, d, Zeros));
        }
    };
    let ln = |specs: &mut Vec<(String, usize, usize, ParamKind)>, prefix: &str| {
        specs.push((format!("{prefix}.g"), 1, d, Ones));
        specs.push((format!("{prefix}.b"), 1, d, Zeros));
    };
    let ffn = |specs: &mut Vec<(String, usize, usize, ParamKind)>, prefix: &str| {
        specs.push((format!("{prefix}.w1"), d, f, Xavier));
        specs.push((format!("{prefix}.b1"), 1, f, Zeros));
        specs.push((format!("{prefix}.w2"), f, d, Xavier));
        specs.push((format!("{prefix}.b2"), 1, d, Zeros));
    };

    specs.push(("enc.patch.w".to_string(), cfg.patch_dim(), d, Xavier));
    specs.push(("enc.patch.b".to_string(), 1, d, Zeros));
    specs.push(("enc.pos".to_string(), cfg.n_patches(), d, Xavier));
    for i in 0..cfg.enc_layers {
        ln(&mut specs, &format!("enc.{i}.ln1"));
        attn(&mut specs, &format!("enc.{i}.attn"));
        ln(&mut specs, &format!("enc.{i}.ln2"));
        ffn(&mut specs, &format!("enc.{i}.ffn"));
    }
    ln(&mut specs, "enc.final");

    specs.push(("dec.tok".to_string(), vocab_size, d, Xavier));
    specs.push(("dec.pos".to_string(), cfg.max_seq_len, d, Xavier));
    let dec_layer = |specs: &mut Vec<(String, usize, usize, ParamKind)>, prefix: &str| {
        ln(specs, &format!("{prefix}.ln1"));
        attn(specs, &format!("{prefix}.self"));
        ln(specs, &format!("{prefix}.ln2"));
        attn(specs, &format!("{prefix}.cross"));
        ln(specs, &format!("{prefix}.ln3"));
        ffn(specs, &format!("{prefix}.ffn"));
    };
    for i in 0..cfg.dec_shared_layers {
        dec_layer(&mut specs, &format!("dec.{i}"));
    }

    dec_layer(&mut specs, "seq.layer");
    ln(&mut specs, "seq.final");
    specs.push(("seq.out.w".to_string(), d, vocab_size, Xavier));
    specs.push(("seq.out.b".to_string(), 1, vocab_size, Zeros));

    dec_layer(&mut specs, "coord.layer");
    ln(&mut specs, "coord.final");
    for (branch, out) in [("bbox", 4), ("quad", 8)] {
        specs.push((format!("coord.{branch}.w1"), d, h, Xavier));
        specs.push((format!("coord.{branch}.b1"), 1, h, Zeros));
        specs.push((format!("coord.{branch}.w2"), h, h, Xavier));
        specs.push((format!("coord.{branch}.b2"), 1, h, Zeros));
        specs.push((format!("coord.{branch}.w3"), h, out, Xavier));
        specs.push((format!("coord.{branch}.b3"), 1, out, Zeros));
    }
    specs
}

/// Named parameter set. Initialization seeds one RNG per tensor from the
/// root seed and the tensor name, so values do not depend on init order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub tensors: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ModelParams<S> {
    pub fn init(cfg: &CrepeConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut tensors = BTreeMap::new();
        for (name, rows, cols, kind) in param_specs(cfg, vocab_size) {
            let tensor = match kind {
                ParamKind::Zeros => Tensor::zeros(rows, cols),
                ParamKind::Ones => Tensor::filled(rows, cols, S::one()),
                ParamKind::Xavier => {
                    let mut rng = component_rng(seed, &name);
                    let limit = (6.0 / (rows + cols) as f64).sqrt();
                    let data = (0..rows * cols)
                        .map(|_| S::from_f64(rng.random_range(-limit..limit)))
                        .collect();
                    Tensor::new(rows, cols, data)?
                }
            };
            tensors.insert(name, tensor);
        }
        Ok(ModelParams { tensors })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Invariant(format!("missing parameter {name}")))
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Confirms the tensor set matches the architecture exactly.
    pub fn validate_shape(&self, cfg: &CrepeConfig, vocab_size: usize) -> Result<()> {
        let specs = param_specs(cfg, vocab_size);
        if specs.len() != self.tensors.len() {
            return Err(Error::Format(format!(
                "parameter count {} does not match architecture ({} expected)",
                self.tensors.len(),
                specs.len()
            )));
        }
        for (name, rows, cols, _) in specs {
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
            if t.shape() != (rows, cols) {
                return Err(Error::Format(format!(
                    "parameter {name} is {}x{}, architecture wants {rows}x{cols}",
                    t.rows(),
                    t.cols()
                )));
            }
        }
        Ok(())
    }

    /// Number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

/// Splits a grayscale image in [0,1] into flattened non-overlapping patch
/// rows, patch-major in reading order, pixel-major inside each patch.
pub fn patch_rows<S: Scalar>(cfg: &CrepeConfig, image: &[f32]) -> Result<Tensor<S>> {
    let side = cfg.image_size;
    if image.len() != side * side {
        return Err(Error::Dimension(format!(
            "image has {} pixels, config wants {}x{}",
            image.len(),
            side,
            side
        )));
    }
    let ps = cfg.patch_size;
    let per_side = cfg.patches_per_side();
    let mut out = Tensor::zeros(cfg.n_patches(), cfg.patch_dim());
    for py in 0..per_side {
        for px in 0..per_side {
            let row = out.row_mut(py * per_side + px);
            for iy in 0..ps {
                for ix in 0..ps {
                    row[iy * ps + ix] =
                        S::from_f64(image[(py * ps + iy) * side + px * ps + ix] as f64);
                }
            }
        }
    }
    Ok(out)
}

/// True for parameters the coordinate branch owns.
pub fn is_coord_param(name: &str) -> bool {
    name.starts_with("coord.")
}

/// True for parameters the sequence head owns.
pub fn is_seq_param(name: &str) -> bool {
    name.starts_with("seq.")
}
