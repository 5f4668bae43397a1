//! Binary checkpoint files. A checkpoint stores every parameter tensor as
//! little-endian f32, then the model config as JSON, then the vocabulary
//! token list, so a file is self-describing: loading needs no side channel
//! and validates shapes against the embedded config before returning.
//!
//! Optimizer state lives in a sidecar file next to the checkpoint so that
//! inference-only consumers never pay for it.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{CrepeConfig, ModelParams};
use crate::nn::optim::{Adam, AdamConfig};
use crate::nn::tensor::Tensor;
use crate::schema::Vocabulary;

const MODEL_MAGIC: &[u8; 4] = b"CRPE";
const OPTIM_MAGIC: &[u8; 4] = b"CRPO";
const VERSION: u32 = 1;

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::Format(format!("string of {} bytes too long", bytes.len())));
    }
    put_u16(out, bytes.len() as u16);
    out.extend_from_slice(bytes);
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor<f32>) -> Result<()> {
    out.push(2u8);
    put_u32(out, u32::try_from(t.rows()).map_err(|_| oversized(t.rows()))?);
    put_u32(out, u32::try_from(t.cols()).map_err(|_| oversized(t.cols()))?);
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

fn oversized(dim: usize) -> Error {
    Error::Format(format!("tensor dimension {dim} exceeds the file format"))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], path: &Path) -> Self {
        Reader {
            buf,
            pos: 0,
            path: path.display().to_string(),
        }
    }

    fn truncated(&self, what: &str) -> Error {
        Error::Format(format!(
            "{}: truncated at byte {} reading {what}",
            self.path, self.pos
        ))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.truncated(what));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn str(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Format(format!("{}: invalid utf-8 in {what}", self.path)))
    }

    fn tensor(&mut self, what: &str) -> Result<Tensor<f32>> {
        let rank = self.take(1, what)?[0];
        if rank != 2 {
            return Err(Error::Format(format!(
                "{}: tensor '{what}' has rank {rank}, expected 2",
                self.path
            )));
        }
        let rows = self.u32(what)? as usize;
        let cols = self.u32(what)? as usize;
        let count = rows
            .checked_mul(cols)
            .filter(|&n| n <= self.buf.len() / 4 + 1)
            .ok_or_else(|| self.truncated(what))?;
        let bytes = self.take(count * 4, what)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(rows, cols, data)
    }

    fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(Error::Format(format!(
                "{}: bad magic {:?}, not a {} file",
                self.path,
                got,
                std::str::from_utf8(magic).unwrap_or("?")
            )));
        }
        let version = self.u32("version")?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported version {version}",
                self.path
            )));
        }
        Ok(())
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes after payload",
                self.path,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn tensor_block(tensors: &BTreeMap<String, Tensor<f32>>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    put_u32(&mut out, tensors.len() as u32);
    for (name, t) in tensors {
        put_str(&mut out, name)?;
        put_tensor(&mut out, t)?;
    }
    Ok(out)
}

fn read_tensor_block(r: &mut Reader) -> Result<BTreeMap<String, Tensor<f32>>> {
    let count = r.u32("tensor count")? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name = r.str("tensor name")?;
        let t = r.tensor(&name)?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate tensor '{name}'")));
        }
    }
    Ok(tensors)
}

/// Writes parameters, config, and vocabulary to one self-describing file.
pub fn save(
    path: &Path,
    params: &ModelParams<f32>,
    cfg: &CrepeConfig,
    vocab: &Vocabulary,
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    put_u32(&mut out, VERSION);
    out.extend_from_slice(&tensor_block(&params.tensors)?);
    let cfg_json = serde_json::to_vec(cfg)?;
    put_u32(&mut out, cfg_json.len() as u32);
    out.extend_from_slice(&cfg_json);
    put_u32(&mut out, vocab.size() as u32);
    for tok in vocab.tokens() {
        put_str(&mut out, tok)?;
    }
    Ok(std::fs::write(path, out)?)
}

/// Loads a checkpoint and validates the parameter set against the embedded
/// config and vocabulary before returning.
pub fn load(path: &Path) -> Result<(ModelParams<f32>, CrepeConfig, Vocabulary)> {
    let buf = std::fs::read(path)?;
    let mut r = Reader::new(&buf, path);
    r.expect_magic(MODEL_MAGIC)?;
    let tensors = read_tensor_block(&mut r)?;
    let cfg_len = r.u32("config length")? as usize;
    let cfg_bytes = r.take(cfg_len, "config json")?;
    let cfg: CrepeConfig = serde_json::from_slice(cfg_bytes)?;
    cfg.validate()?;
    let tok_count = r.u32("vocab size")? as usize;
    let mut stored = Vec::with_capacity(tok_count);
    for _ in 0..tok_count {
        stored.push(r.str("vocab token")?);
    }
    r.done()?;
    let vocab = Vocabulary::from_tokens(&stored)?;
    let params = ModelParams { tensors };
    params.validate_shape(&cfg, vocab.size())?;
    Ok((params, cfg, vocab))
}

/// Conventional sidecar path for optimizer state: checkpoint path + ".opt".
pub fn optimizer_path(checkpoint: &Path) -> std::path::PathBuf {
    let mut name = checkpoint.as_os_str().to_os_string();
    name.push(".opt");
    std::path::PathBuf::from(name)
}

/// Writes Adam step count and first/second moment tensors.
pub fn save_optimizer(path: &Path, opt: &Adam<f32>) -> Result<()> {
    let (t, m, v) = opt.state();
    let mut out = Vec::new();
    out.extend_from_slice(OPTIM_MAGIC);
    put_u32(&mut out, VERSION);
    out.extend_from_slice(&t.to_le_bytes());
    out.extend_from_slice(&tensor_block(m)?);
    out.extend_from_slice(&tensor_block(v)?);
    Ok(std::fs::write(path, out)?)
}

/// Restores an Adam instance with the given hyperparameters and the stored
/// step count and moments.
pub fn load_optimizer(path: &Path, cfg: AdamConfig) -> Result<Adam<f32>> {
    let buf = std::fs::read(path)?;
    let mut r = Reader::new(&buf, path);
    r.expect_magic(OPTIM_MAGIC)?;
    let t = r.u64("step count")?;
    let m = read_tensor_block(&mut r)?;
    let v = read_tensor_block(&mut r)?;
    r.done()?;
    if m.len() != v.len() || m.keys().ne(v.keys()) {
        return Err(Error::Format(format!(
            "{}: first and second moment tensor sets disagree",
            path.display()
        )));
    }
    Ok(Adam::from_state(cfg, t, m, v))
}
