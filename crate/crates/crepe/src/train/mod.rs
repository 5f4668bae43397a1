//! Teacher-forced training: deterministic mixed batches, per-sample
//! backward passes, and an Adam loop with checkpoint/resume.
//!
//! Determinism contract: a run is a pure function of (config, corpora,
//! seed). Batches are derived from the step index alone, each sample's
//! backward pass is computed independently, and gradients are reduced in
//! batch order, so the parameter trajectory is bitwise identical for any
//! worker thread count and across checkpoint resume.

pub mod loss;
pub mod sample;

pub use loss::{diou_loss, LossReport, LossWeights};
pub use sample::TrainingSample;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::checkpoint;
use crate::model::forward::{self, BoundParams};
use crate::model::{CrepeConfig, ModelParams};
use crate::nn::optim::{Adam, AdamConfig};
use crate::nn::tape::Tape;
use crate::nn::tensor::Tensor;
use crate::schema::{Task, Vocabulary};
use crate::util;

/// Run settings, loadable from JSON. `ratio` is `[n_parse, n_ocr]` per
/// batch and must sum to `batch`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub task: Task,
    pub ratio: [usize; 2],
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub mask_trigger_ce: bool,
    pub lambda_seq: f64,
    pub lambda_l1: f64,
    pub lambda_diou: f64,
    pub checkpoint_every: usize,
    pub parse_corpus: Option<PathBuf>,
    pub ocr_corpus: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::pretrain()
    }
}

impl TrainConfig {
    /// OCR pretraining: pure coordinate-bearing batches.
    pub fn pretrain() -> TrainConfig {
        TrainConfig {
            task: Task::Ocr,
            ratio: [0, 8],
            steps: 200,
            lr: 3e-4,
            batch: 8,
            seed: 0,
            mask_trigger_ce: true,
            lambda_seq: 1.0,
            lambda_l1: 1.0,
            lambda_diou: 1.0,
            checkpoint_every: 0,
            parse_corpus: None,
            ocr_corpus: None,
        }
    }

    /// Weakly-supervised fine-tuning: parse and OCR mixed 1:4.
    pub fn finetune() -> TrainConfig {
        TrainConfig {
            task: Task::Parse,
            ratio: [1, 4],
            batch: 5,
            steps: 500,
            ..TrainConfig::pretrain()
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            seq: self.lambda_seq,
            l1: self.lambda_l1,
            diou: self.lambda_diou,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.ratio[0] + self.ratio[1] != self.batch {
            return Err(Error::Argument(format!(
                "ratio {}:{} must sum to batch size {}",
                self.ratio[0], self.ratio[1], self.batch
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Argument(format!("learning rate {} invalid", self.lr)));
        }
        for (name, v) in [
            ("lambda_seq", self.lambda_seq),
            ("lambda_l1", self.lambda_l1),
            ("lambda_diou", self.lambda_diou),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Argument(format!("{name} {v} invalid")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One batch position: which stream it draws from and which sample index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchSlot {
    pub parse: bool,
    pub index: usize,
}

/// Deterministic batch for a step: parse slots spread evenly through the
/// batch, indices drawn from a per-step stream. Depends only on
/// (config seed, step, corpus sizes), never on loop state, so a resumed
/// run sees the identical schedule.
pub fn plan_batch(
    cfg: &TrainConfig,
    step: usize,
    n_parse: usize,
    n_ocr: usize,
) -> Result<Vec<BatchSlot>> {
    let [np, no] = cfg.ratio;
    let b = cfg.batch;
    if np > 0 && n_parse == 0 {
        return Err(Error::Training("parse sample stream is empty".to_string()));
    }
    if no > 0 && n_ocr == 0 {
        return Err(Error::Training("ocr sample stream is empty".to_string()));
    }
    let seed = util::component_seed(cfg.seed, "batch")
        ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots = Vec::with_capacity(b);
    for i in 0..b {
        let parse = (i + 1) * np / b > i * np / b;
        let index = if parse {
            rng.random_range(0..n_parse)
        } else {
            rng.random_range(0..n_ocr)
        };
        slots.push(BatchSlot { parse, index });
    }
    Ok(slots)
}

/// Per-sample gradient contribution and unweighted loss values. The root
/// scalar is pre-scaled by 1/batch, so summing gradient maps over the
/// batch yields the gradient of the batch-mean loss.
pub(crate) struct SamplePass {
    pub grads: BTreeMap<String, Tensor<f32>>,
    pub seq: f64,
    pub l1: f64,
    pub diou: f64,
}

pub(crate) fn sample_pass(
    params: &ModelParams<f32>,
    mcfg: &CrepeConfig,
    s: &TrainingSample,
    weights: &LossWeights,
    mask_trigger_ce: bool,
    inv_batch: f64,
) -> Result<SamplePass> {
    let mut tape = Tape::<f32>::new();
    let bound = BoundParams::bind(&mut tape, params);
    let enc = forward::encode(&mut tape, &bound, mcfg, &s.image)?;
    let row = &s.target_seq.0;
    let input = &row[..row.len() - 1];
    let out = forward::decode_teacher_forced(&mut tape, &bound, mcfg, enc, input)?;

    let seq_term = loss::sequence_loss(&mut tape, out.logits, s, mask_trigger_ce)?;
    let coord_terms = if s.has_coords && !s.trigger_positions.is_empty() {
        let (bbox, quad) =
            forward::coord_heads(&mut tape, &bound, mcfg, enc, out.shared, &s.trigger_positions)?;
        Some(loss::coordinate_loss(&mut tape, bbox, quad, s)?)
    } else {
        None
    };

    let value = |tape: &Tape<f32>, v| f64::from(tape.value(v).item());
    let seq = seq_term.map_or(0.0, |v| value(&tape, v));
    let (l1, diou) = coord_terms
        .as_ref()
        .map_or((0.0, 0.0), |c| (value(&tape, c.l1), value(&tape, c.diou)));

    let mut root = None;
    let push = |tape: &mut Tape<f32>, root: &mut Option<_>, term, lambda: f64| -> Result<()> {
        if lambda == 0.0 {
            return Ok(());
        }
        let scaled = tape.scale(term, lambda as f32);
        *root = match *root {
            None => Some(scaled),
            Some(r) => Some(tape.add(r, scaled)?),
        };
        Ok(())
    };
    if let Some(v) = seq_term {
        push(&mut tape, &mut root, v, weights.seq)?;
    }
    if let Some(c) = &coord_terms {
        push(&mut tape, &mut root, c.l1, weights.l1)?;
        push(&mut tape, &mut root, c.diou, weights.diou)?;
    }

    let grads = match root {
        Some(r) => {
            let scaled = tape.scale(r, inv_batch as f32);
            tape.backward(scaled)?;
            bound.grads(&tape)
        }
        None => BTreeMap::new(),
    };
    Ok(SamplePass { grads, seq, l1, diou })
}

/// JSON log line emitted once per completed step.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub seq_loss: f64,
    pub l1: f64,
    pub diou: f64,
    pub total: f64,
}

/// Owns parameters and optimizer state for one training run.
pub struct Trainer {
    pub tcfg: TrainConfig,
    pub mcfg: CrepeConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams<f32>,
    /// Worker count for the per-sample backward passes; results are
    /// identical for any value.
    pub threads: usize,
    opt: Adam<f32>,
}

impl Trainer {
    /// Fresh run: parameters initialized from the config seed.
    pub fn new(tcfg: TrainConfig, mcfg: CrepeConfig, vocab: Vocabulary) -> Result<Trainer> {
        tcfg.validate()?;
        let params = ModelParams::init(&mcfg, vocab.size(), util::component_seed(tcfg.seed, "init"))?;
        Trainer::from_params(tcfg, mcfg, vocab, params)
    }

    /// Continue from existing parameters (e.g. a pretrained model) with a
    /// fresh optimizer.
    pub fn from_params(
        tcfg: TrainConfig,
        mcfg: CrepeConfig,
        vocab: Vocabulary,
        params: ModelParams<f32>,
    ) -> Result<Trainer> {
        tcfg.validate()?;
        mcfg.validate()?;
        params.validate_shape(&mcfg, vocab.size())?;
        let opt = Adam::new(AdamConfig {
            lr: tcfg.lr,
            ..AdamConfig::default()
        });
        Ok(Trainer {
            tcfg,
            mcfg,
            vocab,
            params,
            threads: util::worker_threads(),
            opt,
        })
    }

    /// Resume an interrupted run: model and optimizer state both come from
    /// the checkpoint pair, so the next step is bitwise identical to the
    /// uninterrupted run.
    pub fn resume(tcfg: TrainConfig, checkpoint_path: &Path) -> Result<Trainer> {
        tcfg.validate()?;
        let (params, mcfg, vocab) = checkpoint::load(checkpoint_path)?;
        let opt = checkpoint::load_optimizer(
            &checkpoint::optimizer_path(checkpoint_path),
            AdamConfig {
                lr: tcfg.lr,
                ..AdamConfig::default()
            },
        )?;
        Ok(Trainer {
            tcfg,
            mcfg,
            vocab,
            params,
            threads: util::worker_threads(),
            opt,
        })
    }

    pub fn completed_steps(&self) -> usize {
        self.opt.steps_taken() as usize
    }

    /// Runs one optimization step over a planned batch. On a non-finite
    /// loss the parameter update is skipped and a training error returned,
    /// leaving `params` at the last good state for diagnosis.
    pub fn step(
        &mut self,
        parse: &[TrainingSample],
        ocr: &[TrainingSample],
    ) -> Result<LossReport> {
        let step_idx = self.completed_steps();
        let slots = plan_batch(&self.tcfg, step_idx, parse.len(), ocr.len())?;
        let picked: Vec<&TrainingSample> = slots
            .iter()
            .map(|s| {
                if s.parse {
                    &parse[s.index]
                } else {
                    &ocr[s.index]
                }
            })
            .collect();
        let b = picked.len();
        let weights = self.tcfg.weights();
        let mask = self.tcfg.mask_trigger_ce;
        let inv_b = 1.0 / b as f64;
        let threads = self.threads.clamp(1, b);
        let chunk = b.div_ceil(threads);

        let params = &self.params;
        let mcfg = self.mcfg;
        let mut passes: Vec<Option<SamplePass>> = Vec::new();
        passes.resize_with(b, || None);
        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for chunk_samples in picked.chunks(chunk) {
                handles.push(scope.spawn(move || -> Result<Vec<SamplePass>> {
                    chunk_samples
                        .iter()
                        .map(|s| sample_pass(params, &mcfg, s, &weights, mask, inv_b))
                        .collect()
                }));
            }
            for (ci, handle) in handles.into_iter().enumerate() {
                let results = handle
                    .join()
                    .map_err(|_| Error::Training("worker thread panicked".to_string()))??;
                for (j, pass) in results.into_iter().enumerate() {
                    passes[ci * chunk + j] = Some(pass);
                }
            }
            Ok(())
        })?;

        let mut grads: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        let (mut seq, mut l1, mut diou) = (0.0, 0.0, 0.0);
        for pass in passes.into_iter().map(|p| p.expect("all passes filled")) {
            seq += pass.seq;
            l1 += pass.l1;
            diou += pass.diou;
            for (name, g) in pass.grads {
                match grads.entry(name) {
                    std::collections::btree_map::Entry::Vacant(e) => {
                        e.insert(g);
                    }
                    std::collections::btree_map::Entry::Occupied(mut e) => {
                        e.get_mut().add_assign(&g);
                    }
                }
            }
        }
        let report =
            LossReport::weighted_total(seq * inv_b, l1 * inv_b, diou * inv_b, &weights);
        if !report.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss at step {step_idx}: {report:?}"
            )));
        }
        self.opt.step(&mut self.params.tensors, &grads)?;
        Ok(report)
    }

    /// Full loop: steps until `tcfg.steps`, logging one JSON line per step
    /// to `train_log.jsonl`, saving periodic checkpoints, and writing the
    /// final model to `model.crpe` (+ optimizer sidecar). On a failing
    /// step a diagnostic checkpoint of the last good state is saved first.
    pub fn run(
        &mut self,
        parse: &[TrainingSample],
        ocr: &[TrainingSample],
        out_dir: &Path,
    ) -> Result<Vec<StepLog>> {
        std::fs::create_dir_all(out_dir)?;
        let mut log_file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(out_dir.join("train_log.jsonl"))?;
        let mut logs = Vec::new();
        while self.completed_steps() < self.tcfg.steps {
            let step = self.completed_steps();
            let report = match self.step(parse, ocr) {
                Ok(r) => r,
                Err(e) => {
                    self.save_checkpoint(&out_dir.join("diagnostic.crpe"))?;
                    return Err(e);
                }
            };
            let line = StepLog {
                step,
                seq_loss: report.seq_loss,
                l1: report.l1_loss,
                diou: report.diou_loss,
                total: report.total,
            };
            writeln!(log_file, "{}", serde_json::to_string(&line)?)?;
            logs.push(line);
            let done = self.completed_steps();
            if self.tcfg.checkpoint_every > 0
                && done % self.tcfg.checkpoint_every == 0
                && done < self.tcfg.steps
            {
                self.save_checkpoint(&out_dir.join(format!("model-step{done}.crpe")))?;
            }
        }
        self.save_checkpoint(&out_dir.join("model.crpe"))?;
        Ok(logs)
    }

    /// Saves the model file plus its optimizer sidecar.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.params, &self.mcfg, &self.vocab)?;
        checkpoint::save_optimizer(&checkpoint::optimizer_path(path), &self.opt)
    }
}
