//! Coordinate-aware end-to-end document parsing.
//!
//! One autoregressive encoder-decoder reads a document image and emits a
//! structured token sequence; whenever a trigger token (`</ocr>`, `</layout>`,
//! `</obj>`) is produced, a separate coordinate head predicts the normalized
//! box and quadrilateral of the span that just closed. The crate covers the
//! whole desk-scale pipeline:
//!
//! * [`schema`] — vocabulary, parse trees, and every token grammar
//! * [`synth`] — deterministic synthetic document generator and corpus files
//! * [`nn`] — minimal reverse-mode autodiff tensor kernel
//! * [`model`] — patch-transformer encoder plus the two-head decoder
//! * [`train`] — losses, weakly-supervised mixed batches, training loops
//! * [`infer`] — greedy decoding and post-hoc batched coordinate prediction
//! * [`metrics`] — field F1, tree-edit accuracy, localization, mIoU, ANLS
//! * [`render`] — SVG overlays of predicted coordinates
//! * [`cli`] — the `crepe` command-line entry points
//!
//! Start with the runnable programs under `examples/`: each one demonstrates
//! a single capability end to end (`cargo run --release -p crepe --example
//! overfit_ocr`, etc.).

pub mod cli;
pub mod error;
pub mod geom;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod render;
pub mod schema;
pub mod synth;
pub mod train;
pub mod util;

pub use error::{Error, Result};
