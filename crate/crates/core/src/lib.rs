//! Desk-scale neural machine translation toolkit.
//!
//! The crate covers the whole pipeline of a translation system at toy scale:
//!
//! * [`numerics`]: `f64` tensors with a reverse-mode gradient tape.
//! * [`text`]: normalisation, joint BPE, vocabularies, corpora, length filtering.
//! * [`align`]: length-based sentence alignment of paragraph-aligned text.
//! * [`model`]: transformer encoder-decoder with pre-trained-encoder fusion,
//!   sparse (sliding, dilated, global) attention and beam/ensemble decoding.
//! * [`objectives`]: MLM/CLM/TLM, bidirectional training, denoising,
//!   back-translation and the reference-agreement objectives.
//! * [`selftrain`]: self-training with BT-BLEU collaborative filtering.
//! * [`retrieval`]: BM25 vectors and cosine top-K training-set selection.
//! * [`metrics`]: corpus and sentence BLEU, BT-BLEU.
//! * [`synth`]: synthetic languages with known ground truth.
//! * [`cli`]: the experiment runner behind the `nmtkit` binary.
//!
//! Runnable walkthroughs live in `examples/`.

pub mod align;
pub mod cli;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod retrieval;
pub mod selftrain;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
