//! Transformer encoder-decoder, PLM fusion, sparse attention and decoding.

pub mod checkpoint;
pub mod config;
pub mod context;
pub mod decode;
pub mod dropnet;
pub mod pattern;
pub mod transformer;

pub use checkpoint::Checkpoint;
pub use config::{FusionMode, ModelConfig, PlmConfig};
pub use context::DocumentCache;
pub use decode::{average_distributions, joint_decode, log_softmax, DecodeOptions, DecodeStats, Hypothesis, Member};
pub use dropnet::{drop_net_sample, Branch};
pub use pattern::{dense_attention, dense_attention_on, sparse_attention, AttentionPattern};
pub use transformer::{sinusoid_table, uniform_langs, Forward, Graph, Model, Packed, PlmCtx};

#[cfg(test)]
mod tests;
