//! Seeded synthetic data for tests, examples and toy experiments.

mod cipher;
mod paragraphs;

pub use cipher::{CipherSpec, CipherWorld};
pub use paragraphs::{merged_paragraphs, SynthParagraph};
