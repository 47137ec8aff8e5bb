//! BLEU scoring and the round-trip BT-BLEU used for self-training filters.

mod bleu;

pub use bleu::{
    corpus_bleu, corpus_bleu_ids, corpus_bleu_tokens, sentence_bleu, sentence_bleu_ids, sentence_bleu_tokens, stats_score,
    tokenize,
    BleuScore, BleuStats, BleuTokenizer, MAX_ORDER,
};

use crate::error::{Result, Stage};
use crate::text::Sentence;

/// Anything that maps sentences of one language to another.
pub trait Translator {
    fn translate(&self, sentences: &[Sentence]) -> Result<Vec<Sentence>>;
}

impl<F> Translator for F
where
    F: Fn(&[Sentence]) -> Result<Vec<Sentence>>,
{
    fn translate(&self, sentences: &[Sentence]) -> Result<Vec<Sentence>> {
        self(sentences)
    }
}

/// Sentence BLEU of `x` against its round trip `bwd(fwd(x))`.
pub fn bt_bleu(x: &Sentence, fwd: &dyn Translator, bwd: &dyn Translator) -> Result<f64> {
    Ok(bt_bleu_batch(std::slice::from_ref(x), fwd, bwd)?[0])
}

pub fn bt_bleu_batch(xs: &[Sentence], fwd: &dyn Translator, bwd: &dyn Translator) -> Result<Vec<f64>> {
    let there = fwd.translate(xs).map_err(|e| e.at_stage(Stage::Forward))?;
    let back = bwd.translate(&there).map_err(|e| e.at_stage(Stage::Backward))?;
    Ok(xs
        .iter()
        .zip(&back)
        .map(|(x, b)| sentence_bleu_tokens(b, x))
        .collect())
}
