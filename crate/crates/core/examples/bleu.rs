//! Corpus BLEU with the 13a tokenizer and the per-order details.

use nmtkit::metrics::{corpus_bleu, BleuTokenizer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let hyps = ["The cat sat on the mat.", "It was raining, again."];
    let refs = ["The cat sat on a mat.", "It was raining again."];
    let s = corpus_bleu(&hyps, &refs, BleuTokenizer::Thirteen)?;
    println!("BLEU {:.2}  precisions {:.1?}  bp {:.3}  ratio {}/{}", s.bleu, s.precisions, s.bp, s.hyp_len, s.ref_len);
    let chars = corpus_bleu(&["今天天气很好"], &["今天天气不错"], BleuTokenizer::Char)?;
    println!("character BLEU {:.2}", chars.bleu);
    Ok(())
}
