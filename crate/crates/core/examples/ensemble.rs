//! Decode with two models at once by averaging their next-token
//! distributions, then compare against each model alone.

use nmtkit::model::{joint_decode, DecodeOptions, Member, Model, ModelConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig::small(30, &["de", "en"]);
    let a = Model::new(cfg.clone(), 1)?;
    let b = Model::new(cfg, 2)?;
    let src = vec![vec![8, 9, 10], vec![11, 12, 13, 14]];
    let opts = DecodeOptions::beam(4, 10);
    let (hyps, stats) = joint_decode(&[Member::new(&a, &src, "de"), Member::new(&b, &src, "de")], "en", opts)?;
    for (i, nbest) in hyps.iter().enumerate() {
        println!("input {i}: ensemble {:?} ({:.3})", nbest[0].tokens, nbest[0].logprob);
        println!("  a alone {:?}", a.translate_best(&src[i..=i], "de", "en", opts)?[0]);
        println!("  b alone {:?}", b.translate_best(&src[i..=i], "de", "en", opts)?[0]);
    }
    println!("{} steps, max normalisation error {:.1e}", stats.steps, stats.max_normalization_error);
    Ok(())
}
