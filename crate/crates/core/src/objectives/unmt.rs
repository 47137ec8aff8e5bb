//! Denoising, back-translation and the reference-agreement objectives.
//!
//! Every objective first builds pseudo-parallel batches with gradient-free
//! decoding, then trains on them with ordinary (or smoothed) cross-entropy.
//! Generated token ids enter the loss only as inputs or targets, so no
//! gradient reaches the generation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{joint_decode, DecodeOptions, Forward, Graph, Member, Model};
use crate::numerics::Var;

/// Source, target and reference language names. Only source and reference
/// share parallel data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageTriple {
    pub source: String,
    pub target: String,
    pub reference: String,
}

impl LanguageTriple {
    pub fn new(source: &str, target: &str, reference: &str) -> Self {
        LanguageTriple { source: source.into(), target: target.into(), reference: reference.into() }
    }

    pub fn all(&self) -> [&str; 3] {
        [&self.source, &self.target, &self.reference]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub word_drop: f64,
    /// Maximum displacement of a token by local shuffling.
    pub shuffle_window: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { word_drop: 0.1, shuffle_window: 3 }
    }
}

/// Drops each token with probability `word_drop` (keeping at least one),
/// then shuffles locally: token `i` is sorted by `i + U[0, k+1)`, which
/// moves no token more than `k` places.
pub fn add_noise<R: Rng + ?Sized>(seq: &[usize], noise: NoiseConfig, rng: &mut R) -> Vec<usize> {
    let mut kept: Vec<usize> = seq.iter().copied().filter(|_| rng.gen::<f64>() >= noise.word_drop).collect();
    if kept.is_empty() && !seq.is_empty() {
        kept.push(seq[rng.gen_range(0..seq.len())]);
    }
    if noise.shuffle_window == 0 {
        return kept;
    }
    let span = noise.shuffle_window as f64 + 1.0;
    let mut keyed: Vec<(f64, usize)> = kept
        .into_iter()
        .enumerate()
        .map(|(i, t)| (i as f64 + rng.gen::<f64>() * span, t))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    keyed.into_iter().map(|(_, t)| t).collect()
}

/// Sentence pairs for one translation direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoBatch {
    pub src: Vec<Vec<usize>>,
    pub tgt: Vec<Vec<usize>>,
    pub src_lang: String,
    pub tgt_lang: String,
    pub smoothing: f64,
}

impl PseudoBatch {
    pub fn new(src: Vec<Vec<usize>>, tgt: Vec<Vec<usize>>, src_lang: &str, tgt_lang: &str, smoothing: f64) -> Self {
        PseudoBatch { src, tgt, src_lang: src_lang.into(), tgt_lang: tgt_lang.into(), smoothing }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Sum of the translation losses of every non-empty batch.
pub fn pseudo_loss(model: &Model, g: &mut Graph, batches: &[PseudoBatch], fwd: &mut Forward) -> Result<Option<Var>> {
    let mut total: Option<Var> = None;
    for b in batches.iter().filter(|b| !b.is_empty()) {
        let l = model.translation_loss(g, &b.src, &b.tgt, &b.src_lang, &b.tgt_lang, None, b.smoothing, fwd)?;
        total = Some(match total {
            None => l,
            Some(t) => g.tape.add(t, l)?,
        });
    }
    Ok(total)
}

/// Best translation of every sentence (inference mode, no gradient).
pub fn generate(model: &Model, src: &[Vec<usize>], src_lang: &str, tgt_lang: &str, opts: DecodeOptions) -> Result<Vec<Vec<usize>>> {
    model.translate_best(src, src_lang, tgt_lang, opts)
}

/// Reconstruct `x` from `noise(x)`.
pub fn dae_batch<R: Rng + ?Sized>(x: &[Vec<usize>], lang: &str, noise: NoiseConfig, rng: &mut R) -> PseudoBatch {
    let noisy = x.iter().map(|s| add_noise(s, noise, rng)).collect();
    PseudoBatch::new(noisy, x.to_vec(), lang, lang, 0.0)
}

/// Back-translation: `backward` turns monolingual `y` into synthetic
/// sources, and the batch trains `x_lang -> y_lang` on `(x~, y)`.
pub fn bt_batch(backward: &Model, y: &[Vec<usize>], y_lang: &str, x_lang: &str, opts: DecodeOptions) -> Result<PseudoBatch> {
    let x = generate(backward, y, y_lang, x_lang, opts)?;
    Ok(PseudoBatch::new(x, y.to_vec(), x_lang, y_lang, 0.0))
}

fn check_parallel(s: &[Vec<usize>], r: &[Vec<usize>]) -> Result<()> {
    if s.len() != r.len() {
        return Err(Error::Input(format!("{} source but {} reference sentences", s.len(), r.len())));
    }
    Ok(())
}

/// Agreed translations `t~_a`: per-step averaged decoding of `s` by the
/// S->T model and of `r` by the R->T model.
pub fn agreed_translations(
    s_to_t: &Model,
    r_to_t: &Model,
    s: &[Vec<usize>],
    r: &[Vec<usize>],
    langs: &LanguageTriple,
    opts: DecodeOptions,
) -> Result<Vec<Vec<usize>>> {
    check_parallel(s, r)?;
    let members = [Member::new(s_to_t, s, &langs.source), Member::new(r_to_t, r, &langs.reference)];
    let (nbest, _) = joint_decode(&members, &langs.target, opts)?;
    Ok(nbest.into_iter().map(|mut n| n.swap_remove(0).tokens).collect())
}

/// RAT: `⟨s, t~_a⟩` for S->T and `⟨r, t~_a⟩` for R->T, with smoothing.
pub fn rat_batches(s: &[Vec<usize>], r: &[Vec<usize>], t_a: &[Vec<usize>], langs: &LanguageTriple, smoothing: f64) -> [PseudoBatch; 2] {
    [
        PseudoBatch::new(s.to_vec(), t_a.to_vec(), &langs.source, &langs.target, smoothing),
        PseudoBatch::new(r.to_vec(), t_a.to_vec(), &langs.reference, &langs.target, smoothing),
    ]
}

/// RABT: `⟨t~_a, s⟩` for T->S and `⟨t~_a, r⟩` for T->R.
pub fn rabt_batches(s: &[Vec<usize>], r: &[Vec<usize>], t_a: &[Vec<usize>], langs: &LanguageTriple) -> [PseudoBatch; 2] {
    [
        PseudoBatch::new(t_a.to_vec(), s.to_vec(), &langs.target, &langs.source, 0.0),
        PseudoBatch::new(t_a.to_vec(), r.to_vec(), &langs.target, &langs.reference, 0.0),
    ]
}

/// XBT pseudo pairs: `⟨t~_s, r⟩` for T->R and `⟨t~_r, s⟩` for T->S.
pub fn xbt_batches(
    s: &[Vec<usize>],
    r: &[Vec<usize>],
    t_s: &[Vec<usize>],
    t_r: &[Vec<usize>],
    langs: &LanguageTriple,
) -> [PseudoBatch; 2] {
    [
        PseudoBatch::new(t_s.to_vec(), r.to_vec(), &langs.target, &langs.reference, 0.0),
        PseudoBatch::new(t_r.to_vec(), s.to_vec(), &langs.target, &langs.source, 0.0),
    ]
}

/// Generates `t~_s` and `t~_r` and builds the XBT batches.
pub fn xbt_generate(
    s_to_t: &Model,
    r_to_t: &Model,
    s: &[Vec<usize>],
    r: &[Vec<usize>],
    langs: &LanguageTriple,
    opts: DecodeOptions,
) -> Result<[PseudoBatch; 2]> {
    check_parallel(s, r)?;
    let t_s = generate(s_to_t, s, &langs.source, &langs.target, opts)?;
    let t_r = generate(r_to_t, r, &langs.reference, &langs.target, opts)?;
    Ok(xbt_batches(s, r, &t_s, &t_r, langs))
}
