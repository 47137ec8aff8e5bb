//! Language-model pretraining objectives on the translation encoder, plus
//! masked-LM training of the fused PLM.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{uniform_langs, Forward, Graph, Model};
use crate::numerics::Var;
use crate::text::vocab::{BOS, CLS, EOS, MASK};

/// A sequence after BERT-style masking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Masked {
    pub input: Vec<usize>,
    /// Positions whose original token must be predicted.
    pub positions: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Each unprotected position is selected with probability `prob`; a
/// selected token becomes MASK (80%), a random id from `random` (10%) or
/// stays unchanged (10%).
pub fn mask_tokens<R: Rng + ?Sized>(
    seq: &[usize],
    prob: f64,
    random: std::ops::Range<usize>,
    protected: &[usize],
    rng: &mut R,
) -> Masked {
    let mut input = seq.to_vec();
    let mut positions = Vec::new();
    let mut targets = Vec::new();
    for (i, tok) in input.iter_mut().enumerate() {
        if protected.contains(&i) || rng.gen::<f64>() >= prob {
            continue;
        }
        positions.push(i);
        targets.push(*tok);
        let r: f64 = rng.gen();
        if r < 0.8 {
            *tok = MASK;
        } else if r < 0.9 && !random.is_empty() {
            *tok = rng.gen_range(random.clone());
        }
    }
    Masked { input, positions, targets }
}

fn check_prob(prob: f64) -> Result<()> {
    if !(0.0..1.0).contains(&prob) {
        return Err(Error::Config(format!("mask probability {prob} outside [0, 1)")));
    }
    Ok(())
}

/// Cross-entropy at the masked rows of an encoder pass, divided by the
/// number of sequences. `None` when nothing was masked.
fn masked_loss(model: &Model, g: &mut Graph, masked: &[Masked], langs: &[Vec<usize>], fwd: &mut Forward) -> Result<Option<Var>> {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut off = 0;
    for m in masked {
        rows.extend(m.positions.iter().map(|p| off + p));
        targets.extend_from_slice(&m.targets);
        off += m.input.len();
    }
    if rows.is_empty() {
        return Ok(None);
    }
    let inputs: Vec<Vec<usize>> = masked.iter().map(|m| m.input.clone()).collect();
    let plm_ids = model.plm_ids_from_source(&inputs)?;
    let ctx = model.plm_context(g, &plm_ids, None)?;
    let (h, _) = model.encode(g, &inputs, langs, false, ctx.as_ref(), fwd)?;
    let h = g.tape.gather_rows(h, &rows)?;
    let z = model.logits(g, h)?;
    let ce = g.tape.cross_entropy(z, &targets, 0.0)?;
    Ok(Some(g.tape.scale(ce, 1.0 / masked.len() as f64)?))
}

/// Masked language modelling of monolingual `batch` in `lang`.
pub fn mlm_loss<R: Rng + ?Sized>(
    model: &Model,
    g: &mut Graph,
    batch: &[Vec<usize>],
    lang: &str,
    prob: f64,
    rng: &mut R,
    fwd: &mut Forward,
) -> Result<Option<Var>> {
    check_prob(prob)?;
    let li = model.config.lang_index(lang)?;
    let random = model.config.first_content_id()..model.config.vocab_size;
    let masked: Vec<Masked> = batch
        .iter()
        .map(|s| mask_tokens(&with_eos(s), prob, random.clone(), &[s.len()], rng))
        .collect();
    let langs = uniform_langs(&masked.iter().map(|m| m.input.clone()).collect::<Vec<_>>(), li);
    masked_loss(model, g, &masked, &langs, fwd)
}

/// Translation language modelling: each parallel pair is concatenated as
/// `a EOS b EOS` and both halves are masked.
#[allow(clippy::too_many_arguments)]
pub fn tlm_loss<R: Rng + ?Sized>(
    model: &Model,
    g: &mut Graph,
    a: &[Vec<usize>],
    b: &[Vec<usize>],
    lang_a: &str,
    lang_b: &str,
    prob: f64,
    rng: &mut R,
    fwd: &mut Forward,
) -> Result<Option<Var>> {
    check_prob(prob)?;
    if a.len() != b.len() || a.is_empty() || a.iter().chain(b).any(Vec::is_empty) {
        return Err(Error::Input("TLM needs a non-empty parallel batch with no empty side".into()));
    }
    let (la, lb) = (model.config.lang_index(lang_a)?, model.config.lang_index(lang_b)?);
    let random = model.config.first_content_id()..model.config.vocab_size;
    let mut masked = Vec::with_capacity(a.len());
    let mut langs = Vec::with_capacity(a.len());
    for (x, y) in a.iter().zip(b) {
        let seq: Vec<usize> = x.iter().chain([&EOS]).chain(y).chain([&EOS]).copied().collect();
        let seps = [x.len(), seq.len() - 1];
        masked.push(mask_tokens(&seq, prob, random.clone(), &seps, rng));
        langs.push((0..seq.len()).map(|i| if i <= x.len() { la } else { lb }).collect());
    }
    masked_loss(model, g, &masked, &langs, fwd)
}

/// Causal language modelling with the encoder under a future mask: the
/// input is `BOS x_1 .. x_{n-1}` and every `x_i` is predicted.
pub fn clm_loss(model: &Model, g: &mut Graph, batch: &[Vec<usize>], lang: &str, fwd: &mut Forward) -> Result<Var> {
    if batch.is_empty() || batch.iter().any(Vec::is_empty) {
        return Err(Error::Input("CLM needs non-empty sentences".into()));
    }
    let li = model.config.lang_index(lang)?;
    let inputs: Vec<Vec<usize>> = batch
        .iter()
        .map(|s| std::iter::once(BOS).chain(s[..s.len() - 1].iter().copied()).collect())
        .collect();
    let targets: Vec<usize> = batch.iter().flatten().copied().collect();
    let plm_ids = model.plm_ids_from_source(batch)?;
    let ctx = model.plm_context(g, &plm_ids, None)?;
    let (h, _) = model.encode(g, &inputs, &uniform_langs(&inputs, li), true, ctx.as_ref(), fwd)?;
    let z = model.logits(g, h)?;
    let ce = g.tape.cross_entropy(z, &targets, 0.0)?;
    g.tape.scale(ce, 1.0 / batch.len() as f64)
}

/// Masked-LM training of the PLM itself on `CLS x` inputs.
pub fn plm_mlm_loss<R: Rng + ?Sized>(model: &Model, g: &mut Graph, batch: &[Vec<usize>], prob: f64, rng: &mut R) -> Result<Option<Var>> {
    check_prob(prob)?;
    let pc = model
        .config
        .plm
        .as_ref()
        .ok_or_else(|| Error::Config("model has no PLM".into()))?;
    let random = model.config.first_content_id().min(pc.vocab_size)..pc.vocab_size;
    let masked: Vec<Masked> = batch
        .iter()
        .map(|s| {
            let seq: Vec<usize> = std::iter::once(CLS).chain(s.iter().copied()).collect();
            mask_tokens(&seq, prob, random.clone(), &[0], rng)
        })
        .collect();
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut off = 0;
    for m in &masked {
        rows.extend(m.positions.iter().map(|p| off + p));
        targets.extend_from_slice(&m.targets);
        off += m.input.len();
    }
    if rows.is_empty() {
        return Ok(None);
    }
    let inputs: Vec<Vec<usize>> = masked.into_iter().map(|m| m.input).collect();
    let ctx = model.plm_forward(g, &inputs, pc.layers)?;
    let h = g.tape.gather_rows(ctx.h, &rows)?;
    let z = model.plm_logits(g, h)?;
    let ce = g.tape.cross_entropy(z, &targets, 0.0)?;
    Ok(Some(g.tape.scale(ce, 1.0 / batch.len() as f64)?))
}

fn with_eos(s: &[usize]) -> Vec<usize> {
    s.iter().copied().chain(std::iter::once(EOS)).collect()
}
