//! Self-training on pseudo-parallel data, with the BT-BLEU collaborative
//! filter that keeps a forward translation only when a backward model
//! which never saw the sentence can reconstruct it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{corpus_bleu_ids, sentence_bleu_ids};
use crate::model::{Checkpoint, DecodeOptions, Model};
use crate::objectives::{finetune, pick, train_step, AdamConfig, FinetuneConfig, Sampler, TrainState};

pub const DEFAULT_GAMMA: f64 = 50.0;

/// Source lengths up to `max_len` (inclusive) not claimed by an earlier
/// bag; `None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthBag {
    pub max_len: Option<usize>,
    pub gamma: f64,
}

/// `[1,10]`, `[11,30]`, `[31,∞)`, all at `gamma`.
pub fn default_bags(gamma: f64) -> Vec<LengthBag> {
    vec![
        LengthBag { max_len: Some(10), gamma },
        LengthBag { max_len: Some(30), gamma },
        LengthBag { max_len: None, gamma },
    ]
}

pub fn validate_bags(bags: &[LengthBag]) -> Result<()> {
    let Some(last) = bags.last() else {
        return Err(Error::Config("at least one length bag required".into()));
    };
    if last.max_len.is_some() {
        return Err(Error::Config("the last length bag must be unbounded".into()));
    }
    let mut prev = 0;
    for b in &bags[..bags.len() - 1] {
        match b.max_len {
            Some(m) if m > prev => prev = m,
            _ => return Err(Error::Config("bag bounds must increase and only the last may be open".into())),
        }
    }
    if let Some(b) = bags.iter().find(|b| b.gamma.is_nan()) {
        return Err(Error::Config(format!("bag threshold {} is not a number", b.gamma)));
    }
    Ok(())
}

/// Index of the bag holding a sentence of `len` tokens.
pub fn assign_length_bag(len: usize, bags: &[LengthBag]) -> usize {
    bags.iter()
        .position(|b| b.max_len.is_none_or(|m| len <= m))
        .unwrap_or(bags.len().saturating_sub(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfstConfig {
    pub bags: Vec<LengthBag>,
    pub seed: u64,
    /// Training of each backward model on its half.
    pub backward: FinetuneConfig,
    pub max_len: usize,
    /// Smallest half that can train a backward model.
    pub min_split: usize,
}

impl CfstConfig {
    pub fn new(gamma: f64, seed: u64) -> Self {
        CfstConfig {
            bags: default_bags(gamma),
            seed,
            backward: FinetuneConfig {
                steps: 200,
                batch_size: 32,
                smoothing: 0.0,
                adam: AdamConfig { lr: 5e-4, warmup: 50, ..Default::default() },
                seed,
            },
            max_len: 40,
            min_split: 1,
        }
    }
}

/// Bookkeeping of one filtering pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfstState {
    /// Indices into the unlabeled set.
    pub split: [Vec<usize>; 2],
    /// Forward translation `f(x)` per sentence.
    pub translations: Vec<Vec<usize>>,
    /// Round-trip reconstruction per sentence.
    pub back: Vec<Vec<usize>>,
    /// Which half's backward model reconstructed each sentence.
    pub back_model: Vec<usize>,
    pub scores: Vec<f64>,
    pub bags: Vec<usize>,
    pub selected: Vec<usize>,
}

impl CfstState {
    /// Sentences whose BT-BLEU exceeds their bag's threshold.
    pub fn select(&self, bags: &[LengthBag]) -> Vec<usize> {
        (0..self.scores.len())
            .filter(|&i| self.scores[i] > bags[self.bags[i].min(bags.len() - 1)].gamma)
            .collect()
    }

    /// Selected pairs `(x, f(x))`.
    pub fn pairs(&self, unlabeled: &[Vec<usize>]) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        (pick(unlabeled, &self.selected), pick(&self.translations, &self.selected))
    }

    /// Disjoint halves covering every sentence, sizes within one, and each
    /// sentence reconstructed by the model trained on the other half.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.translations.len();
        let mut seen = vec![0u8; n];
        for (h, half) in self.split.iter().enumerate() {
            for &i in half {
                seen[i] += 1;
                if self.back_model[i] == h {
                    return Err(Error::Contract(format!("sentence {i} back-translated by the model trained on it")));
                }
            }
        }
        if seen.iter().any(|&c| c != 1) {
            return Err(Error::Contract("split halves overlap or miss sentences".into()));
        }
        if self.split[0].len().abs_diff(self.split[1].len()) > 1 {
            return Err(Error::Contract("split halves differ by more than one".into()));
        }
        Ok(())
    }

    /// Acceptance rate per bag as `(bag, total, kept)`.
    pub fn bag_report(&self, bags: usize) -> Vec<(usize, usize, usize)> {
        let mut out: Vec<(usize, usize, usize)> = (0..bags).map(|b| (b, 0, 0)).collect();
        for &b in &self.bags {
            out[b].1 += 1;
        }
        for &i in &self.selected {
            out[self.bags[i]].2 += 1;
        }
        out
    }
}

/// Seeded shuffle, then halving (the first half takes the odd element).
pub fn split_halves(n: usize, seed: u64) -> [Vec<usize>; 2] {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let second = idx.split_off(n.div_ceil(2));
    [idx, second]
}

/// Collaborative BT-BLEU filtering of `forward`'s translations of
/// `unlabeled`. Both backward models start from `backward` and learn
/// `tgt -> src` on the pseudo pairs of their own half only.
pub fn btbleu_filter(
    forward: &Model,
    backward: &Model,
    unlabeled: &[Vec<usize>],
    src_lang: &str,
    tgt_lang: &str,
    cfg: &CfstConfig,
) -> Result<CfstState> {
    validate_bags(&cfg.bags)?;
    if unlabeled.len() < 2 {
        return Err(Error::Input(format!("need at least 2 unlabeled sentences, got {}", unlabeled.len())));
    }
    let split = split_halves(unlabeled.len(), cfg.seed);
    let smallest = split[1].len();
    if smallest < cfg.min_split.max(1) {
        return Err(Error::Config(format!(
            "split half of {smallest} sentences cannot train a backward model (minimum {})",
            cfg.min_split.max(1)
        )));
    }
    let opts = DecodeOptions::greedy(cfg.max_len);
    let translations = forward.translate_best(unlabeled, src_lang, tgt_lang, opts)?;
    let parent = Checkpoint::new(backward.clone(), cfg.seed);
    let mut back = vec![Vec::new(); unlabeled.len()];
    let mut back_model = vec![0; unlabeled.len()];
    for h in 0..2 {
        let own = &split[h];
        let other = &split[1 - h];
        let (g, _) = finetune(
            &parent,
            &pick(&translations, own),
            &pick(unlabeled, own),
            tgt_lang,
            src_lang,
            &FinetuneConfig { seed: cfg.backward.seed.wrapping_add(h as u64), ..cfg.backward.clone() },
        )?;
        let rec = g.model.translate_best(&pick(&translations, other), tgt_lang, src_lang, opts)?;
        for (&i, r) in other.iter().zip(rec) {
            back[i] = r;
            back_model[i] = h;
        }
    }
    let scores: Vec<f64> = unlabeled.iter().zip(&back).map(|(x, b)| sentence_bleu_ids(b, x)).collect();
    let bags = unlabeled.iter().map(|x| assign_length_bag(x.len(), &cfg.bags)).collect();
    let mut state = CfstState { split, translations, back, back_model, scores, bags, selected: Vec::new() };
    state.selected = state.select(&cfg.bags);
    Ok(state)
}

/// How pseudo pairs are chosen each self-training round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SelectPolicy {
    All,
    /// The best `percent` by length-normalised log-probability.
    TopLogprob { percent: f64 },
    BtBleu(CfstConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainConfig {
    pub rounds: usize,
    /// Updates per round; each alternates pseudo and labeled batches.
    pub steps_per_round: u64,
    pub batch_size: usize,
    pub max_len: usize,
    pub adam: AdamConfig,
    pub smoothing: f64,
    /// Rounds without dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

/// Labeled, unlabeled and dev data for one direction.
pub struct SelfTrainData<'a> {
    pub labeled_src: &'a [Vec<usize>],
    pub labeled_tgt: &'a [Vec<usize>],
    pub unlabeled: &'a [Vec<usize>],
    pub dev: Option<(&'a [Vec<usize>], &'a [Vec<usize>])>,
}

/// Per-round record of a self-training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub selected: usize,
    pub dev_bleu: Option<f64>,
}

/// Translate, select, retrain; repeated for `rounds` or until the dev
/// score stops improving. For the BT-BLEU policy the backward model starts
/// from the current checkpoint in the reverse direction.
pub fn classic_self_train(
    base: &Checkpoint,
    data: &SelfTrainData,
    src_lang: &str,
    tgt_lang: &str,
    policy: &SelectPolicy,
    cfg: &SelfTrainConfig,
) -> Result<(Checkpoint, Vec<RoundReport>)> {
    if data.unlabeled.is_empty() {
        return Err(Error::Input("self-training needs unlabeled sentences".into()));
    }
    if data.labeled_src.len() != data.labeled_tgt.len() {
        return Err(Error::Input("labeled sides differ in length".into()));
    }
    let mut ck = base.clone();
    let mut reports = Vec::new();
    if cfg.rounds == 0 {
        return Ok((ck, reports));
    }
    let opts = DecodeOptions::greedy(cfg.max_len);
    let dev_bleu = |m: &Model| -> Result<Option<f64>> {
        match data.dev {
            Some((s, t)) => Ok(Some(corpus_bleu_ids(&m.translate_best(s, src_lang, tgt_lang, opts)?, t)?.bleu)),
            None => Ok(None),
        }
    };
    let mut best = dev_bleu(&ck.model)?;
    let mut best_ck = ck.clone();
    let mut stale = 0;
    let mut state = TrainState::new(cfg.adam, cfg.seed);
    for round in 0..cfg.rounds {
        let (qs, qt) = select_pseudo(&ck.model, data.unlabeled, src_lang, tgt_lang, policy, cfg, round)?;
        let mut pseudo = if qs.is_empty() { None } else { Some(Sampler::new(qs.len(), cfg.batch_size)?) };
        let mut labeled = if data.labeled_src.is_empty() {
            None
        } else {
            Some(Sampler::new(data.labeled_src.len(), cfg.batch_size)?)
        };
        for step in 0..cfg.steps_per_round {
            let use_pseudo = step % 2 == 0 || labeled.is_none();
            let (src, tgt, sampler) = if use_pseudo { (&qs, &qt, &mut pseudo) } else { (&data.labeled_src.to_vec(), &data.labeled_tgt.to_vec(), &mut labeled) };
            let Some(sampler) = sampler.as_mut() else { continue };
            let idx = sampler.next(&mut state.rng);
            let (a, b) = (pick(src, &idx), pick(tgt, &idx));
            let name = if use_pseudo { "pseudo" } else { "labeled" };
            train_step(&mut ck.model, &mut state, name, |m, g, fwd, _| {
                m.translation_loss(g, &a, &b, src_lang, tgt_lang, None, cfg.smoothing, fwd).map(Some)
            })?;
            ck.step += 1;
        }
        let score = dev_bleu(&ck.model)?;
        reports.push(RoundReport { round, selected: qs.len(), dev_bleu: score });
        match (score, best) {
            (Some(s), Some(b)) if s <= b => {
                stale += 1;
                if stale >= cfg.patience.max(1) {
                    return Ok((best_ck, reports));
                }
            }
            (Some(s), _) => {
                best = Some(s);
                best_ck = ck.clone();
                stale = 0;
            }
            (None, _) => best_ck = ck.clone(),
        }
    }
    Ok((best_ck, reports))
}

/// The pseudo pairs one round trains on.
pub fn select_pseudo(
    model: &Model,
    unlabeled: &[Vec<usize>],
    src_lang: &str,
    tgt_lang: &str,
    policy: &SelectPolicy,
    cfg: &SelfTrainConfig,
    round: usize,
) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    let opts = DecodeOptions::greedy(cfg.max_len);
    match policy {
        SelectPolicy::All => Ok((unlabeled.to_vec(), model.translate_best(unlabeled, src_lang, tgt_lang, opts)?)),
        SelectPolicy::TopLogprob { percent } => {
            if !(*percent > 0.0 && *percent <= 100.0) {
                return Err(Error::Config(format!("top percent {percent} outside (0, 100]")));
            }
            let hyps = model.translate(unlabeled, src_lang, tgt_lang, opts)?;
            let mut ranked: Vec<(f64, usize)> = hyps.iter().enumerate().map(|(i, h)| (h[0].normalized(), i)).collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let keep = ((unlabeled.len() as f64 * percent / 100.0).ceil() as usize).min(unlabeled.len());
            let mut idx: Vec<usize> = ranked[..keep].iter().map(|&(_, i)| i).collect();
            idx.sort_unstable();
            let tgt = idx.iter().map(|&i| hyps[i][0].tokens.clone()).collect();
            Ok((pick(unlabeled, &idx), tgt))
        }
        SelectPolicy::BtBleu(c) => {
            // A fresh split per round.
            let c = CfstConfig { seed: c.seed.wrapping_add(round as u64), ..c.clone() };
            let state = btbleu_filter(model, model, unlabeled, src_lang, tgt_lang, &c)?;
            Ok(state.pairs(unlabeled))
        }
    }
}

#[cfg(test)]
mod tests;
