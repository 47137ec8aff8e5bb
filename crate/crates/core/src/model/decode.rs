//! Incremental greedy/beam decoding with per-step probability averaging
//! across one or more member models.
//!
//! A single member is ordinary decoding; several members on the same
//! source give checkpoint ensembling; members reading different sources
//! (e.g. a sentence and its reference-language translation) give the
//! agreement decoder.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::dropnet::Branch;
use crate::model::transformer::{uniform_langs, with_eos, Forward, Graph, Model, Packed};
use crate::numerics::{AllKeys, AttnSegment, Tensor, Var};
use crate::text::vocab::EOS;

/// Sources decoded together; bounds tape memory.
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub beam: usize,
    /// Most tokens generated per hypothesis, EOS included.
    pub max_len: usize,
}

impl DecodeOptions {
    pub fn greedy(max_len: usize) -> Self {
        DecodeOptions { beam: 1, max_len }
    }

    pub fn beam(beam: usize, max_len: usize) -> Self {
        DecodeOptions { beam, max_len }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Generated tokens without the final EOS.
    pub tokens: Vec<usize>,
    pub logprob: f64,
    /// Log-probability of every generated token, EOS included.
    pub step_logprobs: Vec<f64>,
    /// Whether the hypothesis ended with EOS rather than hitting `max_len`.
    pub finished: bool,
}

impl Hypothesis {
    /// Log-probability divided by the number of generated tokens.
    pub fn normalized(&self) -> f64 {
        self.logprob / self.step_logprobs.len().max(1) as f64
    }
}

/// One model and the inputs it reads.
#[derive(Clone, Copy)]
pub struct Member<'a> {
    pub model: &'a Model,
    pub sources: &'a [Vec<usize>],
    pub src_lang: &'a str,
    /// Precomputed PLM context per source; computed from the source ids
    /// when absent and the model needs it.
    pub plm: Option<&'a [Arc<Tensor>]>,
}

impl<'a> Member<'a> {
    pub fn new(model: &'a Model, sources: &'a [Vec<usize>], src_lang: &'a str) -> Self {
        Member { model, sources, src_lang, plm: None }
    }
}

/// Bookkeeping returned with the hypotheses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeStats {
    pub steps: usize,
    /// Largest `|Σ p - 1|` of any averaged step distribution.
    pub max_normalization_error: f64,
}

/// Element-wise mean of probability vectors.
pub fn average_distributions(dists: &[Vec<f64>]) -> Vec<f64> {
    let n = dists.len() as f64;
    let mut out = vec![0.0; dists.first().map_or(0, Vec::len)];
    for d in dists {
        for (o, &p) in out.iter_mut().zip(d) {
            *o += p;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Log-softmax of one row.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|&x| (x - m).exp()).sum();
    let l = m + s.ln();
    z.iter().map(|&x| x - l).collect()
}

struct Cache {
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

struct Hyp {
    source: usize,
    tokens: Vec<usize>,
    logprob: f64,
    steps: Vec<f64>,
    caches: Vec<Cache>,
}

struct MemberState<'a> {
    model: &'a Model,
    g: Graph<'a>,
    base: usize,
    enc_pack: Packed,
    cross_k: Vec<Var>,
    cross_v: Vec<Var>,
    plm: Option<(Packed, Vec<Var>, Vec<Var>)>,
    tgt_lang: usize,
    tag: usize,
}

impl<'a> MemberState<'a> {
    fn new(m: &Member<'a>, chunk: std::ops::Range<usize>, tgt_lang: &str) -> Result<Self> {
        let model = m.model;
        let cfg = &model.config;
        let mut g = Graph::inference(model);
        g.bind_all()?;
        let src = &m.sources[chunk.clone()];
        let enc_in: Vec<Vec<usize>> = src.iter().map(|s| with_eos(s)).collect();
        let sl = cfg.lang_index(m.src_lang)?;
        let cached = m.plm.map(|p| &p[chunk.clone()]);
        let plm_ids = if cached.is_none() { model.plm_ids_from_source(src)? } else { Vec::new() };
        let ctx = model.plm_context(&mut g, &plm_ids, cached)?;
        let mut fwd = Forward::inference();
        let (enc, enc_pack) = model.encode(&mut g, &enc_in, &uniform_langs(&enc_in, sl), false, ctx.as_ref(), &mut fwd)?;
        let mut cross_k = Vec::new();
        let mut cross_v = Vec::new();
        let mut plm_k = Vec::new();
        let mut plm_v = Vec::new();
        for l in 0..cfg.layers {
            let p = format!("dec.layers.{l}");
            cross_k.push(g.linear(&format!("{p}.cross_attn.k"), enc)?);
            cross_v.push(g.linear(&format!("{p}.cross_attn.v"), enc)?);
            if let (true, Some(ctx)) = (cfg.fusion.decoder(), &ctx) {
                plm_k.push(g.linear(&format!("{p}.plm_attn.k"), ctx.h)?);
                plm_v.push(g.linear(&format!("{p}.plm_attn.v"), ctx.h)?);
            }
        }
        let plm = match (cfg.fusion.decoder(), ctx) {
            (true, Some(ctx)) => Some((ctx.pack, plm_k, plm_v)),
            _ => None,
        };
        let base = g.tape.len();
        Ok(MemberState {
            model,
            g,
            base,
            enc_pack,
            cross_k,
            cross_v,
            plm,
            tgt_lang: cfg.lang_index(tgt_lang)?,
            tag: cfg.lang_tag_id(tgt_lang)?,
        })
    }

    fn empty_cache(&self) -> Cache {
        let l = self.model.config.layers;
        Cache { k: vec![Vec::new(); l], v: vec![Vec::new(); l] }
    }

    /// Next-token log-probabilities for every live hypothesis; appends this
    /// step's keys and values to the member's caches.
    fn step(&mut self, member: usize, hyps: &mut [Hyp]) -> Result<Vec<Vec<f64>>> {
        let cfg = &self.model.config;
        let (d, heads) = (cfg.width, cfg.heads);
        let g = &mut self.g;
        g.tape.truncate(self.base);
        let ids: Vec<usize> = hyps.iter().map(|h| h.tokens.last().copied().unwrap_or(self.tag)).collect();
        let pos: Vec<usize> = hyps.iter().map(|h| h.tokens.len()).collect();
        let langs = vec![self.tgt_lang; hyps.len()];
        let mut x = self.model.embed_rows(g, &ids, &pos, &langs, d)?;
        let cross: Vec<AttnSegment> = hyps
            .iter()
            .enumerate()
            .map(|(r, h)| AttnSegment {
                q_start: r,
                q_len: 1,
                k_start: self.enc_pack.offsets[h.source],
                k_len: self.enc_pack.lens[h.source],
            })
            .collect();
        let plm_segs: Option<Vec<AttnSegment>> = self.plm.as_ref().map(|(pack, _, _)| {
            hyps.iter()
                .enumerate()
                .map(|(r, h)| AttnSegment {
                    q_start: r,
                    q_len: 1,
                    k_start: pack.offsets[h.source],
                    k_len: pack.lens[h.source],
                })
                .collect()
        });
        for l in 0..cfg.layers {
            let p = format!("dec.layers.{l}");
            let a = g.layer_norm(&format!("{p}.ln1"), x)?;
            let q = g.linear(&format!("{p}.self_attn.q"), a)?;
            let k = g.linear(&format!("{p}.self_attn.k"), a)?;
            let v = g.linear(&format!("{p}.self_attn.v"), a)?;
            let (kv, vv) = (g.tape.value(k), g.tape.value(v));
            let mut kk = Vec::new();
            let mut vk = Vec::new();
            let mut segs = Vec::with_capacity(hyps.len());
            for (r, h) in hyps.iter_mut().enumerate() {
                let c = &mut h.caches[member];
                c.k[l].extend_from_slice(&kv[r * d..(r + 1) * d]);
                c.v[l].extend_from_slice(&vv[r * d..(r + 1) * d]);
                segs.push(AttnSegment {
                    q_start: r,
                    q_len: 1,
                    k_start: kk.len() / d,
                    k_len: c.k[l].len() / d,
                });
                kk.extend_from_slice(&c.k[l]);
                vk.extend_from_slice(&c.v[l]);
            }
            let rows = kk.len() / d;
            let kc = g.tape.constant_owned(vec![rows, d], kk)?;
            let vc = g.tape.constant_owned(vec![rows, d], vk)?;
            let att = g.tape.attention(q, kc, vc, heads, &segs, &AllKeys)?;
            let s = g.linear(&format!("{p}.self_attn.o"), att)?;
            x = g.tape.add(x, s)?;

            let a = g.layer_norm(&format!("{p}.ln2"), x)?;
            let q = g.linear(&format!("{p}.cross_attn.q"), a)?;
            let att = g.tape.attention(q, self.cross_k[l], self.cross_v[l], heads, &cross, &AllKeys)?;
            let c = g.linear(&format!("{p}.cross_attn.o"), att)?;
            let y = match (&self.plm, &plm_segs) {
                (Some((_, pk, pv)), Some(ps)) => {
                    let q = g.linear(&format!("{p}.plm_attn.q"), a)?;
                    let att = g.tape.attention(q, pk[l], pv[l], heads, ps, &AllKeys)?;
                    let pc = g.linear(&format!("{p}.plm_attn.o"), att)?;
                    g.fuse(c, Some(pc), Branch::BothAveraged)?
                }
                _ => c,
            };
            x = g.tape.add(x, y)?;
            let a = g.layer_norm(&format!("{p}.ln3"), x)?;
            let f = g.ffn(&format!("{p}.ffn"), a)?;
            x = g.tape.add(x, f)?;
        }
        let h = g.layer_norm("dec.ln", x)?;
        let z = self.model.logits(g, h)?;
        let vsz = cfg.vocab_size;
        Ok(g.tape.value(z).chunks(vsz).map(log_softmax).collect())
    }
}

/// Decodes with per-step probability averaging over `members`; returns an
/// n-best list (best first, at most `beam` entries) per source.
pub fn joint_decode(members: &[Member], tgt_lang: &str, opts: DecodeOptions) -> Result<(Vec<Vec<Hypothesis>>, DecodeStats)> {
    let first = members
        .first()
        .ok_or_else(|| Error::Config("joint decoding needs at least one member".into()))?;
    if opts.max_len == 0 {
        return Err(Error::Input("max_len = 0 leaves no room for output".into()));
    }
    if opts.beam == 0 {
        return Err(Error::Config("beam must be >= 1".into()));
    }
    let n = first.sources.len();
    for m in members {
        if m.model.config.vocab_size != first.model.config.vocab_size {
            return Err(Error::Config(format!(
                "members disagree on vocabulary size: {} vs {}",
                m.model.config.vocab_size, first.model.config.vocab_size
            )));
        }
        if m.sources.len() != n {
            return Err(Error::Input("members must read the same number of sources".into()));
        }
        if m.plm.is_some_and(|p| p.len() != n) {
            return Err(Error::Input("PLM context count differs from source count".into()));
        }
    }
    let mut out = Vec::with_capacity(n);
    let mut stats = DecodeStats::default();
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let (hyps, st) = decode_chunk(members, start..end, tgt_lang, opts)?;
        out.extend(hyps);
        stats.steps = stats.steps.max(st.steps);
        stats.max_normalization_error = stats.max_normalization_error.max(st.max_normalization_error);
        start = end;
    }
    Ok((out, stats))
}

fn decode_chunk(
    members: &[Member],
    chunk: std::ops::Range<usize>,
    tgt_lang: &str,
    opts: DecodeOptions,
) -> Result<(Vec<Vec<Hypothesis>>, DecodeStats)> {
    let mut states = members
        .iter()
        .map(|m| MemberState::new(m, chunk.clone(), tgt_lang))
        .collect::<Result<Vec<_>>>()?;
    let n = chunk.len();
    let beam = opts.beam;
    let mut live: Vec<Hyp> = (0..n)
        .map(|s| Hyp {
            source: s,
            tokens: Vec::new(),
            logprob: 0.0,
            steps: Vec::new(),
            caches: states.iter().map(MemberState::empty_cache).collect(),
        })
        .collect();
    let mut finished: Vec<Vec<Hypothesis>> = vec![Vec::new(); n];
    let mut stats = DecodeStats::default();
    for _ in 0..opts.max_len {
        if live.is_empty() {
            break;
        }
        stats.steps += 1;
        let mut per_member = Vec::with_capacity(states.len());
        for (mi, st) in states.iter_mut().enumerate() {
            per_member.push(st.step(mi, &mut live)?);
        }
        let mut logp = Vec::with_capacity(live.len());
        for r in 0..live.len() {
            let dists: Vec<Vec<f64>> = per_member.iter().map(|m| m[r].iter().map(|&x| x.exp()).collect()).collect();
            let avg = average_distributions(&dists);
            let err = (avg.iter().sum::<f64>() - 1.0).abs();
            stats.max_normalization_error = stats.max_normalization_error.max(err);
            logp.push(avg.into_iter().map(f64::ln).collect::<Vec<f64>>());
        }
        live = expand(live, &logp, beam, &mut finished);
    }
    for h in live {
        finished[h.source].push(Hypothesis {
            tokens: h.tokens,
            logprob: h.logprob,
            step_logprobs: h.steps,
            finished: false,
        });
    }
    for f in finished.iter_mut() {
        f.sort_by(|a, b| b.normalized().total_cmp(&a.normalized()));
        f.truncate(beam);
    }
    Ok((finished, stats))
}

/// One beam step. Candidates are ranked by score, then parent, then token
/// id; EOS among the top `beam` completes a hypothesis.
fn expand(live: Vec<Hyp>, logp: &[Vec<f64>], beam: usize, finished: &mut [Vec<Hypothesis>]) -> Vec<Hyp> {
    let mut next_live: Vec<(usize, usize, f64)> = Vec::new();
    let mut start = 0;
    while start < live.len() {
        let src = live[start].source;
        let mut end = start;
        while end < live.len() && live[end].source == src {
            end += 1;
        }
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for r in start..end {
            let row = &logp[r];
            let mut idx: Vec<usize> = (0..row.len()).collect();
            let keep = (2 * beam).min(row.len());
            let cmp = |a: &usize, b: &usize| row[*b].total_cmp(&row[*a]).then(a.cmp(b));
            if keep < idx.len() {
                idx.select_nth_unstable_by(keep - 1, cmp);
                idx.truncate(keep);
            }
            for t in idx {
                cands.push((live[r].logprob + row[t], r, t));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut taken = 0;
        for (rank, &(score, r, t)) in cands.iter().enumerate() {
            if taken == beam {
                break;
            }
            if t == EOS {
                if rank < beam {
                    let h = &live[r];
                    let mut steps = h.steps.clone();
                    steps.push(logp[r][t]);
                    finished[src].push(Hypothesis {
                        tokens: h.tokens.clone(),
                        logprob: score,
                        step_logprobs: steps,
                        finished: true,
                    });
                }
            } else {
                next_live.push((r, t, score));
                taken += 1;
            }
        }
        if finished[src].len() >= beam {
            next_live.retain(|&(r, _, _)| live[r].source != src);
        }
        start = end;
    }
    let mut uses = vec![0usize; live.len()];
    for &(r, _, _) in &next_live {
        uses[r] += 1;
    }
    let mut live: Vec<Option<Hyp>> = live.into_iter().map(Some).collect();
    next_live
        .into_iter()
        .map(|(r, t, score)| {
            uses[r] -= 1;
            let step = logp[r][t];
            let mut h = if uses[r] == 0 {
                live[r].take().expect("parent used once more")
            } else {
                let p = live[r].as_ref().expect("parent alive");
                Hyp {
                    source: p.source,
                    tokens: p.tokens.clone(),
                    logprob: p.logprob,
                    steps: p.steps.clone(),
                    caches: p
                        .caches
                        .iter()
                        .map(|c| Cache { k: c.k.clone(), v: c.v.clone() })
                        .collect(),
                }
            };
            h.tokens.push(t);
            h.steps.push(step);
            h.logprob = score;
            h
        })
        .collect()
}

impl Model {
    /// n-best translations of each source.
    pub fn translate(
        &self,
        sources: &[Vec<usize>],
        src_lang: &str,
        tgt_lang: &str,
        opts: DecodeOptions,
    ) -> Result<Vec<Vec<Hypothesis>>> {
        Ok(joint_decode(&[Member::new(self, sources, src_lang)], tgt_lang, opts)?.0)
    }

    /// Best translation token ids of each source.
    pub fn translate_best(
        &self,
        sources: &[Vec<usize>],
        src_lang: &str,
        tgt_lang: &str,
        opts: DecodeOptions,
    ) -> Result<Vec<Vec<usize>>> {
        Ok(self
            .translate(sources, src_lang, tgt_lang, opts)?
            .into_iter()
            .map(|mut n| n.swap_remove(0).tokens)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn root() -> Hyp {
        Hyp { source: 0, tokens: Vec::new(), logprob: 0.0, steps: Vec::new(), caches: Vec::new() }
    }

    #[test]
    fn greedy_tie_goes_to_lowest_id() {
        let avg = average_distributions(&[vec![0.1, 0.3, 0.0, 0.6], vec![0.1, 0.5, 0.0, 0.2]]);
        // Tokens 1 and 3 tie at 0.4.
        let logp = vec![avg.iter().map(|p| p.ln()).collect::<Vec<_>>()];
        let mut finished = vec![Vec::new()];
        let next = expand(vec![root()], &logp, 1, &mut finished);
        assert_eq!(next.len(), 1);
        assert_eq!(next[0].tokens, vec![1]);
    }

    #[test]
    fn eos_in_top_beam_finishes() {
        let logp = vec![log_softmax(&[0.0, 0.0, 5.0, 1.0])];
        let mut finished = vec![Vec::new()];
        let next = expand(vec![root()], &logp, 2, &mut finished);
        assert_eq!(finished[0].len(), 1);
        assert!(finished[0][0].finished && finished[0][0].tokens.is_empty());
        assert_eq!(next.iter().map(|h| h.tokens[0]).collect::<Vec<_>>(), vec![3, 0]);
    }
}
