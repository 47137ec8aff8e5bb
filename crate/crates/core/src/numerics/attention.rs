//! Fused multi-head attention kernel used by [`Tape::attention`](super::Tape::attention).
//!
//! Scores are only evaluated for the keys a [`KeySelector`] exposes, so the
//! cost of a sparse pattern is proportional to the number of allowed pairs.

use crate::error::{Error, Result};

/// A block of query rows attending to a block of key rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnSegment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

impl AttnSegment {
    /// Self-attention over one packed sequence.
    pub fn square(start: usize, len: usize) -> Self {
        AttnSegment {
            q_start: start,
            q_len: len,
            k_start: start,
            k_len: len,
        }
    }
}

/// Lists, in increasing order, the key positions visible to a query.
pub trait KeySelector {
    fn keys(&self, query: usize, q_len: usize, k_len: usize, out: &mut Vec<usize>);
}

/// Every key is visible.
#[derive(Debug, Clone, Copy, Default)]
pub struct AllKeys;

impl KeySelector for AllKeys {
    fn keys(&self, _query: usize, _q_len: usize, k_len: usize, out: &mut Vec<usize>) {
        out.extend(0..k_len);
    }
}

/// Future-masked keys. The queries are the last `q_len` positions of the key
/// block, so query `i` sits at key position `k_len - q_len + i`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CausalKeys;

impl KeySelector for CausalKeys {
    fn keys(&self, query: usize, q_len: usize, k_len: usize, out: &mut Vec<usize>) {
        let pos = (k_len + query).saturating_sub(q_len);
        out.extend(0..=pos.min(k_len.saturating_sub(1)));
    }
}

#[derive(Debug)]
struct QueryEntry {
    row: usize,
    key_start: usize,
    key_end: usize,
}

/// Softmax weights kept for the backward pass.
#[derive(Debug)]
pub struct SavedAttention {
    heads: usize,
    entries: Vec<QueryEntry>,
    /// Absolute key rows, concatenated per query entry.
    keys: Vec<usize>,
    /// `[entry][head][key]`, keyed by `heads * key_start`.
    probs: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    nq: usize,
    nk: usize,
    d: usize,
    heads: usize,
    segments: &[AttnSegment],
    selector: &dyn KeySelector,
    keep: bool,
) -> Result<(Vec<f64>, Option<SavedAttention>)> {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; nq * d];
    let mut entries = Vec::new();
    let mut keys_all = Vec::new();
    let mut probs_all = Vec::new();
    let mut local = Vec::new();
    let mut scores = Vec::new();

    for seg in segments {
        if seg.q_start + seg.q_len > nq || seg.k_start + seg.k_len > nk {
            return Err(Error::Contract(format!(
                "attention segment {seg:?} outside {nq} query / {nk} key rows"
            )));
        }
        for i in 0..seg.q_len {
            local.clear();
            selector.keys(i, seg.q_len, seg.k_len, &mut local);
            if local.is_empty() {
                return Err(Error::Contract(format!(
                    "query {i} of segment {seg:?} has no visible keys"
                )));
            }
            if local.iter().any(|&j| j >= seg.k_len) {
                return Err(Error::Contract("key selector returned out-of-range key".into()));
            }
            let row = seg.q_start + i;
            let key_start = keys_all.len();
            keys_all.extend(local.iter().map(|&j| seg.k_start + j));
            let key_end = keys_all.len();
            let ks = &keys_all[key_start..key_end];
            for h in 0..heads {
                let qh = &q[row * d + h * dh..row * d + (h + 1) * dh];
                scores.clear();
                let mut max = f64::NEG_INFINITY;
                for &kr in ks {
                    let kh = &k[kr * d + h * dh..kr * d + (h + 1) * dh];
                    let s = scale * qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f64>();
                    max = max.max(s);
                    scores.push(s);
                }
                let mut z = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                let o = &mut out[row * d + h * dh..row * d + (h + 1) * dh];
                for (p, &kr) in scores.iter_mut().zip(ks) {
                    *p /= z;
                    let vh = &v[kr * d + h * dh..kr * d + (h + 1) * dh];
                    for (oi, vi) in o.iter_mut().zip(vh) {
                        *oi += *p * vi;
                    }
                }
                if keep {
                    probs_all.extend_from_slice(&scores);
                }
            }
            if keep {
                entries.push(QueryEntry {
                    row,
                    key_start,
                    key_end,
                });
            }
        }
        if !keep {
            keys_all.clear();
        }
    }
    let saved = keep.then_some(SavedAttention {
        heads,
        entries,
        keys: keys_all,
        probs: probs_all,
    });
    Ok((out, saved))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    d: usize,
    g: &[f64],
    saved: &SavedAttention,
    gq: &mut [f64],
    gk: &mut [f64],
    gv: &mut [f64],
) {
    let heads = saved.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dp = Vec::new();
    for e in &saved.entries {
        let ks = &saved.keys[e.key_start..e.key_end];
        let n = ks.len();
        for h in 0..heads {
            let p = &saved.probs[heads * e.key_start + h * n..heads * e.key_start + (h + 1) * n];
            let go = &g[e.row * d + h * dh..e.row * d + (h + 1) * dh];
            dp.clear();
            let mut dot = 0.0;
            for (&kr, &pj) in ks.iter().zip(p) {
                let vh = &v[kr * d + h * dh..kr * d + (h + 1) * dh];
                let d_j: f64 = go.iter().zip(vh).map(|(a, b)| a * b).sum();
                dot += pj * d_j;
                dp.push(d_j);
                let gvh = &mut gv[kr * d + h * dh..kr * d + (h + 1) * dh];
                for (gvi, goi) in gvh.iter_mut().zip(go) {
                    *gvi += pj * goi;
                }
            }
            let qh = &q[e.row * d + h * dh..e.row * d + (h + 1) * dh];
            for ((&kr, &pj), &d_j) in ks.iter().zip(p).zip(&dp) {
                let ds = pj * (d_j - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                let kh = &k[kr * d + h * dh..kr * d + (h + 1) * dh];
                let gqh = &mut gq[e.row * d + h * dh..e.row * d + (h + 1) * dh];
                for (a, b) in gqh.iter_mut().zip(kh) {
                    *a += ds * b;
                }
                let gkh = &mut gk[kr * d + h * dh..kr * d + (h + 1) * dh];
                for (a, b) in gkh.iter_mut().zip(qh) {
                    *a += ds * b;
                }
            }
        }
    }
}
