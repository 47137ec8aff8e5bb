//! Local attention patterns for long inputs.
//!
//! Query `i` sees key `j` when `|i - j| <= w/2` and `(i - j) mod d == 0`;
//! global positions see every key and are seen by every query.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AttnSegment, KeySelector, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttentionPattern {
    #[default]
    Dense,
    Sliding {
        window: usize,
    },
    Dilated {
        window: usize,
        dilation: usize,
    },
    GlobalSliding {
        window: usize,
        global: Vec<usize>,
    },
}

impl AttentionPattern {
    pub fn validate(&self) -> Result<()> {
        let (w, d) = self.window_dilation();
        if w == Some(0) {
            return Err(Error::Config("attention window must be >= 1".into()));
        }
        if d == 0 {
            return Err(Error::Config("attention dilation must be >= 1".into()));
        }
        Ok(())
    }

    /// Checks that global positions fall inside a sequence of `len` tokens.
    pub fn validate_for(&self, len: usize) -> Result<()> {
        self.validate()?;
        if let Some(&g) = self.globals().iter().find(|&&g| g >= len) {
            return Err(Error::Config(format!("global position {g} outside a {len}-token sequence")));
        }
        Ok(())
    }

    fn window_dilation(&self) -> (Option<usize>, usize) {
        match self {
            AttentionPattern::Dense => (None, 1),
            AttentionPattern::Sliding { window } => (Some(*window), 1),
            AttentionPattern::Dilated { window, dilation } => (Some(*window), *dilation),
            AttentionPattern::GlobalSliding { window, .. } => (Some(*window), 1),
        }
    }

    fn globals(&self) -> &[usize] {
        match self {
            AttentionPattern::GlobalSliding { global, .. } => global,
            _ => &[],
        }
    }

    /// Whether query `i` may attend to key `j`.
    pub fn allows(&self, i: usize, j: usize) -> bool {
        let g = self.globals();
        if g.contains(&i) || g.contains(&j) {
            return true;
        }
        let (w, d) = self.window_dilation();
        let Some(w) = w else { return true };
        let gap = i.abs_diff(j);
        2 * gap <= w && gap % d == 0
    }

    /// `[len][len]` boolean mask, row = query.
    pub fn mask(&self, len: usize) -> Vec<Vec<bool>> {
        (0..len).map(|i| (0..len).map(|j| self.allows(i, j)).collect()).collect()
    }

    /// Number of allowed (query, key) pairs.
    pub fn allowed_pairs(&self, len: usize) -> usize {
        let mut keys = Vec::new();
        (0..len)
            .map(|i| {
                keys.clear();
                self.keys(i, len, len, &mut keys);
                keys.len()
            })
            .sum()
    }
}

impl KeySelector for AttentionPattern {
    fn keys(&self, query: usize, _q_len: usize, k_len: usize, out: &mut Vec<usize>) {
        let g = self.globals();
        let (w, d) = self.window_dilation();
        let Some(w) = w.filter(|_| !g.contains(&query)) else {
            out.extend(0..k_len);
            return;
        };
        let reach = w / 2;
        let lo = query.saturating_sub(reach);
        let hi = (query + reach).min(k_len.saturating_sub(1));
        let on_grid = |j: usize| (lo..=hi).contains(&j) && j.abs_diff(query) % d == 0;
        let mut extra: Vec<usize> = g.iter().copied().filter(|&j| j < k_len && !on_grid(j)).collect();
        extra.sort_unstable();
        extra.dedup();
        let mut extra = extra.into_iter().peekable();
        let mut j = lo + (query - lo) % d;
        while j <= hi {
            while let Some(x) = extra.next_if(|&x| x < j) {
                out.push(x);
            }
            out.push(j);
            j += d;
        }
        out.extend(extra);
    }
}

/// Multi-head attention of one sequence under `pattern`, evaluating only
/// the allowed pairs. `q, k, v: [n, width]`.
pub fn sparse_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, pattern: &AttentionPattern) -> Result<Tensor> {
    pattern.validate_for(q.rows())?;
    let mut tape = Tape::inference();
    let (qv, kv, vv) = (tape.constant(q), tape.constant(k), tape.constant(v));
    let out = tape.attention(qv, kv, vv, heads, &[AttnSegment::square(0, q.rows())], pattern)?;
    Ok(tape.tensor(out))
}

/// Reference attention built from dense matrix ops: every score is formed,
/// disallowed ones are set to `-inf`, then softmax and the value product.
pub fn dense_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, pattern: &AttentionPattern) -> Result<Tensor> {
    let mut tape = Tape::inference();
    let (qv, kv, vv) = (tape.constant(q), tape.constant(k), tape.constant(v));
    let out = dense_attention_on(&mut tape, qv, kv, vv, heads, pattern)?;
    Ok(tape.tensor(out))
}

/// [`dense_attention`] as differentiable tape ops.
pub fn dense_attention_on(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize, pattern: &AttentionPattern) -> Result<Var> {
    let (n, width) = (tape.shape(q)[0], tape.shape(q)[1]);
    if width % heads != 0 {
        return Err(Error::Config(format!("width {width} not divisible by {heads} heads")));
    }
    let hd = width / heads;
    let blocked: Vec<bool> = pattern.mask(n).into_iter().flatten().map(|a| !a).collect();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let sel = |tape: &mut Tape, x: Var| -> Result<Var> {
            let cols = Tensor::new(
                vec![width, hd],
                (0..width * hd)
                    .map(|i| if i / hd == h * hd + i % hd { 1.0 } else { 0.0 })
                    .collect(),
            )?;
            let c = tape.constant(&cols);
            tape.matmul(x, c)
        };
        let (qh, kh, vh) = (sel(tape, q)?, sel(tape, k)?, sel(tape, v)?);
        let scores = tape.matmul_nt(qh, kh)?;
        let scores = tape.scale(scores, 1.0 / (hd as f64).sqrt())?;
        let scores = tape.masked_fill(scores, &blocked, f64::NEG_INFINITY)?;
        let p = tape.softmax(scores)?;
        outs.push(tape.matmul(p, vh)?);
    }
    // Reassemble heads column-wise: out = Σ_h out_h · E_hᵀ.
    let mut acc: Option<Var> = None;
    for (h, o) in outs.into_iter().enumerate() {
        let place = Tensor::new(
            vec![hd, width],
            (0..hd * width)
                .map(|i| if i % width == h * hd + i / width { 1.0 } else { 0.0 })
                .collect(),
        )?;
        let pv = tape.constant(&place);
        let term = tape.matmul(o, pv)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.expect("at least one head"))
}
