//! Length-based sentence alignment of paragraph-aligned bitext.
//!
//! A bead groups 0–2 consecutive source sentences with 0–2 consecutive
//! target sentences. Its cost is `-ln prior(kind) - ln(2·(1 - Φ(|δ|)))`
//! where `δ = (tgt - src·c) / sqrt(src·s²)` over character counts, and the
//! alignment is the cheapest tiling of both documents.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest |δ| used in the cost; keeps `erfc` away from underflow.
pub const DELTA_CAP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BeadKind {
    #[serde(rename = "1-1")]
    OneOne,
    #[serde(rename = "1-0")]
    OneZero,
    #[serde(rename = "0-1")]
    ZeroOne,
    #[serde(rename = "2-1")]
    TwoOne,
    #[serde(rename = "1-2")]
    OneTwo,
    #[serde(rename = "2-2")]
    TwoTwo,
}

impl BeadKind {
    pub const ALL: [BeadKind; 6] = [
        BeadKind::OneOne,
        BeadKind::OneZero,
        BeadKind::ZeroOne,
        BeadKind::TwoOne,
        BeadKind::OneTwo,
        BeadKind::TwoTwo,
    ];

    /// Number of (source, target) sentences the bead consumes.
    pub fn span(self) -> (usize, usize) {
        match self {
            BeadKind::OneOne => (1, 1),
            BeadKind::OneZero => (1, 0),
            BeadKind::ZeroOne => (0, 1),
            BeadKind::TwoOne => (2, 1),
            BeadKind::OneTwo => (1, 2),
            BeadKind::TwoTwo => (2, 2),
        }
    }

    pub fn from_span(src: usize, tgt: usize) -> Option<BeadKind> {
        BeadKind::ALL.into_iter().find(|k| k.span() == (src, tgt))
    }

    pub fn name(self) -> &'static str {
        match self {
            BeadKind::OneOne => "1-1",
            BeadKind::OneZero => "1-0",
            BeadKind::ZeroOne => "0-1",
            BeadKind::TwoOne => "2-1",
            BeadKind::OneTwo => "1-2",
            BeadKind::TwoTwo => "2-2",
        }
    }

    fn index(self) -> usize {
        BeadKind::ALL.iter().position(|&k| k == self).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentBead {
    pub kind: BeadKind,
    pub src: Range<usize>,
    pub tgt: Range<usize>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcParams {
    /// Expected target characters per source character.
    pub c: f64,
    /// Variance of the length difference per source character.
    pub s2: f64,
    /// Prior per bead kind, indexed in [`BeadKind::ALL`] order.
    pub priors: [f64; 6],
}

impl Default for GcParams {
    /// The classic constants with the published priors rescaled to sum to 1.
    fn default() -> Self {
        let raw = [0.89, 0.0099, 0.0099, 0.089 / 2.0, 0.089 / 2.0, 0.011];
        let z: f64 = raw.iter().sum();
        GcParams {
            c: 1.0,
            s2: 6.8,
            priors: raw.map(|p| p / z),
        }
    }
}

impl GcParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s2 > 0.0 && self.s2.is_finite()) {
            return Err(Error::Config(format!("s2 must be positive, got {}", self.s2)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("c must be positive, got {}", self.c)));
        }
        if self.priors.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::Config("bead priors must lie in (0, 1]".into()));
        }
        let sum: f64 = self.priors.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("bead priors sum to {sum}, not 1")));
        }
        Ok(())
    }

    pub fn prior(&self, kind: BeadKind) -> f64 {
        self.priors[kind.index()]
    }
}

/// Scaled length difference, clamped to `±DELTA_CAP`; `0/0` counts as 0.
pub fn delta(src_chars: usize, tgt_chars: usize, p: &GcParams) -> f64 {
    let num = tgt_chars as f64 - src_chars as f64 * p.c;
    let den = (src_chars as f64 * p.s2).sqrt();
    let d = if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            num.signum() * DELTA_CAP
        }
    } else {
        num / den
    };
    d.clamp(-DELTA_CAP, DELTA_CAP)
}

/// `-ln(2·(1 - Φ(|δ|)))`, written with `erfc` to stay accurate in the tail.
pub fn length_cost(delta: f64) -> f64 {
    -libm::erfc(delta.abs() / std::f64::consts::SQRT_2).ln()
}

pub fn bead_cost(src_chars: usize, tgt_chars: usize, kind: BeadKind, p: &GcParams) -> f64 {
    -p.prior(kind).ln() + length_cost(delta(src_chars, tgt_chars, p))
}

/// Aligns documents given per-sentence character counts.
pub fn align_lengths(src: &[usize], tgt: &[usize], p: &GcParams) -> Result<Vec<AlignmentBead>> {
    p.validate()?;
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::Input("cannot align an empty document".into()));
    }
    let (n, m) = (src.len(), tgt.len());
    let mut best = vec![vec![f64::INFINITY; m + 1]; n + 1];
    let mut back: Vec<Vec<Option<BeadKind>>> = vec![vec![None; m + 1]; n + 1];
    best[0][0] = 0.0;
    for i in 0..=n {
        for j in 0..=m {
            if i == 0 && j == 0 {
                continue;
            }
            for kind in BeadKind::ALL {
                let (a, b) = kind.span();
                if a > i || b > j || !best[i - a][j - b].is_finite() {
                    continue;
                }
                let sl: usize = src[i - a..i].iter().sum();
                let tl: usize = tgt[j - b..j].iter().sum();
                let c = best[i - a][j - b] + bead_cost(sl, tl, kind, p);
                if c < best[i][j] {
                    best[i][j] = c;
                    back[i][j] = Some(kind);
                }
            }
        }
    }
    let mut beads = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let kind = back[i][j].expect("every cell is reachable");
        let (a, b) = kind.span();
        let sl: usize = src[i - a..i].iter().sum();
        let tl: usize = tgt[j - b..j].iter().sum();
        beads.push(AlignmentBead {
            kind,
            src: i - a..i,
            tgt: j - b..j,
            cost: bead_cost(sl, tl, kind, p),
        });
        i -= a;
        j -= b;
    }
    beads.reverse();
    Ok(beads)
}

/// Aligns sentences by their character counts.
pub fn gale_church_align<S: AsRef<str>>(src: &[S], tgt: &[S], p: &GcParams) -> Result<Vec<AlignmentBead>> {
    let len = |s: &S| s.as_ref().chars().count();
    align_lengths(
        &src.iter().map(len).collect::<Vec<_>>(),
        &tgt.iter().map(len).collect::<Vec<_>>(),
        p,
    )
}

/// Sum of bead costs in list order.
pub fn total_cost(beads: &[AlignmentBead]) -> f64 {
    beads.iter().fold(0.0, |acc, b| acc + b.cost)
}

/// Sentence pairs recovered from a batch of paragraphs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignedText {
    /// Joined source and target text of every bead with both sides non-empty.
    pub pairs: Vec<(String, String)>,
    /// Sentences of 1-0 and 0-1 beads, tagged `src` or `tgt`.
    pub dropped: Vec<(String, String)>,
    pub counts: BTreeMap<String, usize>,
}

/// Aligns paragraph pairs and collects the resulting sentence pairs.
pub fn align_paragraphs<S: AsRef<str>>(paragraphs: &[(Vec<S>, Vec<S>)], p: &GcParams) -> Result<AlignedText> {
    let mut out = AlignedText::default();
    for kind in BeadKind::ALL {
        out.counts.insert(kind.name().to_string(), 0);
    }
    for (src, tgt) in paragraphs {
        for bead in gale_church_align(src, tgt, p)? {
            *out.counts.get_mut(bead.kind.name()).unwrap() += 1;
            let join = |xs: &[S]| xs.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
            let s = join(&src[bead.src.clone()]);
            let t = join(&tgt[bead.tgt.clone()]);
            match bead.kind {
                BeadKind::OneZero => out.dropped.push(("src".into(), s)),
                BeadKind::ZeroOne => out.dropped.push(("tgt".into(), t)),
                _ => out.pairs.push((s, t)),
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Exhaustive search over every tiling, accumulating left to right.
    fn brute_force(src: &[usize], tgt: &[usize], p: &GcParams) -> f64 {
        fn go(src: &[usize], tgt: &[usize], i: usize, j: usize, acc: f64, p: &GcParams) -> f64 {
            if i == src.len() && j == tgt.len() {
                return acc;
            }
            let mut best = f64::INFINITY;
            for kind in BeadKind::ALL {
                let (a, b) = kind.span();
                if i + a > src.len() || j + b > tgt.len() {
                    continue;
                }
                let sl: usize = src[i..i + a].iter().sum();
                let tl: usize = tgt[j..j + b].iter().sum();
                best = best.min(go(src, tgt, i + a, j + b, acc + bead_cost(sl, tl, kind, p), p));
            }
            best
        }
        go(src, tgt, 0, 0, 0.0, p)
    }

    #[test]
    fn default_priors_are_normalised() {
        let p = GcParams::default();
        p.validate().unwrap();
        assert!((p.prior(BeadKind::OneOne) - 0.89 / 1.0098).abs() < 1e-15);
    }

    #[test]
    fn equal_lengths_cost_only_the_prior() {
        let p = GcParams::default();
        assert_eq!(delta(100, 100, &p), 0.0);
        assert_eq!(bead_cost(100, 100, BeadKind::OneOne, &p), -p.prior(BeadKind::OneOne).ln());
        assert_eq!(delta(0, 0, &p), 0.0);
    }

    #[test]
    fn cost_matches_high_precision_oracle() {
        // Values from a 40-digit evaluation of -ln erfc(δ/√2).
        let p = GcParams::default();
        let d = delta(100, 120, &p);
        assert!((d - 0.766_964_988_847_370_4).abs() < 1e-15);
        assert!((bead_cost(100, 120, BeadKind::OneOne, &p) - 0.940_240_645_589_354_7).abs() < 1e-12);
        for (x, want) in [
            (0.5, 0.482_764_581_033_673_3),
            (1.0, 1.147_874_464_449_318_2),
            (2.0, 3.090_037_153_122_086_6),
            (3.0, 5.914_579_040_950_404),
            (5.0, 14.371_851_213_428_78),
            (10.0, 52.538_137_969_952_525),
        ] {
            assert!((length_cost(x) - want).abs() < 1e-9 * want.max(1.0), "{x}");
        }
    }

    #[test]
    fn cost_grows_with_delta() {
        let p = GcParams::default();
        let mut last = -1.0;
        // Strict below the cap (|δ| = 10 at tgt ≈ 361), flat beyond it.
        for tgt in 100..=360 {
            let c = bead_cost(100, tgt, BeadKind::OneOne, &p);
            assert!(c > last);
            last = c;
        }
        for tgt in 361..400 {
            let c = bead_cost(100, tgt, BeadKind::OneOne, &p);
            assert!(c >= last);
            last = c;
        }
        assert!(bead_cost(100, 10_000, BeadKind::OneOne, &p).is_finite());
    }

    #[test]
    fn single_sentences_form_one_bead() {
        let beads = gale_church_align(&["hello there"], &["hallo da"], &GcParams::default()).unwrap();
        assert_eq!(beads.len(), 1);
        assert_eq!(beads[0].kind, BeadKind::OneOne);
        assert!(beads[0].cost >= 0.0);
    }

    #[test]
    fn empty_documents_rejected() {
        let none: [&str; 0] = [];
        assert!(matches!(gale_church_align(&none, &["x"], &GcParams::default()), Err(Error::Input(_))));
    }

    #[test]
    fn bad_params_rejected() {
        let mut p = GcParams::default();
        p.s2 = 0.0;
        assert!(align_lengths(&[1], &[1], &p).is_err());
        let mut p = GcParams::default();
        p.priors[0] = 0.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn obvious_merge_found() {
        let beads = align_lengths(&[50, 50, 80], &[101, 79], &GcParams::default()).unwrap();
        let kinds: Vec<_> = beads.iter().map(|b| b.kind).collect();
        assert_eq!(kinds, vec![BeadKind::TwoOne, BeadKind::OneOne]);
    }

    #[test]
    fn recovers_merged_sentences() {
        let paras = crate::synth::merged_paragraphs(50, 0.25, 7);
        let p = GcParams::default();
        let (mut hit, mut total) = (0, 0);
        for para in &paras {
            let beads = gale_church_align(&para.src, &para.tgt, &p).unwrap();
            for (kind, s, t) in &para.gold {
                total += 1;
                hit += beads.iter().any(|b| b.kind == *kind && b.src == *s && b.tgt == *t) as usize;
            }
        }
        assert!(hit as f64 / total as f64 >= 0.95, "{hit}/{total}");
    }

    proptest! {
        #[test]
        fn dp_equals_brute_force(
            src in proptest::collection::vec(0usize..120, 1..=5),
            tgt in proptest::collection::vec(0usize..120, 1..=5),
        ) {
            let p = GcParams::default();
            let beads = align_lengths(&src, &tgt, &p).unwrap();
            prop_assert_eq!(total_cost(&beads), brute_force(&src, &tgt, &p));
            let (mut i, mut j) = (0, 0);
            for b in &beads {
                prop_assert_eq!(b.src.start, i);
                prop_assert_eq!(b.tgt.start, j);
                prop_assert_eq!((b.src.len(), b.tgt.len()), b.kind.span());
                prop_assert!(b.cost >= 0.0);
                i = b.src.end;
                j = b.tgt.end;
            }
            prop_assert_eq!((i, j), (src.len(), tgt.len()));
        }
    }
}
