//! Case-sensitive BLEU over 1- to 4-grams.
//!
//! Orders for which the hypothesis has no n-grams at all are left out of
//! the geometric mean (effective order), so a one-word hypothesis equal to
//! its reference still scores 100.

use std::collections::HashMap;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BleuTokenizer {
    /// Punctuation splitting in the style of the `13a` scorer.
    #[default]
    #[serde(rename = "13a")]
    Thirteen,
    /// Every non-space character is a token (character-level BLEU).
    Char,
    /// Plain whitespace split.
    None,
}

pub fn tokenize(s: &str, tok: BleuTokenizer) -> Vec<String> {
    match tok {
        BleuTokenizer::Thirteen => tokenize_13a(s),
        BleuTokenizer::Char => s.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
        BleuTokenizer::None => s.split_whitespace().map(str::to_string).collect(),
    }
}

fn splits_always(c: char) -> bool {
    c.is_ascii_punctuation() && !matches!(c, '\'' | '-' | '.' | ',')
}

fn tokenize_13a(s: &str) -> Vec<String> {
    let s = s
        .replace("<skipped>", "")
        .replace("-\n", "")
        .replace('\n', " ")
        .replace("&quot;", "\"")
        .replace("&amp;", "&")
        .replace("&lt;", "<")
        .replace("&gt;", ">");
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len() * 2);
    for (i, &c) in chars.iter().enumerate() {
        let prev_digit = i > 0 && chars[i - 1].is_ascii_digit();
        let next_digit = chars.get(i + 1).is_some_and(char::is_ascii_digit);
        let split = splits_always(c)
            || (matches!(c, '.' | ',') && !(prev_digit && next_digit))
            || (c == '-' && prev_digit);
        if split {
            out.push(' ');
            out.push(c);
            out.push(' ');
        } else {
            out.push(c);
        }
    }
    out.split_whitespace().map(str::to_string).collect()
}

/// Clipped n-gram statistics; additive across segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn from_tokens<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Self {
        let mut st = BleuStats {
            hyp_len: hyp.len() as u64,
            ref_len: reference.len() as u64,
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            if hyp.len() < n {
                continue;
            }
            let mut ref_counts: HashMap<Vec<&str>, u64> = HashMap::new();
            if reference.len() >= n {
                for g in reference.windows(n) {
                    *ref_counts.entry(g.iter().map(AsRef::as_ref).collect()).or_default() += 1;
                }
            }
            let mut hyp_counts: HashMap<Vec<&str>, u64> = HashMap::new();
            for g in hyp.windows(n) {
                *hyp_counts.entry(g.iter().map(AsRef::as_ref).collect()).or_default() += 1;
            }
            st.totals[n - 1] = (hyp.len() + 1 - n) as u64;
            st.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
        }
        st
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    fn score(&self, add_one: bool) -> BleuScore {
        let bp = self.brevity_penalty();
        let mut precisions = [0.0; MAX_ORDER];
        let mut log_sum = 0.0;
        let mut orders = 0;
        let mut zero = self.hyp_len == 0;
        for n in 0..MAX_ORDER {
            let (m, t) = (self.matches[n] as f64, self.totals[n] as f64);
            if self.totals[n] == 0 {
                continue;
            }
            let p = if add_one && n > 0 { (m + 1.0) / (t + 1.0) } else { m / t };
            precisions[n] = 100.0 * p;
            orders += 1;
            if p == 0.0 {
                zero = true;
            } else {
                log_sum += p.ln();
            }
        }
        let bleu = if zero || orders == 0 {
            0.0
        } else {
            100.0 * bp * (log_sum / orders as f64).exp()
        };
        BleuScore {
            bleu: bleu.min(100.0),
            precisions,
            bp,
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
        }
    }
}

impl Add for BleuStats {
    type Output = BleuStats;
    fn add(mut self, rhs: BleuStats) -> BleuStats {
        self += rhs;
        self
    }
}

impl AddAssign for BleuStats {
    fn add_assign(&mut self, rhs: BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += rhs.matches[n];
            self.totals[n] += rhs.totals[n];
        }
        self.hyp_len += rhs.hyp_len;
        self.ref_len += rhs.ref_len;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub bleu: f64,
    /// Per-order precisions in percent.
    pub precisions: [f64; MAX_ORDER],
    pub bp: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
}

/// Unsmoothed corpus BLEU of detokenised hypotheses against one reference each.
pub fn corpus_bleu<S: AsRef<str>>(hyps: &[S], refs: &[S], tok: BleuTokenizer) -> Result<BleuScore> {
    if hyps.len() != refs.len() {
        return Err(Error::Input(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total += BleuStats::from_tokens(&tokenize(h.as_ref(), tok), &tokenize(r.as_ref(), tok));
    }
    Ok(total.score(false))
}

/// Corpus BLEU over already-tokenised sentences.
pub fn corpus_bleu_tokens<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<BleuScore> {
    if hyps.len() != refs.len() {
        return Err(Error::Input(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total += BleuStats::from_tokens(h, r);
    }
    Ok(total.score(false))
}

/// Sentence BLEU with add-one smoothing on 2- to 4-gram precisions.
pub fn sentence_bleu(hyp: &str, reference: &str, tok: BleuTokenizer) -> f64 {
    sentence_bleu_tokens(&tokenize(hyp, tok), &tokenize(reference, tok))
}

pub fn sentence_bleu_tokens<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> f64 {
    BleuStats::from_tokens(hyp, reference).score(true).bleu
}

pub fn stats_score(stats: &BleuStats) -> BleuScore {
    stats.score(false)
}

/// Corpus BLEU over token id sequences.
pub fn corpus_bleu_ids(hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> Result<BleuScore> {
    let words = |s: &[Vec<usize>]| -> Vec<Vec<String>> {
        s.iter().map(|x| x.iter().map(usize::to_string).collect()).collect()
    };
    corpus_bleu_tokens(&words(hyps), &words(refs))
}

pub fn sentence_bleu_ids(hyp: &[usize], reference: &[usize]) -> f64 {
    let w = |s: &[usize]| -> Vec<String> { s.iter().map(usize::to_string).collect() };
    sentence_bleu_tokens(&w(hyp), &w(reference))
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: BleuTokenizer = BleuTokenizer::Thirteen;

    #[test]
    fn identity_scores_100() {
        let h = ["the cat sat on the mat .", "a"];
        let s = corpus_bleu(&h, &h, T).unwrap();
        assert!((s.bleu - 100.0).abs() < 1e-9);
        assert_eq!(sentence_bleu("one", "one", T), 100.0);
    }

    #[test]
    fn disjoint_scores_zero() {
        assert_eq!(corpus_bleu(&["x y z"], &["a b c"], T).unwrap().bleu, 0.0);
        assert_eq!(sentence_bleu("x y z", "a b c", T), 0.0);
    }

    #[test]
    fn empty_hypothesis_scores_zero() {
        assert_eq!(sentence_bleu("", "a b c", T), 0.0);
        assert_eq!(corpus_bleu(&[""], &["a"], T).unwrap().bleu, 0.0);
    }

    #[test]
    fn count_mismatch_is_an_error() {
        assert!(corpus_bleu(&["a"], &[], T).is_err());
    }

    #[test]
    fn tokenizer_13a_rules() {
        assert_eq!(tokenize("Hello, world! 3.14 and 1,000-2", T).join(" "), "Hello , world ! 3.14 and 1,000 - 2");
        assert_eq!(tokenize("don't stop.", T).join(" "), "don't stop .");
        assert_eq!(tokenize("中文 ab", BleuTokenizer::Char), vec!["中", "文", "a", "b"]);
    }

    // Naive counting with nested loops, independent of the hashed counts.
    fn oracle_stats(h: &[&str], r: &[&str]) -> ([u64; 4], [u64; 4]) {
        let mut m = [0; 4];
        let mut t = [0; 4];
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            let mut used = vec![false; r.len().saturating_sub(n - 1)];
            for i in 0..=h.len() - n {
                t[n - 1] += 1;
                for (j, u) in used.iter_mut().enumerate() {
                    if !*u && h[i..i + n] == r[j..j + n] {
                        *u = true;
                        m[n - 1] += 1;
                        break;
                    }
                }
            }
        }
        (m, t)
    }

    #[test]
    fn corpus_value_matches_counting_oracle() {
        let hyps = ["the cat sat on the mat today", "there is a big dog here"];
        let refs = ["the cat sat on a mat today", "there is a big cat here now"];
        let mut m = [0; 4];
        let mut t = [0; 4];
        for (h, r) in hyps.iter().zip(&refs) {
            let h: Vec<&str> = h.split(' ').collect();
            let r: Vec<&str> = r.split(' ').collect();
            let (a, b) = oracle_stats(&h, &r);
            let st = BleuStats::from_tokens(&h, &r);
            assert_eq!((st.matches, st.totals), (a, b));
            for n in 0..4 {
                m[n] += a[n];
                t[n] += b[n];
            }
        }
        assert_eq!((m, t), ([11, 7, 4, 2], [13, 11, 9, 7]));
        let s = corpus_bleu(&hyps, &refs, T).unwrap();
        assert!((s.bleu - 47.349867001302506).abs() < 1e-9);
        assert!((s.bp - (1.0f64 - 14.0 / 13.0).exp()).abs() < 1e-15);
        // Segment order does not matter.
        let r = corpus_bleu(&[hyps[1], hyps[0]], &[refs[1], refs[0]], T).unwrap();
        assert_eq!(r.bleu, s.bleu);
    }

    #[test]
    fn smoothed_single_substitution() {
        // p1 = 4/5, p2 = 3/5, p3 = 1/4, p4 = 1/3: geometric mean is sqrt(0.2).
        let s = sentence_bleu("a b c d e", "a b x d e", T);
        assert!((s - 100.0 * 0.2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn sentence_and_corpus_agree_without_smoothing_effects() {
        // All higher-order n-grams match, so add-one leaves them at 1.
        let h = "a b c d e";
        let r = "a b c d e f";
        let s = sentence_bleu(h, r, T);
        let c = corpus_bleu(&[h], &[r], T).unwrap().bleu;
        assert!((s - c).abs() < 1e-12);
    }
}
