//! Byte-pair-encoding subword model: learning merges from word counts and
//! applying them in merge-rank order.
//!
//! Word-final symbols carry an `</w>` suffix, which is what makes decoding
//! exact.

use std::cmp::Reverse;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::corpus::Corpus;

pub const END_OF_WORD: &str = "</w>";

/// Merge budget for a joint model over two languages.
pub const JOINT_MERGES_TWO_LANGS: usize = 40_000;
/// Merge budget once a third language joins the joint model.
pub const JOINT_MERGES_THREE_LANGS: usize = 50_000;

pub fn default_joint_merges(languages: usize) -> usize {
    if languages >= 3 {
        JOINT_MERGES_THREE_LANGS
    } else {
        JOINT_MERGES_TWO_LANGS
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubwordModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

fn initial_symbols(word: &str) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = syms.last_mut() {
        last.push_str(END_OF_WORD);
    }
    syms
}

type Pair = (String, String);

impl SubwordModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Self {
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        SubwordModel { merges, ranks }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn merge_count(&self) -> usize {
        self.merges.len()
    }

    /// Learns up to `merges` rules from every word of every corpus (source
    /// and target sides), most frequent pair first, ties broken by the
    /// lexicographically smallest pair.
    pub fn learn(corpora: &[&Corpus], merges: usize) -> Result<Self> {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        let mut any = false;
        for c in corpora {
            for w in c.all_words() {
                any = true;
                *counts.entry(w).or_default() += 1;
            }
        }
        if !any {
            return Err(Error::Input("cannot learn BPE from an empty corpus".into()));
        }
        let mut words: Vec<(&str, u64)> = counts.into_iter().collect();
        words.sort_unstable();
        let mut symbols: Vec<Vec<String>> = words.iter().map(|(w, _)| initial_symbols(w)).collect();
        let freqs: Vec<i64> = words.iter().map(|(_, c)| *c as i64).collect();

        let mut pair_counts: HashMap<Pair, i64> = HashMap::new();
        let mut where_: HashMap<Pair, HashSet<usize>> = HashMap::new();
        for (wi, syms) in symbols.iter().enumerate() {
            for p in syms.windows(2) {
                let key = (p[0].clone(), p[1].clone());
                *pair_counts.entry(key.clone()).or_default() += freqs[wi];
                where_.entry(key).or_default().insert(wi);
            }
        }
        let mut queue: BTreeSet<(Reverse<i64>, Pair)> = pair_counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(p, &c)| (Reverse(c), p.clone()))
            .collect();

        let mut learned = Vec::new();
        while learned.len() < merges {
            let Some((Reverse(_), best)) = queue.pop_first() else {
                break;
            };
            let merged = format!("{}{}", best.0, best.1);
            let mut touched: Vec<usize> = where_.remove(&best).into_iter().flatten().collect();
            touched.sort_unstable();
            let mut delta: HashMap<Pair, i64> = HashMap::new();
            for wi in touched {
                let old = &symbols[wi];
                for p in old.windows(2) {
                    *delta.entry((p[0].clone(), p[1].clone())).or_default() -= freqs[wi];
                }
                let mut new = Vec::with_capacity(old.len());
                let mut i = 0;
                while i < old.len() {
                    if i + 1 < old.len() && old[i] == best.0 && old[i + 1] == best.1 {
                        new.push(merged.clone());
                        i += 2;
                    } else {
                        new.push(old[i].clone());
                        i += 1;
                    }
                }
                for p in new.windows(2) {
                    let key = (p[0].clone(), p[1].clone());
                    *delta.entry(key.clone()).or_default() += freqs[wi];
                    where_.entry(key).or_default().insert(wi);
                }
                symbols[wi] = new;
            }
            for (pair, d) in delta {
                if d == 0 || pair == best {
                    continue;
                }
                let c = pair_counts.entry(pair.clone()).or_default();
                queue.remove(&(Reverse(*c), pair.clone()));
                *c += d;
                if *c > 0 {
                    queue.insert((Reverse(*c), pair));
                }
            }
            pair_counts.remove(&best);
            learned.push(best);
        }
        Ok(SubwordModel::from_merges(learned))
    }

    /// Segments one word.
    pub fn apply_word(&self, word: &str) -> Vec<String> {
        let mut syms = initial_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, p)| {
                    self.ranks
                        .get(&(p[0].clone(), p[1].clone()))
                        .map(|&r| (r, i))
                })
                .min();
            let Some((rank, _)) = best else { break };
            let (l, r) = &self.merges[rank];
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && &syms[i] == l && &syms[i + 1] == r {
                    out.push(format!("{l}{r}"));
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            syms = out;
        }
        syms
    }

    /// Segments a whitespace-tokenised sentence.
    pub fn apply(&self, sentence: &str) -> Vec<String> {
        sentence
            .split_whitespace()
            .flat_map(|w| self.apply_word(w))
            .collect()
    }

    pub fn apply_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<String> {
        words.iter().flat_map(|w| self.apply_word(w.as_ref())).collect()
    }

    /// Inverse of [`SubwordModel::apply`].
    pub fn decode<S: AsRef<str>>(symbols: &[S]) -> String {
        let mut out = String::new();
        for s in symbols {
            let s = s.as_ref();
            match s.strip_suffix(END_OF_WORD) {
                Some(stem) => {
                    out.push_str(stem);
                    out.push(' ');
                }
                None => out.push_str(s),
            }
        }
        out.trim_end().to_string()
    }

    /// One `left right` rule per line, in merge order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (l, r) in &self.merges {
            s.push_str(l);
            s.push(' ');
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut merges = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => return Err(Error::Format(format!("bad merge rule on line {}", n + 1))),
            }
        }
        Ok(SubwordModel::from_merges(merges))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_string_atomic(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        SubwordModel::from_text(&std::fs::read_to_string(path)?)
    }
}
