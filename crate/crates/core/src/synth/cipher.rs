//! Languages that share one hidden sentence generator and differ only by a
//! word substitution cipher, so every translation is known exactly.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::vocab::FIRST_LANG_TAG;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CipherSpec {
    /// Hidden word types per language.
    pub concepts: usize,
    /// Leading concepts written identically in every language.
    pub anchors: usize,
    /// Successors each concept can be followed by.
    pub branching: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for CipherSpec {
    fn default() -> Self {
        CipherSpec { concepts: 60, anchors: 4, branching: 5, min_len: 4, max_len: 12, seed: 0 }
    }
}

/// The generator plus one cipher per language.
#[derive(Debug, Clone)]
pub struct CipherWorld {
    pub spec: CipherSpec,
    pub languages: Vec<String>,
    start: WeightedIndex<f64>,
    next: Vec<(Vec<usize>, WeightedIndex<f64>)>,
    /// `lex[lang][concept]` is the token id.
    lex: Vec<Vec<usize>>,
    /// Surface spelling of each token id (empty for reserved ids).
    spelling: Vec<String>,
}

fn zipf(n: usize) -> Vec<f64> {
    (1..=n).map(|r| 1.0 / r as f64).collect()
}

impl CipherWorld {
    pub fn new(languages: &[&str], spec: CipherSpec) -> Result<Self> {
        let c = spec.concepts;
        if c < 2 || spec.anchors >= c || spec.branching == 0 || spec.min_len == 0 || spec.min_len > spec.max_len {
            return Err(Error::Config("cipher spec needs concepts > anchors, branching >= 1 and 1 <= min_len <= max_len".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut order: Vec<usize> = (0..c).collect();
        order.shuffle(&mut rng);
        let mut start_w = vec![0.0; c];
        for (rank, &k) in order.iter().enumerate() {
            start_w[k] = 1.0 / (rank + 1) as f64;
        }
        let start = WeightedIndex::new(&start_w).expect("positive weights");
        let weights = zipf(spec.branching.min(c));
        let next = (0..c)
            .map(|_| {
                let succ: Vec<usize> = rand::seq::index::sample(&mut rng, c, weights.len()).into_vec();
                (succ, WeightedIndex::new(&weights).expect("positive weights"))
            })
            .collect();
        let first = FIRST_LANG_TAG + languages.len();
        let own = c - spec.anchors;
        let mut lex = Vec::with_capacity(languages.len());
        for li in 0..languages.len() {
            let mut perm: Vec<usize> = (0..own).collect();
            perm.shuffle(&mut rng);
            let ids = (0..c)
                .map(|k| if k < spec.anchors { first + k } else { first + spec.anchors + li * own + perm[k - spec.anchors] })
                .collect();
            lex.push(ids);
        }
        let vocab = first + spec.anchors + languages.len() * own;
        let mut spelling = vec![String::new(); vocab];
        let mut seen = HashSet::new();
        for s in spelling.iter_mut().skip(first) {
            loop {
                let len = rng.gen_range(2..=6);
                let w: String = (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
                if seen.insert(w.clone()) {
                    *s = w;
                    break;
                }
            }
        }
        Ok(CipherWorld {
            spec,
            languages: languages.iter().map(|s| s.to_string()).collect(),
            start,
            next,
            lex,
            spelling,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.spelling.len()
    }

    pub fn lang_index(&self, lang: &str) -> Result<usize> {
        self.languages
            .iter()
            .position(|l| l == lang)
            .ok_or_else(|| Error::Config(format!("cipher world has no language `{lang}`")))
    }

    /// A hidden sentence: a walk of the successor graph.
    pub fn sample_concepts<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let len = rng.gen_range(self.spec.min_len..=self.spec.max_len);
        let mut out = Vec::with_capacity(len);
        let mut k = self.start.sample(rng);
        out.push(k);
        while out.len() < len {
            let (succ, w) = &self.next[k];
            k = succ[w.sample(rng)];
            out.push(k);
        }
        out
    }

    pub fn render(&self, lang: usize, concepts: &[usize]) -> Vec<usize> {
        concepts.iter().map(|&k| self.lex[lang][k]).collect()
    }

    /// Gold translation of a rendered sentence; unknown ids pass through.
    pub fn translate(&self, from: usize, to: usize, ids: &[usize]) -> Vec<usize> {
        ids.iter()
            .map(|&t| self.lex[from].iter().position(|&x| x == t).map_or(t, |k| self.lex[to][k]))
            .collect()
    }

    pub fn monolingual<R: Rng + ?Sized>(&self, lang: usize, n: usize, rng: &mut R) -> Vec<Vec<usize>> {
        (0..n).map(|_| self.render(lang, &self.sample_concepts(rng))).collect()
    }

    /// `n` sentences rendered in every language of `langs`.
    pub fn parallel<R: Rng + ?Sized>(&self, langs: &[usize], n: usize, rng: &mut R) -> Vec<Vec<Vec<usize>>> {
        let hidden: Vec<Vec<usize>> = (0..n).map(|_| self.sample_concepts(rng)).collect();
        langs.iter().map(|&l| hidden.iter().map(|h| self.render(l, h)).collect()).collect()
    }

    pub fn spell(&self, ids: &[usize]) -> String {
        ids.iter().map(|&t| self.spelling.get(t).map_or("", String::as_str)).collect::<Vec<_>>().join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ciphers_are_bijective_and_disjoint() {
        let w = CipherWorld::new(&["s", "t", "r"], CipherSpec::default()).unwrap();
        assert!(w.vocab_size() <= 200);
        let first = FIRST_LANG_TAG + 3;
        let mut all = HashSet::new();
        for l in 0..3 {
            let ids: HashSet<usize> = w.lex[l].iter().copied().collect();
            assert_eq!(ids.len(), 60);
            all.extend(w.lex[l][4..].iter().copied());
            assert_eq!(&w.lex[l][..4], &[first, first + 1, first + 2, first + 3]);
        }
        assert_eq!(all.len(), 3 * 56);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = w.monolingual(0, 1, &mut rng).remove(0);
        assert_eq!(w.translate(2, 0, &w.translate(0, 2, &s)), s);
        assert!((4..=12).contains(&s.len()));
    }

    #[test]
    fn spellings_are_unique_words() {
        let w = CipherWorld::new(&["a", "b"], CipherSpec::default()).unwrap();
        let first = FIRST_LANG_TAG + 2;
        let set: HashSet<&String> = w.spelling[first..].iter().collect();
        assert_eq!(set.len(), w.vocab_size() - first);
        assert!(w.spelling[first..].iter().all(|s| !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase())));
    }
}
