//! BM25 term vectors and cosine ranking for picking the training pairs
//! closest to a test set.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::Sentence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(Error::Config(format!("bm25 k must be >= 0, got {}", self.k)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!("bm25 b must lie in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

/// Default number of training pairs kept by [`select_topk`].
pub const DEFAULT_TOP_K: usize = 1000;

/// `ln((N - n + 0.5) / (n + 0.5) + 1)`: never negative.
pub fn idf(n_docs: usize, doc_freq: usize) -> f64 {
    let (n, df) = (n_docs as f64, doc_freq as f64);
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

/// Closed-form BM25 weight of one term in one sequence.
pub fn term_weight(idf: f64, tf: f64, len: f64, avg_len: f64, p: Bm25Params) -> f64 {
    idf * ((p.k + 1.0) * tf) / (p.k * (1.0 - p.b + p.b * len / avg_len) + tf)
}

/// Sparse vector over the index's term ids, ascending.
pub type TermVector = Vec<(u32, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    params: Bm25Params,
    terms: Vec<String>,
    ids: HashMap<String, u32>,
    doc_freq: Vec<u32>,
    idf: Vec<f64>,
    /// Per sequence: (term id, count), ascending by term id.
    tf: Vec<Vec<(u32, u32)>>,
    lengths: Vec<u32>,
    avg_len: f64,
}

fn term_counts(q: &[String]) -> Vec<(String, u32)> {
    let mut counts: HashMap<String, u32> = HashMap::new();
    for t in q {
        *counts.entry(t.to_lowercase()).or_default() += 1;
    }
    let mut v: Vec<_> = counts.into_iter().collect();
    v.sort();
    v
}

impl Bm25Index {
    /// Terms are lowercased tokens; term ids follow first appearance.
    pub fn build(corpus: &[Sentence], params: Bm25Params) -> Result<Self> {
        params.validate()?;
        if corpus.is_empty() {
            return Err(Error::Input("cannot index an empty corpus".into()));
        }
        let mut terms = Vec::new();
        let mut ids: HashMap<String, u32> = HashMap::new();
        let mut doc_freq: Vec<u32> = Vec::new();
        let mut tf = Vec::with_capacity(corpus.len());
        let mut lengths = Vec::with_capacity(corpus.len());
        for s in corpus {
            for t in s {
                let t = t.to_lowercase();
                if !ids.contains_key(&t) {
                    ids.insert(t.clone(), terms.len() as u32);
                    terms.push(t);
                    doc_freq.push(0);
                }
            }
            let mut row: Vec<(u32, u32)> = term_counts(s).into_iter().map(|(t, c)| (ids[&t], c)).collect();
            row.sort_unstable();
            for &(t, _) in &row {
                doc_freq[t as usize] += 1;
            }
            tf.push(row);
            lengths.push(s.len() as u32);
        }
        let n = corpus.len();
        let avg_len = lengths.iter().map(|&l| l as f64).sum::<f64>() / n as f64;
        let idf = doc_freq.iter().map(|&d| idf(n, d as usize)).collect();
        Ok(Bm25Index { params, terms, ids, doc_freq, idf, tf, lengths, avg_len })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn len(&self) -> usize {
        self.tf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tf.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn term_id(&self, term: &str) -> Option<u32> {
        self.ids.get(&term.to_lowercase()).copied()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.term_id(term).map_or(0, |t| self.doc_freq[t as usize] as usize)
    }

    /// IDF of `term`; unseen terms get the document-frequency-zero value.
    pub fn idf(&self, term: &str) -> f64 {
        match self.term_id(term) {
            Some(t) => self.idf[t as usize],
            None => idf(self.len(), 0),
        }
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn length(&self, doc: usize) -> usize {
        self.lengths[doc] as usize
    }

    pub fn tf(&self, doc: usize, term: &str) -> usize {
        let Some(t) = self.term_id(term) else { return 0 };
        self.tf[doc]
            .binary_search_by_key(&t, |&(id, _)| id)
            .map_or(0, |i| self.tf[doc][i].1 as usize)
    }

    /// BM25 weight of `term` in sequence `q`, which need not be indexed.
    pub fn score(&self, q: &[String], term: &str) -> f64 {
        let t = term.to_lowercase();
        let tf = q.iter().filter(|w| w.to_lowercase() == t).count();
        term_weight(self.idf(term), tf as f64, q.len() as f64, self.avg_len, self.params)
    }

    /// Weights of `q` over the indexed terms; terms outside the corpus are
    /// dropped because the vector space is the corpus vocabulary.
    pub fn vector(&self, q: &[String]) -> TermVector {
        let len = q.len() as f64;
        let mut v: TermVector = term_counts(q)
            .into_iter()
            .filter_map(|(t, c)| {
                let id = *self.ids.get(&t)?;
                let w = term_weight(self.idf[id as usize], c as f64, len, self.avg_len, self.params);
                Some((id, w))
            })
            .collect();
        v.sort_unstable_by_key(|&(id, _)| id);
        v
    }

    /// Vector of the indexed sequence `doc`.
    pub fn doc_vector(&self, doc: usize) -> TermVector {
        let len = self.lengths[doc] as f64;
        self.tf[doc]
            .iter()
            .map(|&(id, c)| (id, term_weight(self.idf[id as usize], c as f64, len, self.avg_len, self.params)))
            .collect()
    }

    const MAGIC: &'static [u8; 8] = b"NMTKBM25";

    /// Binary form: magic, u64 header length, JSON header, then per
    /// sequence a u32 entry count and `(term, count)` u32 pairs.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = serde_json::json!({
            "params": self.params,
            "terms": self.terms,
            "lengths": self.lengths,
        });
        let h = serde_json::to_vec(&header)?;
        w.write_all(Self::MAGIC)?;
        w.write_all(&(h.len() as u64).to_le_bytes())?;
        w.write_all(&h)?;
        for row in &self.tf {
            w.write_all(&(row.len() as u32).to_le_bytes())?;
            for &(t, c) in row {
                w.write_all(&t.to_le_bytes())?;
                w.write_all(&c.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Format("not a BM25 index file".into()));
        }
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b)?;
        let mut h = vec![0u8; u64::from_le_bytes(u64b) as usize];
        r.read_exact(&mut h)?;
        #[derive(Deserialize)]
        struct Header {
            params: Bm25Params,
            terms: Vec<String>,
            lengths: Vec<u32>,
        }
        let header: Header = serde_json::from_slice(&h)?;
        header.params.validate()?;
        let mut u32b = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u32b)?;
            Ok(u32::from_le_bytes(u32b))
        };
        let n = header.lengths.len();
        if n == 0 {
            return Err(Error::Format("index holds no sequences".into()));
        }
        let mut tf = Vec::with_capacity(n);
        let mut doc_freq = vec![0u32; header.terms.len()];
        for _ in 0..n {
            let k = read_u32(r)? as usize;
            let mut row = Vec::with_capacity(k);
            for _ in 0..k {
                let t = read_u32(r)?;
                let c = read_u32(r)?;
                *doc_freq
                    .get_mut(t as usize)
                    .ok_or_else(|| Error::Format(format!("term id {t} out of range")))? += 1;
                row.push((t, c));
            }
            tf.push(row);
        }
        let ids = header.terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let avg_len = header.lengths.iter().map(|&l| l as f64).sum::<f64>() / n as f64;
        let idf = doc_freq.iter().map(|&d| idf(n, d as usize)).collect();
        Ok(Bm25Index {
            params: header.params,
            terms: header.terms,
            ids,
            doc_freq,
            idf,
            tf,
            lengths: header.lengths,
            avg_len,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, |w| self.write_to(w))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Bm25Index::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Euclidean norm with squares summed in term-id order.
pub fn norm(v: &TermVector) -> f64 {
    v.iter().fold(0.0, |acc, &(_, x)| acc + x * x).sqrt()
}

/// Cosine similarity; products are summed in term-id order and a zero
/// vector has similarity 0 with everything.
pub fn cosine(a: &TermVector, b: &TermVector) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let (mut i, mut j) = (0, 0);
    let mut dot = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot / (na * nb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopKMode {
    /// Each candidate is scored by its best cosine over all queries and the
    /// K best candidates overall are kept.
    #[default]
    GlobalPool,
    /// K candidates per query, merged without duplicates.
    PerQuery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMatch {
    pub query: usize,
    pub best: Option<usize>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Selected corpus positions, best first.
    pub indices: Vec<usize>,
    /// Best cosine of each selected sequence over the queries.
    pub scores: Vec<f64>,
    pub per_query: Vec<QueryMatch>,
    /// Set when K exceeded the corpus size.
    pub truncated_k: bool,
}

impl Selection {
    /// Min, mean and max of the selected scores.
    pub fn score_summary(&self) -> (f64, f64, f64) {
        if self.scores.is_empty() {
            return (0.0, 0.0, 0.0);
        }
        let min = self.scores.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = self.scores.iter().sum::<f64>() / self.scores.len() as f64;
        (min, mean, max)
    }
}

/// Sorts by descending score, ties by ascending corpus position.
fn rank(scored: &mut [(usize, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// Cosine of every query against every indexed sequence: `[query][doc]`.
/// Uses postings so cost scales with shared terms; products still
/// accumulate in term-id order, matching [`cosine`] bit for bit.
pub fn similarity_matrix(index: &Bm25Index, queries: &[Sentence]) -> Vec<Vec<f64>> {
    let mut postings: Vec<Vec<(u32, f64)>> = vec![Vec::new(); index.terms.len()];
    let doc_norms: Vec<f64> = (0..index.len())
        .map(|d| {
            let v = index.doc_vector(d);
            for &(t, w) in &v {
                postings[t as usize].push((d as u32, w));
            }
            norm(&v)
        })
        .collect();
    queries
        .iter()
        .map(|q| {
            let qv = index.vector(q);
            let qn = norm(&qv);
            let mut dot = vec![0.0; index.len()];
            for &(t, w) in &qv {
                for &(d, dw) in &postings[t as usize] {
                    dot[d as usize] += w * dw;
                }
            }
            dot.iter()
                .zip(&doc_norms)
                .map(|(&x, &n)| if qn == 0.0 || n == 0.0 { 0.0 } else { x / (qn * n) })
                .collect()
        })
        .collect()
}

/// Picks the `k` indexed sequences most similar to `queries`.
pub fn select_topk(index: &Bm25Index, queries: &[Sentence], k: usize, mode: TopKMode) -> Result<Selection> {
    if k == 0 {
        return Err(Error::Config("top-k needs k >= 1".into()));
    }
    let truncated_k = k > index.len();
    if truncated_k {
        log::warn!("k = {k} exceeds the corpus size {}; selecting everything", index.len());
    }
    let k = k.min(index.len());
    let sims = similarity_matrix(index, queries);
    let per_query = sims
        .iter()
        .enumerate()
        .map(|(qi, row)| {
            let mut scored: Vec<(usize, f64)> = row.iter().copied().enumerate().collect();
            rank(&mut scored);
            QueryMatch {
                query: qi,
                best: scored.first().map(|s| s.0),
                score: scored.first().map_or(0.0, |s| s.1),
            }
        })
        .collect();
    let best_of = |d: usize| sims.iter().map(|r| r[d]).fold(0.0, f64::max);
    let mut chosen: Vec<(usize, f64)> = match mode {
        TopKMode::GlobalPool => {
            let mut all: Vec<(usize, f64)> = (0..index.len()).map(|d| (d, best_of(d))).collect();
            rank(&mut all);
            all.truncate(k);
            all
        }
        TopKMode::PerQuery => {
            let mut seen = vec![false; index.len()];
            let mut out = Vec::new();
            for row in &sims {
                let mut scored: Vec<(usize, f64)> = row.iter().copied().enumerate().collect();
                rank(&mut scored);
                for &(d, _) in scored.iter().take(k) {
                    if !std::mem::replace(&mut seen[d], true) {
                        out.push((d, best_of(d)));
                    }
                }
            }
            rank(&mut out);
            out
        }
    };
    if queries.is_empty() {
        chosen.clear();
    }
    Ok(Selection {
        indices: chosen.iter().map(|c| c.0).collect(),
        scores: chosen.iter().map(|c| c.1).collect(),
        per_query,
        truncated_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &str) -> Sentence {
        x.split_whitespace().map(str::to_string).collect()
    }

    fn toy() -> Vec<Sentence> {
        vec![s("the cat sat"), s("the dog sat down"), s("a Cat and a dog")]
    }

    #[test]
    fn statistics_match_hand_counts() {
        let idx = Bm25Index::build(&toy(), Bm25Params::default()).unwrap();
        assert_eq!(idx.avg_len(), 12.0 / 3.0);
        assert_eq!(idx.doc_freq("the"), 2);
        assert_eq!(idx.doc_freq("cat"), 2);
        assert_eq!(idx.doc_freq("CAT"), 2);
        assert_eq!(idx.doc_freq("a"), 1);
        assert_eq!(idx.tf(2, "a"), 2);
        assert_eq!(idx.length(1), 4);
        assert_eq!(idx.terms().len(), 7);
        assert_eq!(idx.idf("the"), (1.5f64 / 2.5 + 1.0).ln());
        assert_eq!(idx.idf("zebra"), (3.5f64 / 0.5 + 1.0).ln());
    }

    #[test]
    fn hand_computed_weight() {
        // a in doc 2: idf ln(2.5/1.5+1), tf 2, len 5, avg 4.
        let idx = Bm25Index::build(&toy(), Bm25Params::default()).unwrap();
        let idf = (2.5f64 / 1.5 + 1.0).ln();
        let want = idf * 2.2 * 2.0 / (1.2 * (0.25 + 0.75 * 5.0 / 4.0) + 2.0);
        assert_eq!(idx.score(&toy()[2], "a"), want);
        assert!((want - 1.2600434199274733).abs() < 1e-15);
        assert_eq!(idx.score(&toy()[0], "dog"), 0.0);
    }

    #[test]
    fn single_document_and_ubiquitous_terms() {
        let idx = Bm25Index::build(&[s("x y x")], Bm25Params::default()).unwrap();
        assert_eq!(idx.avg_len(), 3.0);
        let idx = Bm25Index::build(&toy(), Bm25Params::default()).unwrap();
        let min = (0.5f64 / 3.5 + 1.0).ln();
        let all = Bm25Index::build(&[s("q a"), s("q b"), s("q c")], Bm25Params::default()).unwrap();
        assert_eq!(all.idf("q"), min);
        assert!(idx.terms().iter().all(|t| idx.idf(t) > min));
    }

    #[test]
    fn b_zero_ignores_length() {
        let p = Bm25Params { k: 1.2, b: 0.0 };
        let idx = Bm25Index::build(&toy(), p).unwrap();
        assert_eq!(idx.score(&s("cat"), "cat"), idx.score(&s("cat x y z w"), "cat"));
    }

    #[test]
    fn vectors_live_on_query_terms() {
        let idx = Bm25Index::build(&toy(), Bm25Params::default()).unwrap();
        let q = s("the zebra the");
        let v = idx.vector(&q);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0], (idx.term_id("the").unwrap(), idx.score(&q, "the")));
        assert_eq!(idx.vector(&toy()[1]), idx.doc_vector(1));
    }

    #[test]
    fn exact_copy_ranks_first() {
        let idx = Bm25Index::build(&toy(), Bm25Params::default()).unwrap();
        let sel = select_topk(&idx, &[s("the dog sat down")], 1, TopKMode::GlobalPool).unwrap();
        assert_eq!(sel.indices, vec![1]);
        assert!((sel.scores[0] - 1.0).abs() < 1e-12);
        let all = select_topk(&idx, &[s("cat")], 3, TopKMode::GlobalPool).unwrap();
        assert_eq!(all.indices.len(), 3);
        let over = select_topk(&idx, &[s("cat")], 10, TopKMode::PerQuery).unwrap();
        assert!(over.truncated_k);
        assert_eq!(over.indices.len(), 3);
        assert!(select_topk(&idx, &[s("cat")], 0, TopKMode::GlobalPool).is_err());
    }

    #[test]
    fn empty_corpus_and_bad_params_rejected() {
        assert!(matches!(Bm25Index::build(&[], Bm25Params::default()), Err(Error::Input(_))));
        assert!(Bm25Index::build(&toy(), Bm25Params { k: 1.0, b: 1.5 }).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let idx = Bm25Index::build(&toy(), Bm25Params::default()).unwrap();
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        let back = Bm25Index::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, idx);
        buf[0] = b'X';
        assert!(Bm25Index::read_from(&mut buf.as_slice()).is_err());
    }
}
