use std::ops::Range;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::align::BeadKind;

/// A paragraph pair with its true sentence alignment.
#[derive(Debug, Clone)]
pub struct SynthParagraph {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub gold: Vec<(BeadKind, Range<usize>, Range<usize>)>,
}

fn random_text(rng: &mut impl Rng, chars: usize) -> String {
    let mut s = String::with_capacity(chars);
    while s.len() < chars {
        if !s.is_empty() {
            s.push(' ');
        }
        let w = rng.gen_range(2..9).min(chars.saturating_sub(s.len()).max(1));
        for _ in 0..w {
            s.push(rng.gen_range(b'a'..=b'z') as char);
        }
    }
    s
}

/// Paragraph pairs whose target side is a length-perturbed copy of the
/// source in which some adjacent sentences were merged, giving known 2-1
/// beads among 1-1 beads.
pub fn merged_paragraphs(count: usize, merge_prob: f64, seed: u64) -> Vec<SynthParagraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(4..12);
            let src: Vec<String> = (0..n)
                .map(|_| {
                    let len = rng.gen_range(20..160);
                    random_text(&mut rng, len)
                })
                .collect();
            let mut tgt = Vec::new();
            let mut gold = Vec::new();
            let mut i = 0;
            while i < n {
                let merge = i + 1 < n && rng.gen_bool(merge_prob);
                let take = if merge { 2 } else { 1 };
                let chars: usize = src[i..i + take].iter().map(|s| s.chars().count()).sum();
                let jitter = rng.gen_range(-0.08..0.08);
                let len = ((chars as f64) * (1.0 + jitter)).round().max(1.0) as usize;
                gold.push((
                    if merge { BeadKind::TwoOne } else { BeadKind::OneOne },
                    i..i + take,
                    tgt.len()..tgt.len() + 1,
                ));
                tgt.push(random_text(&mut rng, len));
                i += take;
            }
            SynthParagraph { src, tgt, gold }
        })
        .collect()
}
