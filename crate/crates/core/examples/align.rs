//! Sentence-align synthetic paragraphs where some source sentences were
//! merged, and compare against the known beads.

use nmtkit::align::{gale_church_align, GcParams};
use nmtkit::synth::merged_paragraphs;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = GcParams::default();
    let paragraphs = merged_paragraphs(50, 0.25, 7);
    let (mut hit, mut total) = (0, 0);
    for p in &paragraphs {
        let beads = gale_church_align(&p.src, &p.tgt, &params)?;
        for (kind, s, t) in &p.gold {
            total += 1;
            hit += usize::from(beads.iter().any(|b| b.kind == *kind && b.src == *s && b.tgt == *t));
        }
    }
    let first = &paragraphs[0];
    for b in gale_church_align(&first.src, &first.tgt, &params)? {
        println!("{:?} src {:?} tgt {:?} cost {:.3}", b.kind, b.src, b.tgt, b.cost);
    }
    println!("recovered {hit}/{total} gold beads");
    Ok(())
}
