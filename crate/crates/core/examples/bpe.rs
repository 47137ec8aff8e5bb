//! Learn a joint BPE vocabulary on two synthetic languages and round-trip
//! a few sentences through it.

use nmtkit::synth::{CipherSpec, CipherWorld};
use nmtkit::text::{Corpus, Tokenizer};
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = CipherWorld::new(&["en", "xx"], CipherSpec::default())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let spelled: Vec<Vec<String>> = world
        .parallel(&[0, 1], 1000, &mut rng)
        .iter()
        .map(|side| side.iter().map(|s| world.spell(s)).collect())
        .collect();
    let corpora: Vec<Corpus> = spelled.iter().map(|s| Corpus::from_lines(s.iter())).collect();
    let tok = Tokenizer::learn(&["en", "xx"], &[&corpora[0], &corpora[1]], 500)?;
    println!("vocabulary: {} entries, languages {:?}", tok.vocab.len(), tok.vocab.languages());
    for line in spelled[0].iter().take(3) {
        let ids = tok.encode(line);
        println!("{line}\n  -> {ids:?}\n  -> {}", tok.decode(&ids));
    }
    Ok(())
}
