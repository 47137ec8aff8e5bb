//! Train a small translator on a synthetic language pair and watch held-out
//! BLEU climb.

use nmtkit::metrics::corpus_bleu_ids;
use nmtkit::model::{DecodeOptions, Model, ModelConfig};
use nmtkit::objectives::{pick, train_step, AdamConfig, Sampler, TrainState};
use nmtkit::synth::{CipherSpec, CipherWorld};
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = CipherWorld::new(&["de", "en"], CipherSpec::default())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut train = world.parallel(&[0, 1], 2000, &mut rng);
    let mut test = world.parallel(&[0, 1], 100, &mut rng);
    let (y, x) = (train.pop().unwrap(), train.pop().unwrap());
    let (ty, tx) = (test.pop().unwrap(), test.pop().unwrap());

    let mut cfg = ModelConfig::small(world.vocab_size(), &["de", "en"]);
    cfg.width = 64;
    cfg.ffn_width = 128;
    let mut model = Model::new(cfg, 0)?;
    let mut state = TrainState::new(AdamConfig { lr: 2e-3, warmup: 200, ..Default::default() }, 0);
    let mut sampler = Sampler::new(x.len(), 32)?;
    for step in 1..=1000 {
        let idx = sampler.next(&mut state.rng);
        let (a, b) = (pick(&x, &idx), pick(&y, &idx));
        train_step(&mut model, &mut state, "supervised", |m, g, fwd, _| {
            m.translation_loss(g, &a, &b, "de", "en", None, 0.1, fwd).map(Some)
        })?;
        if step % 200 == 0 {
            let hyp = model.translate_best(&tx, "de", "en", DecodeOptions::greedy(20))?;
            println!("step {step}: BLEU {:.2}", corpus_bleu_ids(&hyp, &ty)?.bleu);
        }
    }
    Ok(())
}
