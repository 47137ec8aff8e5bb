//! Keep only the pseudo-labelled sentences whose back-translation
//! reproduces the source well.

use nmtkit::model::{Model, ModelConfig};
use nmtkit::objectives::{joint_loss, pick, train_step, AdamConfig, Sampler, TrainState};
use nmtkit::selftrain::{btbleu_filter, CfstConfig};
use nmtkit::synth::{CipherSpec, CipherWorld};
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = CipherWorld::new(&["s", "t"], CipherSpec::default())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut labeled = world.parallel(&[0, 1], 2000, &mut rng);
    let (y, x) = (labeled.pop().unwrap(), labeled.pop().unwrap());
    let mut unlabeled = world.parallel(&[0, 1], 200, &mut rng);
    let (gold, u) = (unlabeled.pop().unwrap(), unlabeled.pop().unwrap());

    let mut cfg = ModelConfig::small(world.vocab_size(), &["s", "t"]);
    cfg.width = 32;
    cfg.ffn_width = 64;
    let mut model = Model::new(cfg, 0)?;
    let mut state = TrainState::new(AdamConfig { lr: 2e-3, warmup: 100, ..Default::default() }, 0);
    let mut sampler = Sampler::new(x.len(), 32)?;
    for _ in 0..300 {
        let idx = sampler.next(&mut state.rng);
        let (a, b) = (pick(&x, &idx), pick(&y, &idx));
        train_step(&mut model, &mut state, "joint", |m, g, fwd, _| joint_loss(m, g, &a, &b, "s", "t", 0.1, fwd).map(Some))?;
    }

    let mut c = CfstConfig::new(50.0, 0);
    c.max_len = 20;
    let st = btbleu_filter(&model, &model, &u, "s", "t", &c)?;
    let correct = |ids: &mut dyn Iterator<Item = usize>| ids.filter(|&i| st.translations[i] == gold[i]).count();
    println!("all {}: {} exactly right", u.len(), correct(&mut (0..u.len())));
    println!("kept {}: {} exactly right", st.selected.len(), correct(&mut st.selected.iter().copied()));
    Ok(())
}
