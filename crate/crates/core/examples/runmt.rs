//! Unsupervised S->T training helped by a reference language R that has
//! parallel data with S only.

use nmtkit::metrics::corpus_bleu_ids;
use nmtkit::model::{DecodeOptions, Model, ModelConfig};
use nmtkit::objectives::unmt::LanguageTriple;
use nmtkit::objectives::{AdamConfig, LossConfig, Objective, RunmtConfig, RunmtData, RunmtTrainer, TrainState};
use nmtkit::synth::{CipherSpec, CipherWorld};
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let langs = ["s", "t", "r"];
    let world = CipherWorld::new(&langs, CipherSpec::default())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut data = RunmtData::default();
    for (i, l) in langs.iter().enumerate() {
        data.mono.insert(l.to_string(), world.monolingual(i, 2000, &mut rng));
    }
    let mut sr = world.parallel(&[0, 2], 1000, &mut rng);
    data.parallel_reference = sr.pop().unwrap();
    data.parallel_source = sr.pop().unwrap();
    let mut test = world.parallel(&[0, 1], 100, &mut rng);
    let (tt, ts) = (test.pop().unwrap(), test.pop().unwrap());

    let mut cfg = ModelConfig::small(world.vocab_size(), &langs);
    cfg.width = 64;
    cfg.ffn_width = 128;
    let mut model = Model::new(cfg, 0)?;
    let mut state = TrainState::new(AdamConfig { lr: 1e-3, warmup: 400, ..Default::default() }, 0);
    let trainer = |objectives| {
        let cfg = RunmtConfig {
            langs: LanguageTriple::new("s", "t", "r"),
            objectives,
            batch_size: 32,
            max_len: 16,
            loss: LossConfig::default(),
            agreement_beam: 1,
        };
        RunmtTrainer::new(cfg, &data)
    };
    let schedule = [
        ("mlm", vec![Objective::Mlm], 300),
        ("dae+bt", vec![Objective::Dae, Objective::Bt], 100),
        ("dae+bt+rat+rabt+xbt", vec![Objective::Dae, Objective::Bt, Objective::Rat, Objective::Rabt, Objective::Xbt], 50),
    ];
    for (name, objectives, rounds) in schedule {
        let mut t = trainer(objectives)?;
        for _ in 0..rounds {
            t.round(&mut model, &mut state, &data)?;
        }
        let hyp = model.translate_best(&ts, "s", "t", DecodeOptions::greedy(20))?;
        println!("after {name}: S->T BLEU {:.2}", corpus_bleu_ids(&hyp, &tt)?.bleu);
    }
    Ok(())
}
