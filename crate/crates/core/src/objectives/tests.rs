use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::model::{log_softmax, uniform_langs, Checkpoint, Forward, Graph, Model, ModelConfig};
use crate::text::vocab::{BOS, EOS, MASK};

fn tiny() -> Model {
    let mut c = ModelConfig::small(40, &["s", "t", "r"]);
    c.layers = 1;
    c.heads = 2;
    c.width = 8;
    c.ffn_width = 16;
    c.max_positions = 64;
    Model::new(c, 1).unwrap()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn batch(seed: u64, n: usize) -> Vec<Vec<usize>> {
    use rand::Rng;
    let mut r = rng(seed);
    (0..n).map(|_| (0..r.gen_range(1..7)).map(|_| r.gen_range(9..40)).collect()).collect()
}

#[test]
fn zero_mask_probability_skips() {
    let m = tiny();
    let mut g = Graph::new(&m);
    let l = mlm_loss(&m, &mut g, &batch(1, 4), "s", 0.0, &mut rng(0), &mut Forward::inference()).unwrap();
    assert!(l.is_none());
    let bad = mlm_loss(&m, &mut g, &batch(1, 4), "s", 1.0, &mut rng(0), &mut Forward::inference());
    assert!(matches!(bad, Err(Error::Config(_))));
}

#[test]
fn masking_follows_the_80_10_10_split() {
    let seq: Vec<usize> = (0..20_000).map(|i| 10 + i % 30).collect();
    let m = mask_tokens(&seq, 0.5, 10..40, &[0], &mut rng(3));
    assert!(!m.positions.contains(&0));
    let n = m.positions.len() as f64;
    assert!((n / seq.len() as f64 - 0.5).abs() < 0.02);
    let masked = m.positions.iter().filter(|&&p| m.input[p] == MASK).count() as f64;
    let kept = m.positions.iter().filter(|&&p| m.input[p] == seq[p]).count() as f64;
    assert!((masked / n - 0.8).abs() < 0.02);
    // Random replacements may redraw the original token (1 in 30).
    assert!((kept / n - (0.1 + 0.1 / 30.0)).abs() < 0.02);
    for (&p, &t) in m.positions.iter().zip(&m.targets) {
        assert_eq!(seq[p], t);
    }
}

#[test]
fn clm_single_token_is_next_token_nll() {
    let m = tiny();
    let tok = 17;
    let mut g = Graph::inference(&m);
    let l = clm_loss(&m, &mut g, &[vec![tok]], "t", &mut Forward::inference()).unwrap();
    let loss = g.tape.scalar(l).unwrap();
    let mut g = Graph::inference(&m);
    let seqs = vec![vec![BOS]];
    let (h, _) = m
        .encode(&mut g, &seqs, &uniform_langs(&seqs, 1), true, None, &mut Forward::inference())
        .unwrap();
    let z = m.logits(&mut g, h).unwrap();
    let lp = log_softmax(g.tape.value(z));
    assert!((loss + lp[tok]).abs() < 1e-12);
}

#[test]
fn tlm_rejects_non_parallel_and_masks_both_sides() {
    let m = tiny();
    let mut g = Graph::new(&m);
    let r = tlm_loss(&m, &mut g, &batch(1, 3), &batch(2, 2), "s", "r", 0.15, &mut rng(0), &mut Forward::inference());
    assert!(matches!(r, Err(Error::Input(_))));
    let (mut left, mut right) = (0, 0);
    for seed in 0..200 {
        let a = vec![9, 10, 11, 12];
        let b = vec![13, 14, 15];
        let seq: Vec<usize> = a.iter().chain([&EOS]).chain(&b).chain([&EOS]).copied().collect();
        let mk = mask_tokens(&seq, 0.15, 9..40, &[4, 8], &mut rng(seed));
        left += mk.positions.iter().filter(|&&p| p < 4).count();
        right += mk.positions.iter().filter(|&&p| p > 4 && p < 8).count();
        assert!(!mk.positions.contains(&4) && !mk.positions.contains(&8));
    }
    assert!(left > 0 && right > 0);
    let l = tlm_loss(&m, &mut g, &batch(1, 3), &batch(2, 3), "s", "r", 0.5, &mut rng(0), &mut Forward::inference())
        .unwrap()
        .unwrap();
    assert!(g.tape.scalar(l).unwrap().is_finite());
}

#[test]
fn joint_loss_is_sum_of_directions() {
    let m = tiny();
    for seed in 0..10 {
        let (x, y) = (batch(seed, 3), batch(seed + 100, 3));
        let mut g = Graph::new(&m);
        let j = joint_loss(&m, &mut g, &x, &y, "s", "r", 0.1, &mut Forward::inference()).unwrap();
        let joint = g.tape.scalar(j).unwrap();
        let one = |a: &[Vec<usize>], b: &[Vec<usize>], la: &str, lb: &str| {
            let mut g = Graph::new(&m);
            let l = m.translation_loss(&mut g, a, b, la, lb, None, 0.1, &mut Forward::inference()).unwrap();
            g.tape.scalar(l).unwrap()
        };
        let sum = one(&x, &y, "s", "r") + one(&y, &x, "r", "s");
        assert!((joint - sum).abs() < 1e-9);
    }
    let x = batch(7, 2);
    let mut g = Graph::new(&m);
    let a = m.translation_loss(&mut g, &x, &x, "s", "s", None, 0.0, &mut Forward::inference()).unwrap();
    let mut g2 = Graph::new(&m);
    let j = joint_loss(&m, &mut g2, &x, &x, "s", "s", 0.0, &mut Forward::inference()).unwrap();
    assert_eq!(g2.tape.scalar(j).unwrap(), 2.0 * g.tape.scalar(a).unwrap());
}

#[test]
fn unsmoothed_loss_is_plain_cross_entropy() {
    let m = tiny();
    let (x, y) = (vec![vec![9, 10, 11]], vec![vec![12, 13]]);
    let mut g = Graph::inference(&m);
    let l = m.translation_loss(&mut g, &x, &y, "s", "t", None, 0.0, &mut Forward::inference()).unwrap();
    let ce = g.tape.scalar(l).unwrap();
    let mut g = Graph::inference(&m);
    let enc = vec![vec![9, 10, 11, EOS]];
    let dec = vec![vec![m.config.lang_tag_id("t").unwrap(), 12, 13]];
    let mut fwd = Forward::inference();
    let (h, pack) = m.encode(&mut g, &enc, &uniform_langs(&enc, 0), false, None, &mut fwd).unwrap();
    let d = m.decode(&mut g, &dec, &uniform_langs(&dec, 1), h, &pack, None, &mut fwd).unwrap();
    let z = m.logits(&mut g, d).unwrap();
    let v = m.config.vocab_size;
    let nll: f64 = [12, 13, EOS]
        .iter()
        .enumerate()
        .map(|(i, &t)| -log_softmax(&g.tape.value(z)[i * v..(i + 1) * v])[t])
        .sum();
    assert!((ce - nll).abs() < 1e-12);
}

#[test]
fn finetune_zero_steps_is_parent() {
    let parent = Checkpoint::new(tiny(), 4);
    let cfg = FinetuneConfig { steps: 0, batch_size: 2, smoothing: 0.1, adam: AdamConfig::default(), seed: 0 };
    let (x, y) = (batch(1, 4), batch(2, 4));
    let (child, _) = finetune(&parent, &x, &y, "s", "t", &cfg).unwrap();
    assert!(child.bit_eq(&parent));
    assert!(matches!(finetune(&parent, &x, &y, "s", "zz", &cfg), Err(Error::Config(_))));
    let (child, state) = finetune(&parent, &x, &y, "s", "t", &FinetuneConfig { steps: 3, ..cfg }).unwrap();
    assert!(!child.model.bit_eq(&parent.model));
    assert_eq!((child.step, state.step()), (3, 3));
}

#[test]
fn noise_respects_window_and_keeps_a_token() {
    let seq: Vec<usize> = (0..30).collect();
    assert_eq!(add_noise(&seq, NoiseConfig { word_drop: 0.0, shuffle_window: 0 }, &mut rng(1)), seq);
    for seed in 0..50 {
        let out = add_noise(&seq, NoiseConfig { word_drop: 0.0, shuffle_window: 3 }, &mut rng(seed));
        let mut sorted = out.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, seq);
        for (i, &t) in out.iter().enumerate() {
            assert!(i.abs_diff(t) <= 3);
        }
        let dropped = add_noise(&[5], NoiseConfig { word_drop: 0.99, shuffle_window: 3 }, &mut rng(seed));
        assert_eq!(dropped, vec![5]);
    }
}

#[test]
fn pseudo_pairs_have_the_documented_layout() {
    let langs = LanguageTriple::new("s", "t", "r");
    let (s, r) = (batch(1, 3), batch(2, 3));
    let (ts, tr) = (batch(3, 3), batch(4, 3));
    let [a, b] = xbt_batches(&s, &r, &ts, &tr, &langs);
    assert_eq!((&a.src, &a.tgt, a.src_lang.as_str(), a.tgt_lang.as_str()), (&ts, &r, "t", "r"));
    assert_eq!((&b.src, &b.tgt, b.src_lang.as_str(), b.tgt_lang.as_str()), (&tr, &s, "t", "s"));
    // With the gold target as agreed output RABT is plain supervision.
    let gold = batch(5, 3);
    let [x, y] = rabt_batches(&s, &r, &gold, &langs);
    assert_eq!((&x.src, &x.tgt, x.smoothing), (&gold, &s, 0.0));
    assert_eq!((&y.src, &y.tgt, y.tgt_lang.as_str()), (&gold, &r, "r"));
    let [p, q] = rat_batches(&s, &r, &gold, &langs, 0.1);
    assert_eq!((&p.src, &p.tgt, p.smoothing, q.src_lang.as_str()), (&s, &gold, 0.1, "r"));
}

#[test]
fn identical_inputs_agree_with_single_decode() {
    let m = tiny();
    let langs = LanguageTriple::new("s", "t", "s");
    let s = batch(9, 5);
    let agreed = agreed_translations(&m, &m, &s, &s, &langs, crate::model::DecodeOptions::greedy(8)).unwrap();
    let single = generate(&m, &s, "s", "t", crate::model::DecodeOptions::greedy(8)).unwrap();
    assert_eq!(agreed, single);
}

#[test]
fn adam_schedule_and_first_step() {
    let c = AdamConfig { lr: 1e-3, warmup: 100, clip: 0.0, ..Default::default() };
    assert!((c.lr_at(100) - 1e-3).abs() < 1e-18);
    assert!((c.lr_at(50) - 5e-4).abs() < 1e-18);
    assert!((c.lr_at(400) - 5e-4).abs() < 1e-18);
    let mut store = crate::numerics::ParamStore::new();
    store.insert("w", crate::numerics::Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
    let mut adam = Adam::new(c);
    let grads = [("w".to_string(), vec![0.5, -2.0])].into_iter().collect();
    adam.apply(&mut store, &grads, &[]).unwrap();
    // First bias-corrected step moves by lr_1 * g / (|g| + eps).
    let lr1 = c.lr_at(1);
    let w = store.get("w").unwrap().data().to_vec();
    assert!((w[0] - (1.0 - lr1 * 0.5 / (0.5 + 1e-9))).abs() < 1e-15);
    assert!((w[1] - (-1.0 + lr1 * 2.0 / (2.0 + 1e-9))).abs() < 1e-15);
    adam.apply(&mut store, &grads, &["w"]).unwrap();
    assert!((store.get("w").unwrap().data()[0] - w[0]).abs() == 0.0);
}

fn runmt_fixture() -> (RunmtData, RunmtConfig) {
    let mut data = RunmtData::default();
    for (i, l) in ["s", "t", "r"].iter().enumerate() {
        data.mono.insert(l.to_string(), batch(10 + i as u64, 8));
    }
    data.parallel_source = batch(20, 6);
    data.parallel_reference = batch(21, 6);
    let cfg = RunmtConfig {
        langs: LanguageTriple::new("s", "t", "r"),
        objectives: vec![
            Objective::Mlm,
            Objective::Dae,
            Objective::Bt,
            Objective::Supervised,
            Objective::Rat,
            Objective::Rabt,
            Objective::Xbt,
        ],
        batch_size: 3,
        max_len: 6,
        loss: LossConfig::default(),
        agreement_beam: 2,
    };
    (data, cfg)
}

#[test]
fn runmt_rounds_are_deterministic_and_resumable() {
    let (data, cfg) = runmt_fixture();
    let run = |rounds: usize| {
        let mut m = tiny();
        let mut st = TrainState::new(AdamConfig::default(), 5);
        let mut tr = RunmtTrainer::new(cfg.clone(), &data).unwrap();
        let mut losses = Vec::new();
        for _ in 0..rounds {
            losses.extend(tr.round(&mut m, &mut st, &data).unwrap());
        }
        (m, st, losses)
    };
    let (m1, s1, l1) = run(2);
    let (m2, s2, l2) = run(2);
    assert_eq!(l1, l2);
    assert!(m1.bit_eq(&m2));
    assert_eq!(s1.history_csv(), s2.history_csv());
    assert_eq!(l1.len(), 14);
    assert!(l1.iter().all(|(_, l)| l.is_finite()));
}

#[test]
fn train_state_round_trip_resumes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = (batch(1, 6), batch(2, 6));
    let step = |m: &mut Model, st: &mut TrainState| {
        let mut sam = Sampler::new(6, 2).unwrap();
        for _ in 0..3 {
            let idx = sam.next(&mut st.rng);
            let (a, b) = (pick(&x, &idx), pick(&y, &idx));
            train_step(m, st, "sup", |m, g, f, _| m.translation_loss(g, &a, &b, "s", "t", None, 0.1, f).map(Some)).unwrap();
        }
    };
    let mut m = tiny();
    let mut st = TrainState::new(AdamConfig::default(), 9);
    step(&mut m, &mut st);
    let ck = Checkpoint { model: m.clone(), step: st.step(), rng: st.rng.clone() };
    ck.save(&dir.path().join("m.ckpt")).unwrap();
    st.save(&dir.path().join("m.state")).unwrap();
    step(&mut m, &mut st);

    let mut m2 = Checkpoint::load(&dir.path().join("m.ckpt")).unwrap().model;
    let mut st2 = TrainState::load(&dir.path().join("m.state")).unwrap();
    step(&mut m2, &mut st2);
    assert!(m.bit_eq(&m2));
    assert_eq!(st.history, st2.history);
}

#[test]
fn loss_config_bounds() {
    assert!(LossConfig::default().validate().is_ok());
    assert!(LossConfig { smoothing: 1.0, ..Default::default() }.validate().is_err());
    assert!(LossConfig { mask_prob: 0.0, ..Default::default() }.validate().is_err());
}
