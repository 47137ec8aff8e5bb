use super::*;
use crate::model::ModelConfig;
use proptest::prelude::*;
use rand::Rng;

fn tiny() -> Model {
    let mut c = ModelConfig::small(40, &["s", "t"]);
    c.layers = 1;
    c.heads = 2;
    c.width = 8;
    c.ffn_width = 16;
    c.max_positions = 64;
    Model::new(c, 3).unwrap()
}

fn sentences(seed: u64, n: usize) -> Vec<Vec<usize>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..r.gen_range(1..8)).map(|_| r.gen_range(8..40)).collect()).collect()
}

fn quick(gamma: f64) -> CfstConfig {
    let mut c = CfstConfig::new(gamma, 5);
    c.backward.steps = 2;
    c.backward.batch_size = 4;
    c.max_len = 8;
    c
}

#[test]
fn bag_boundaries() {
    let b = default_bags(50.0);
    let got: Vec<usize> = [1, 10, 11, 30, 31, 500].iter().map(|&n| assign_length_bag(n, &b)).collect();
    assert_eq!(got, vec![0, 0, 1, 1, 2, 2]);
}

#[test]
fn bag_validation() {
    assert!(validate_bags(&default_bags(50.0)).is_ok());
    assert!(validate_bags(&[]).is_err());
    assert!(validate_bags(&[LengthBag { max_len: Some(10), gamma: 1.0 }]).is_err());
    let unordered = [
        LengthBag { max_len: Some(10), gamma: 1.0 },
        LengthBag { max_len: Some(5), gamma: 1.0 },
        LengthBag { max_len: None, gamma: 1.0 },
    ];
    assert!(validate_bags(&unordered).is_err());
    assert!(validate_bags(&[LengthBag { max_len: None, gamma: f64::NAN }]).is_err());
}

proptest! {
    #[test]
    fn halves_partition(n in 0usize..200, seed in any::<u64>()) {
        let [a, b] = split_halves(n, seed);
        prop_assert!(a.len() == b.len() || a.len() == b.len() + 1);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_halves(n, seed), [a, b]);
    }

    #[test]
    fn selection_shrinks_as_gamma_grows(
        scores in proptest::collection::vec(0.0f64..100.0, 1..60),
        g1 in 0.0f64..100.0,
        dg in 0.0f64..50.0,
    ) {
        let n = scores.len();
        let state = CfstState {
            split: [vec![], vec![]],
            translations: vec![vec![]; n],
            back: vec![vec![]; n],
            back_model: vec![0; n],
            bags: (0..n).map(|i| i % 3).collect(),
            scores,
            selected: vec![],
        };
        let lo = state.select(&default_bags(g1));
        let hi = state.select(&default_bags(g1 + dg));
        prop_assert!(hi.iter().all(|i| lo.contains(i)));
    }
}

#[test]
fn filter_keeps_halves_apart() {
    let m = tiny();
    let u = sentences(1, 9);
    let state = btbleu_filter(&m, &m, &u, "s", "t", &quick(50.0)).unwrap();
    state.check_invariants().unwrap();
    assert_eq!(state.split[0].len(), 5);
    assert_eq!(state.scores.len(), 9);
    assert!(state.scores.iter().all(|s| (0.0..=100.0).contains(s)));
    for (i, x) in u.iter().enumerate() {
        assert_eq!(state.scores[i], sentence_bleu_ids(&state.back[i], x));
    }
}

#[test]
fn filter_extremes() {
    let m = tiny();
    let u = sentences(2, 6);
    let all = btbleu_filter(&m, &m, &u, "s", "t", &quick(-1.0)).unwrap();
    assert_eq!(all.selected, (0..6).collect::<Vec<_>>());
    let none = btbleu_filter(&m, &m, &u, "s", "t", &quick(100.0)).unwrap();
    assert!(none.selected.is_empty());
    let report = none.bag_report(3);
    assert_eq!(report.iter().map(|r| r.1).sum::<usize>(), 6);
    assert!(report.iter().all(|r| r.2 == 0));
}

#[test]
fn filter_rejects_tiny_splits() {
    let m = tiny();
    let one = sentences(3, 1);
    assert!(matches!(btbleu_filter(&m, &m, &one, "s", "t", &quick(50.0)), Err(Error::Input(_))));
    let mut c = quick(50.0);
    c.min_split = 4;
    let six = sentences(3, 6);
    assert!(matches!(btbleu_filter(&m, &m, &six, "s", "t", &c), Err(Error::Config(_))));
}

#[test]
fn broken_invariants_are_reported() {
    let m = tiny();
    let u = sentences(4, 4);
    let mut state = btbleu_filter(&m, &m, &u, "s", "t", &quick(50.0)).unwrap();
    let i = state.split[0][0];
    state.back_model[i] = 0;
    assert!(matches!(state.check_invariants(), Err(Error::Contract(_))));
}

fn st_config(rounds: usize) -> SelfTrainConfig {
    SelfTrainConfig {
        rounds,
        steps_per_round: 2,
        batch_size: 4,
        max_len: 8,
        adam: AdamConfig::default(),
        smoothing: 0.0,
        patience: 1,
        seed: 1,
    }
}

#[test]
fn zero_rounds_is_identity() {
    let base = Checkpoint::new(tiny(), 1);
    let (src, tgt, u) = (sentences(5, 4), sentences(6, 4), sentences(7, 4));
    let data = SelfTrainData { labeled_src: &src, labeled_tgt: &tgt, unlabeled: &u, dev: None };
    let (out, reports) = classic_self_train(&base, &data, "s", "t", &SelectPolicy::All, &st_config(0)).unwrap();
    assert!(out.bit_eq(&base));
    assert!(reports.is_empty());
}

#[test]
fn self_train_input_errors() {
    let base = Checkpoint::new(tiny(), 1);
    let (src, tgt) = (sentences(5, 4), sentences(6, 3));
    let empty: Vec<Vec<usize>> = Vec::new();
    let data = SelfTrainData { labeled_src: &src, labeled_tgt: &src, unlabeled: &empty, dev: None };
    assert!(matches!(
        classic_self_train(&base, &data, "s", "t", &SelectPolicy::All, &st_config(1)),
        Err(Error::Input(_))
    ));
    let data = SelfTrainData { labeled_src: &src, labeled_tgt: &tgt, unlabeled: &src, dev: None };
    assert!(classic_self_train(&base, &data, "s", "t", &SelectPolicy::All, &st_config(1)).is_err());
}

#[test]
fn self_train_round_updates_model() {
    let base = Checkpoint::new(tiny(), 1);
    let (src, tgt, u) = (sentences(5, 6), sentences(6, 6), sentences(7, 6));
    let data = SelfTrainData { labeled_src: &src, labeled_tgt: &tgt, unlabeled: &u, dev: Some((&src, &tgt)) };
    let policy = SelectPolicy::TopLogprob { percent: 50.0 };
    let mut cfg = st_config(2);
    cfg.patience = 5;
    let (out, reports) = classic_self_train(&base, &data, "s", "t", &policy, &cfg).unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|r| r.selected == 3 && r.dev_bleu.is_some()));
    let again = classic_self_train(&base, &data, "s", "t", &policy, &cfg).unwrap().0;
    assert!(out.bit_eq(&again));
}

#[test]
fn top_logprob_bounds() {
    let m = tiny();
    let u = sentences(8, 5);
    let cfg = st_config(1);
    for bad in [0.0, -3.0, 100.5] {
        let p = SelectPolicy::TopLogprob { percent: bad };
        assert!(matches!(select_pseudo(&m, &u, "s", "t", &p, &cfg, 0), Err(Error::Config(_))));
    }
    let (all_s, all_t) = select_pseudo(&m, &u, "s", "t", &SelectPolicy::All, &cfg, 0).unwrap();
    let (s, t) = select_pseudo(&m, &u, "s", "t", &SelectPolicy::TopLogprob { percent: 100.0 }, &cfg, 0).unwrap();
    assert_eq!((all_s, all_t), (s, t));
}
