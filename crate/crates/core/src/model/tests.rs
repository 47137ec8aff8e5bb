use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::numerics::Tensor;
use crate::text::vocab::{CLS, EOS};

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn tiny(vocab: usize, fusion: FusionMode) -> ModelConfig {
    let mut c = ModelConfig::small(vocab, &["xx", "yy"]);
    c.layers = 2;
    c.heads = 2;
    c.width = 8;
    c.ffn_width = 12;
    c.max_positions = 64;
    c.fusion = fusion;
    if fusion != FusionMode::None {
        c.plm = Some(PlmConfig {
            vocab_size: vocab,
            layers: 2,
            heads: 2,
            width: 6,
            ffn_width: 10,
            max_positions: 64,
            attention: Vec::new(),
        });
        c.plm_layer = 1;
    }
    c
}

fn pair_oracle(n: usize, w: usize, d: usize, global: &[usize]) -> Vec<Vec<bool>> {
    let mut m = vec![vec![false; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let gap = (i as i64 - j as i64).unsigned_abs() as usize;
            let local = 2 * gap <= w && gap % d == 0;
            *cell = local || global.contains(&i) || global.contains(&j);
        }
    }
    m
}

#[test]
fn dilated_mask_matches_definition() {
    let p = AttentionPattern::Dilated { window: 2, dilation: 2 };
    let m = p.mask(8);
    assert_eq!(m, pair_oracle(8, 2, 2, &[]));
    // Reach 1 with even gaps leaves only the diagonal.
    for (i, row) in m.iter().enumerate() {
        assert_eq!(row.iter().filter(|&&a| a).count(), 1);
        assert!(row[i]);
    }
    assert_eq!(p.allowed_pairs(8), 8);
    let p = AttentionPattern::Dilated { window: 4, dilation: 2 };
    assert_eq!(p.mask(8), pair_oracle(8, 4, 2, &[]));
    assert_eq!(p.allowed_pairs(8), 20);
}

#[test]
fn selector_keys_agree_with_mask() {
    use crate::numerics::KeySelector;
    let patterns = [
        AttentionPattern::Sliding { window: 3 },
        AttentionPattern::Dilated { window: 6, dilation: 3 },
        AttentionPattern::GlobalSliding { window: 2, global: vec![0, 5] },
    ];
    for p in &patterns {
        let m = p.mask(11);
        for (i, row) in m.iter().enumerate() {
            let mut keys = Vec::new();
            p.keys(i, 11, 11, &mut keys);
            let want: Vec<usize> = (0..11).filter(|&j| row[j]).collect();
            assert_eq!(keys, want, "{p:?} row {i}");
        }
    }
}

#[test]
fn global_cls_row_and_column_open() {
    let p = AttentionPattern::GlobalSliding { window: 2, global: vec![0] };
    let m = p.mask(9);
    assert!(m[0].iter().all(|&a| a));
    assert!(m.iter().all(|row| row[0]));
    assert!(!m[4][7]);
    assert!(p.validate_for(9).is_ok());
    assert!(matches!(
        AttentionPattern::GlobalSliding { window: 2, global: vec![9] }.validate_for(9),
        Err(Error::Config(_))
    ));
    assert!(AttentionPattern::Sliding { window: 0 }.validate().is_err());
    assert!(AttentionPattern::Dilated { window: 2, dilation: 0 }.validate().is_err());
}

#[test]
fn wide_window_equals_dense() {
    let n = 9;
    let (q, k, v) = (rand_t(&[n, 8], 1), rand_t(&[n, 8], 2), rand_t(&[n, 8], 3));
    let sparse = sparse_attention(&q, &k, &v, 2, &AttentionPattern::Sliding { window: 2 * n }).unwrap();
    let dense = dense_attention(&q, &k, &v, 2, &AttentionPattern::Dense).unwrap();
    assert!(sparse.max_abs_diff(&dense) < 1e-9);
}

#[test]
fn sparse_kernel_matches_masked_dense() {
    let n = 13;
    let (q, k, v) = (rand_t(&[n, 12], 4), rand_t(&[n, 12], 5), rand_t(&[n, 12], 6));
    for p in [
        AttentionPattern::Sliding { window: 4 },
        AttentionPattern::Dilated { window: 8, dilation: 2 },
        AttentionPattern::GlobalSliding { window: 2, global: vec![0] },
    ] {
        let s = sparse_attention(&q, &k, &v, 3, &p).unwrap();
        let d = dense_attention(&q, &k, &v, 3, &p).unwrap();
        assert!(s.max_abs_diff(&d) < 1e-9, "{p:?}");
    }
}

#[test]
fn drop_net_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = [0usize; 3];
    let n = 100_000;
    for _ in 0..n {
        counts[match drop_net_sample(0.5, &mut rng) {
            Branch::FirstOnly => 0,
            Branch::BothAveraged => 1,
            Branch::SecondOnly => 2,
        }] += 1;
    }
    let f: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    assert!((f[0] - 0.25).abs() < 0.01 && (f[1] - 0.5).abs() < 0.01 && (f[2] - 0.25).abs() < 0.01, "{f:?}");
    for _ in 0..1000 {
        assert_eq!(drop_net_sample(0.0, &mut rng), Branch::BothAveraged);
        assert_ne!(drop_net_sample(1.0, &mut rng), Branch::BothAveraged);
    }
}

#[test]
fn config_invariants() {
    let mut c = tiny(20, FusionMode::Brlf);
    assert!(c.validate().is_ok());
    c.plm_layer = 3;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = tiny(20, FusionMode::None);
    c.heads = 3;
    assert!(c.validate().is_err());
    let mut c = tiny(20, FusionMode::None);
    c.drop_net = 1.5;
    assert!(c.validate().is_err());
    let mut c = tiny(20, FusionMode::Srlf);
    c.plm = None;
    assert!(c.validate().is_err());
}

fn dec_hidden(model: &Model, src: &[usize], dec_in: &[usize]) -> Vec<f64> {
    let mut g = Graph::inference(model);
    let src = vec![src.to_vec()];
    let dec = vec![dec_in.to_vec()];
    let mut fwd = Forward::inference();
    let (enc, pack) = model.encode(&mut g, &src, &uniform_langs(&src, 0), false, None, &mut fwd).unwrap();
    let h = model.decode(&mut g, &dec, &uniform_langs(&dec, 1), enc, &pack, None, &mut fwd).unwrap();
    g.tape.value(h).to_vec()
}

#[test]
fn decoder_is_causal() {
    let model = Model::new(tiny(24, FusionMode::None), 3).unwrap();
    let src = [9, 10, 11, EOS];
    let a = [7, 12, 13, 14, 15, 16];
    let base = dec_hidden(&model, &src, &a);
    let d = model.config.width;
    for j in 1..a.len() {
        let mut b = a;
        b[j] = 20;
        let out = dec_hidden(&model, &src, &b);
        assert_eq!(&out[..j * d], &base[..j * d], "position < {j} changed");
        assert_ne!(&out[j * d..], &base[j * d..]);
    }
}

#[test]
fn causal_encoder_mode_is_causal() {
    let model = Model::new(tiny(24, FusionMode::None), 4).unwrap();
    let run = |s: Vec<usize>| {
        let mut g = Graph::inference(&model);
        let seqs = vec![s];
        let (h, _) = model
            .encode(&mut g, &seqs, &uniform_langs(&seqs, 0), true, None, &mut Forward::inference())
            .unwrap();
        g.tape.value(h).to_vec()
    };
    let a = run(vec![6, 9, 10, 11, 12]);
    let b = run(vec![6, 9, 10, 19, 12]);
    assert_eq!(&a[..3 * 8], &b[..3 * 8]);
}

/// Central differences of the translation loss against tape gradients for
/// a handful of elements of each named parameter.
fn fd_check(model: &Model, names: &[&str]) -> f64 {
    let src = vec![vec![9, 10, 11], vec![12, 13]];
    let tgt = vec![vec![14, 15], vec![16, 17, 18]];
    let loss = |m: &Model, record: bool| -> (f64, Option<std::collections::BTreeMap<String, Vec<f64>>>) {
        let mut g = if record { Graph::new(m) } else { Graph::inference(m) };
        let l = m
            .translation_loss(&mut g, &src, &tgt, "xx", "yy", None, 0.0, &mut Forward::inference())
            .unwrap();
        let v = g.tape.scalar(l).unwrap();
        if !record {
            return (v, None);
        }
        let mut grads = g.tape.backward(l).unwrap();
        (v, Some(g.binder.collect_grads(&g.tape, &mut grads)))
    };
    let grads = loss(model, true).1.unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for name in names {
        let g = &grads[*name];
        assert!(g.iter().any(|&x| x != 0.0), "`{name}` got no gradient");
        let n = g.len();
        for e in [0, n / 3, n / 2, n - 1] {
            let mut plus = model.clone();
            plus.params.get_mut(name).unwrap().data_mut()[e] += h;
            let mut minus = model.clone();
            minus.params.get_mut(name).unwrap().data_mut()[e] -= h;
            let fd = (loss(&plus, false).0 - loss(&minus, false).0) / (2.0 * h);
            let rel = (fd - g[e]).abs() / fd.abs().max(g[e].abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn fusion_gradients_match_finite_differences() {
    for (mode, names) in [
        (FusionMode::Srlf, vec!["enc.layers.0.plm_attn.k.weight", "enc.layers.1.self_attn.q.weight"]),
        (FusionMode::Trlf, vec!["dec.layers.0.plm_attn.v.weight", "dec.layers.1.cross_attn.q.weight"]),
        (
            FusionMode::Brlf,
            vec!["enc.layers.1.plm_attn.o.weight", "dec.layers.1.plm_attn.q.weight", "embed.tokens"],
        ),
    ] {
        let model = Model::new(tiny(24, mode), 5).unwrap();
        let err = fd_check(&model, &names);
        assert!(err < 1e-4, "{mode:?}: {err}");
    }
}

#[test]
fn frozen_plm_gets_zero_gradient() {
    let src = vec![vec![9, 10, 11]];
    let tgt = vec![vec![14, 15]];
    for freeze in [true, false] {
        let mut c = tiny(24, FusionMode::Brlf);
        c.freeze_plm = freeze;
        let model = Model::new(c, 6).unwrap();
        let mut g = Graph::new(&model);
        let l = model
            .translation_loss(&mut g, &src, &tgt, "xx", "yy", None, 0.0, &mut Forward::inference())
            .unwrap();
        let mut grads = g.tape.backward(l).unwrap();
        let grads = g.binder.collect_grads(&g.tape, &mut grads);
        let plm_nonzero = grads
            .iter()
            .filter(|(n, _)| n.starts_with("plm.layers.0"))
            .any(|(_, g)| g.iter().any(|&x| x != 0.0));
        assert_eq!(plm_nonzero, !freeze);
    }
}

#[test]
fn encode_plm_layer_zero_is_embedding_plus_position() {
    let model = Model::new(tiny(24, FusionMode::Srlf), 7).unwrap();
    let ids = [9, 10, 11, 12];
    let h = model.encode_plm(&ids, 0).unwrap();
    assert_eq!(h.shape(), &[5, 6]);
    let table = model.params.get("plm.embed.tokens").unwrap();
    let pe = sinusoid_table(5, 6);
    let seq: Vec<usize> = std::iter::once(CLS).chain(ids).collect();
    for (r, &t) in seq.iter().enumerate() {
        for c in 0..6 {
            let want = table.row(t)[c] * 6f64.sqrt() + pe[r * 6 + c];
            assert!((h.row(r)[c] - want).abs() < 1e-12);
        }
    }
    assert!(h.bit_eq(&model.encode_plm(&ids, 0).unwrap()));
    assert!(h.bit_eq(&model.encode_plm(&ids, 0).unwrap()));
    let long = vec![9; 64];
    assert!(matches!(model.encode_plm(&long, 1), Err(Error::Input(_))));
}

#[test]
fn fusion_accepts_plm_length_mismatch() {
    let model = Model::new(tiny(24, FusionMode::Brlf), 8).unwrap();
    // A PLM tokenisation with more pieces than the NMT source.
    let ctx = Arc::new(model.encode_plm(&[9, 9, 10, 10, 11, 11, 12], 1).unwrap());
    let mut g = Graph::inference(&model);
    let l = model
        .translation_loss(
            &mut g,
            &[vec![9, 10]],
            &[vec![14]],
            "xx",
            "yy",
            Some(&[ctx]),
            0.0,
            &mut Forward::inference(),
        )
        .unwrap();
    assert!(g.tape.scalar(l).unwrap().is_finite());
}

#[test]
fn fused_branches_equal_when_inputs_coincide() {
    // Shared weights and H_P equal to the layer input make both terms match.
    let mut cfg = tiny(24, FusionMode::Srlf);
    cfg.layers = 1;
    if let Some(p) = cfg.plm.as_mut() {
        p.width = 8;
    }
    let mut model = Model::new(cfg, 9).unwrap();
    for proj in ["q", "k", "v", "o"] {
        for part in ["weight", "bias"] {
            let w = model.params.get(&format!("enc.layers.0.self_attn.{proj}.{part}")).unwrap().clone();
            model.params.insert(format!("enc.layers.0.plm_attn.{proj}.{part}"), w);
        }
    }
    let seq = vec![vec![9, 10, 11, EOS]];
    let mut g = Graph::inference(&model);
    let x = model.embed(&mut g, &seq, &uniform_langs(&seq, 0)).unwrap();
    let a = g.layer_norm("enc.layers.0.ln1", x).unwrap();
    let segs = Packed::of(&seq).self_segments();
    let all = crate::numerics::AllKeys;
    let s = g.attention("enc.layers.0.self_attn", 2, a, a, &segs, &all).unwrap();
    let p = g.attention("enc.layers.0.plm_attn", 2, a, a, &segs, &all).unwrap();
    let f = g.fuse(s, Some(p), Branch::BothAveraged).unwrap();
    for (x, y) in g.tape.value(s).iter().zip(g.tape.value(f)) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn training_mode_records_one_branch_per_fused_layer() {
    let mut c = tiny(24, FusionMode::Brlf);
    c.drop_net = 0.0;
    let model = Model::new(c, 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut fwd = Forward::training(&mut rng);
    let mut g = Graph::new(&model);
    model
        .translation_loss(&mut g, &[vec![9, 10]], &[vec![14]], "xx", "yy", None, 0.0, &mut fwd)
        .unwrap();
    assert_eq!(fwd.branches, vec![Branch::BothAveraged; 4]);
}

#[test]
fn missing_plm_context_is_config_error() {
    let model = Model::new(tiny(24, FusionMode::Srlf), 11).unwrap();
    let mut g = Graph::inference(&model);
    let seq = vec![vec![9, 10]];
    let r = model.encode(&mut g, &seq, &uniform_langs(&seq, 0), false, None, &mut Forward::inference());
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn incremental_decoding_matches_teacher_forcing() {
    for mode in [FusionMode::None, FusionMode::Brlf] {
        let model = Model::new(tiny(24, mode), 12).unwrap();
        let src = vec![vec![9, 10, 11], vec![12, 13, 14, 15, 16], vec![17]];
        let nbest = model.translate(&src, "xx", "yy", DecodeOptions::beam(3, 6)).unwrap();
        for (s, list) in src.iter().zip(&nbest) {
            assert!(!list.is_empty() && list.len() <= 3);
            for w in list.windows(2) {
                assert!(w[0].normalized() >= w[1].normalized());
            }
            for h in list {
                let sum: f64 = h.step_logprobs.iter().sum();
                assert!((sum - h.logprob).abs() < 1e-9);
                assert!(h.step_logprobs.len() <= 6);
                if h.finished {
                    let tf = model
                        .score(std::slice::from_ref(s), std::slice::from_ref(&h.tokens), "xx", "yy")
                        .unwrap()[0];
                    assert!((tf - h.logprob).abs() < 1e-9, "{mode:?}: {tf} vs {}", h.logprob);
                }
            }
        }
    }
}

/// Greedy trace by re-running the full teacher-forced decoder on every
/// prefix and taking the lowest-id argmax.
fn greedy_oracle(model: &Model, src: &[usize], max_len: usize) -> Vec<usize> {
    let tag = model.config.lang_tag_id("yy").unwrap();
    let mut enc_in = src.to_vec();
    enc_in.push(EOS);
    let mut out = Vec::new();
    for _ in 0..max_len {
        let dec_in: Vec<usize> = std::iter::once(tag).chain(out.iter().copied()).collect();
        let mut g = Graph::inference(model);
        let e = vec![enc_in.clone()];
        let d = vec![dec_in.clone()];
        let mut fwd = Forward::inference();
        let (enc, pack) = model.encode(&mut g, &e, &uniform_langs(&e, 0), false, None, &mut fwd).unwrap();
        let h = model.decode(&mut g, &d, &uniform_langs(&d, 1), enc, &pack, None, &mut fwd).unwrap();
        let z = model.logits(&mut g, h).unwrap();
        let v = model.config.vocab_size;
        let last = &g.tape.value(z)[(dec_in.len() - 1) * v..];
        let mut best = 0;
        for t in 1..v {
            if last[t] > last[best] {
                best = t;
            }
        }
        if best == EOS {
            break;
        }
        out.push(best);
    }
    out
}

#[test]
fn beam_one_equals_greedy_oracle() {
    let model = Model::new(tiny(24, FusionMode::None), 13).unwrap();
    let src = vec![vec![9, 10, 11], vec![20, 21], vec![12, 12, 12, 12]];
    let got = model.translate_best(&src, "xx", "yy", DecodeOptions::greedy(7)).unwrap();
    for (s, g) in src.iter().zip(&got) {
        assert_eq!(g, &greedy_oracle(&model, s, 7));
    }
}

#[test]
fn identical_members_reproduce_single_model() {
    let model = Model::new(tiny(24, FusionMode::None), 14).unwrap();
    let src: Vec<Vec<usize>> = (0..10).map(|i| vec![9 + i % 7, 10 + i % 5, 11]).collect();
    let opts = DecodeOptions::beam(2, 6);
    let (one, _) = joint_decode(&[Member::new(&model, &src, "xx")], "yy", opts).unwrap();
    let m = Member::new(&model, &src, "xx");
    let (two, stats) = joint_decode(&[m, m], "yy", opts).unwrap();
    assert_eq!(one, two);
    assert!(stats.max_normalization_error < 1e-9);
    let again = joint_decode(&[m], "yy", opts).unwrap().0;
    assert_eq!(one, again);
}

#[test]
fn joint_decode_errors() {
    let a = Model::new(tiny(24, FusionMode::None), 15).unwrap();
    let b = Model::new(tiny(30, FusionMode::None), 15).unwrap();
    let src = vec![vec![9, 10]];
    let r = joint_decode(&[Member::new(&a, &src, "xx"), Member::new(&b, &src, "xx")], "yy", DecodeOptions::greedy(4));
    assert!(matches!(r, Err(Error::Config(_))));
    let r = joint_decode(&[Member::new(&a, &src, "xx")], "yy", DecodeOptions::greedy(0));
    assert!(matches!(r, Err(Error::Input(_))));
    assert!(joint_decode(&[], "yy", DecodeOptions::greedy(3)).is_err());
}

#[test]
fn averaged_distribution_example() {
    let avg = average_distributions(&[vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3]]);
    for (a, b) in avg.iter().zip([0.4, 0.4, 0.2]) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!((avg.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut ck = Checkpoint::new(Model::new(tiny(24, FusionMode::Trlf), 16).unwrap(), 3);
    ck.step = 42;
    rand::Rng::gen::<u64>(&mut ck.rng);
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert!(ck.bit_eq(&back));

    let mut bad = ck.clone();
    bad.model.params.insert("stray", Tensor::zeros(&[1]));
    bad.save(&path).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Format(_))));
}

#[test]
fn document_cache_reuses_context() {
    let model = Model::new(tiny(24, FusionMode::Srlf), 17).unwrap();
    let cache = DocumentCache::new(&model, 1).unwrap();
    let doc = [9, 10, 11, 12, 13];
    let a = cache.get("d1", &doc).unwrap();
    let b = cache.get("d1", &doc).unwrap();
    assert!(Arc::ptr_eq(&a, &b));
    assert_eq!(cache.len(), 1);
    let single = cache.get("d2", &[9, 10]).unwrap();
    assert!(single.bit_eq(&model.encode_plm(&[9, 10], 1).unwrap()));
    assert!(matches!(cache.get("big", &[9; 64]), Err(Error::Chunk { len: 65, max: 64 })));
}
