use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::*;
use crate::autograd::Tape;
use crate::data::{gen_synthetic, ImageBatch, SyntheticSpec};
use crate::supergraph::{GradMode, NodeChoice, ParentNetwork};

/// Literal double sum, kept independent of the closed form.
fn eq3_oracle(p: [f64; 2], dl: [f64; 2]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for m in 0..2 {
        for n in 0..2 {
            let delta = if m == n { 1.0 } else { 0.0 };
            out[m] += dl[n] * p[n] * (delta - p[m]);
        }
    }
    out
}

fn sample(p_m: f64) -> TwoPathSample {
    TwoPathSample {
        op_m: 2,
        op_n: 5,
        p_m,
        p_n: 1.0 - p_m,
    }
}

#[test]
fn eq3_hand_case() {
    let g = alpha_grad(&sample(0.6), [1.0, 0.0]);
    assert_eq!(g, [(2, 0.24), (5, -0.24)]);
}

#[test]
fn eq3_equal_gradients_cancel() {
    for c in [-3.0, 0.0, 0.7, 12.5] {
        let g = alpha_grad(&sample(0.37), [c, c]);
        assert_eq!((g[0].1, g[1].1), (0.0, 0.0));
    }
}

#[test]
fn eq3_matches_literal_sum_and_cancels() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let s = sample(rng.random_range(1e-6..1.0 - 1e-6));
        let dl = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let g = alpha_grad(&s, dl);
        let o = eq3_oracle([s.p_m, s.p_n], dl);
        assert!((g[0].1 - o[0]).abs() < 1e-12 && (g[1].1 - o[1]).abs() < 1e-12);
        assert!((g[0].1 + g[1].1).abs() < 1e-12);
    }
}

#[test]
fn saturated_row_always_samples_the_dominant_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let row = [50.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    for _ in 0..2000 {
        let s = sample_two_paths(&row, &mut rng).unwrap();
        assert!(s.op_m == 0 || s.op_n == 0);
    }
}

#[test]
fn sample_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..2000 {
        let row: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let s = sample_two_paths(&row, &mut rng).unwrap();
        assert_ne!(s.op_m, s.op_n);
        assert!((s.p_m + s.p_n - 1.0).abs() < 1e-12);
        assert!(s.p_m > 0.0 && s.p_n > 0.0);
        let e = (row[s.op_m].exp(), row[s.op_n].exp());
        assert!((s.p_m - e.0 / (e.0 + e.1)).abs() < 1e-12);
    }
    assert!(sample_two_paths(&[1.0], &mut rng).is_err());
}

/// Probability of drawing `m` then `n` under sequential sampling.
fn ordered_pair_prob(q: &[f64], m: usize, n: usize) -> f64 {
    q[m] * q[n] / (1.0 - q[m])
}

#[test]
fn pair_frequencies_match_sequential_sampling() {
    let row: Vec<f64> = (1..=6).map(|v| (v as f64).ln()).collect();
    let q = softmax(&row);
    let draws = 100_000;
    let mut counts = [[0usize; 6]; 6];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..draws {
        let s = sample_two_paths(&row, &mut rng).unwrap();
        counts[s.op_m.min(s.op_n)][s.op_m.max(s.op_n)] += 1;
    }
    let mut pairs = 0;
    for a in 0..6 {
        for b in a + 1..6 {
            let p = ordered_pair_prob(&q, a, b) + ordered_pair_prob(&q, b, a);
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            let f = counts[a][b] as f64 / draws as f64;
            assert!((f - p).abs() <= 3.0 * se, "pair ({a},{b}): {f} vs {p}");
            pairs += 1;
        }
    }
    assert_eq!(pairs, 15);
}

/// Expected estimator over all ordered pairs for a node whose loss is
/// linear in the gates with slopes `c`.
fn estimator_expectation(row: &[f64], c: &[f64]) -> Vec<f64> {
    let q = softmax(row);
    let mut e = vec![0.0; row.len()];
    for m in 0..row.len() {
        for n in 0..row.len() {
            if m == n {
                continue;
            }
            let s = TwoPathSample {
                op_m: m,
                op_n: n,
                p_m: q[m] / (q[m] + q[n]),
                p_n: q[n] / (q[m] + q[n]),
            };
            let w = ordered_pair_prob(&q, m, n);
            for (op, g) in alpha_grad(&s, [c[m], c[n]]) {
                e[op] += w * g;
            }
        }
    }
    e
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

#[test]
fn monte_carlo_estimator_matches_enumeration() {
    let row: Vec<f64> = (1..=6).map(|v| (v as f64).ln()).collect();
    let c = [1.5, -0.5, 0.8, -1.2, 0.3, -0.9];
    let exact = estimator_expectation(&row, &c);
    let mut mean = vec![0.0; 6];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    for _ in 0..n {
        let s = sample_two_paths(&row, &mut rng).unwrap();
        for (op, g) in alpha_grad(&s, [c[s.op_m], c[s.op_n]]) {
            mean[op] += g / n as f64;
        }
    }
    let err = rel_l2(&mean, &exact);
    assert!(err < 0.02, "{err}: {mean:?} vs {exact:?}");
}

#[test]
fn two_op_estimator_is_the_exact_softmax_gradient() {
    let row = [0.4, -0.3];
    let c = [0.9, -0.2];
    let q = softmax(&row);
    let expected_loss_grad: Vec<f64> = (0..2)
        .map(|m| q[m] * (c[m] - (q[0] * c[0] + q[1] * c[1])))
        .collect();
    let mut mean = [0.0; 2];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10_000 {
        let s = sample_two_paths(&row, &mut rng).unwrap();
        for (op, g) in alpha_grad(&s, [c[s.op_m], c[s.op_n]]) {
            mean[op] += g / 10_000.0;
        }
    }
    assert!(rel_l2(&mean, &expected_loss_grad) < 0.02);
}

pub(crate) fn tiny_config(total_steps: u64) -> SearchConfig {
    SearchConfig::from_json(&format!(
        r#"{{
            "seed": 7, "M": 1, "N": 2, "K": 2, "C0": 4,
            "op_set": ["dwsep3x3", "conv3x3"],
            "batch_size": 8, "total_steps": {total_steps}, "val_size": 16,
            "dataset": {{"kind": "synthetic", "classes": 4, "side": 8,
                         "noise_sigma": 0.3, "samples_per_class": 20, "seed": 1}}
        }}"#
    ))
    .unwrap()
}

fn hash_params(net: &crate::supergraph::Supernet) -> Vec<u8> {
    let mut h = Sha256::new();
    for p in &net.params {
        h.update(p.to_le_bytes());
    }
    h.finalize().to_vec()
}

fn hash_alpha(alpha: &crate::supergraph::AlphaTable) -> Vec<u8> {
    let mut h = Sha256::new();
    for v in alpha.rows.iter().flatten() {
        h.update(v.to_le_bytes());
    }
    h.finalize().to_vec()
}

#[test]
fn steps_touch_only_their_own_parameters() {
    let mut run = SearchRun::new(&tiny_config(20)).unwrap();
    while !run.is_done() {
        let (w, a) = (hash_params(&run.state.parent.net), hash_alpha(&run.state.parent.alpha));
        let batch = run.train.batch(&run.split.weight_train[..8]);
        run.state.weight_step(&batch).unwrap();
        assert_eq!(hash_alpha(&run.state.parent.alpha), a);
        assert_ne!(hash_params(&run.state.parent.net), w);
        let w = hash_params(&run.state.parent.net);
        let batch = run.train.batch(&run.split.alpha_val[..8]);
        run.state.alpha_step(&batch).unwrap();
        assert_eq!(hash_params(&run.state.parent.net), w);
        run.state.step += 1;
    }
}

#[test]
fn first_weight_step_moves_by_lr_times_gradient() {
    let mut cfg = tiny_config(10);
    cfg.grad_clip = 0.0;
    let run = SearchRun::new(&cfg).unwrap();
    let mut state = run.state.clone();
    let batch = run.train.batch(&run.split.weight_train[..8]);
    let ops = [1, 0];
    let mut tape = Tape::new();
    let choices: Vec<NodeChoice> = ops.iter().map(|&o| NodeChoice::Single(o)).collect();
    let pass = state
        .parent
        .net
        .forward(&mut tape, &batch.images, &choices, GradMode::ALL)
        .unwrap();
    let loss = tape.cross_entropy(pass.logits, &batch.labels).unwrap();
    tape.backward(loss).unwrap();
    let grads = pass.binder.grads(&tape);
    let before = state.parent.net.params.clone();
    state.weight_step_with(&batch, &ops).unwrap();
    let lr = state.config.lr_w;
    for (id, g) in grads.iter().enumerate() {
        let after = &state.parent.net.params[id];
        for i in 0..after.len() {
            let want = before[id].data()[i] - lr * g.as_ref().map_or(0.0, |g| g.data()[i]);
            assert_eq!(after.data()[i], want);
        }
    }
}

#[test]
fn clipping_bounds_the_joint_norm() {
    use crate::tensor::Tensor;
    let mut g = vec![Some(Tensor::full([1, 1, 1, 4], 3.0)), None, Some(Tensor::full([1, 1, 1, 1], 4.0))];
    let norm = engine::clip_global_norm(&mut g, 5.0);
    assert!((norm - 52f64.sqrt()).abs() < 1e-12);
    let after: f64 = g.iter().flatten().flat_map(|t| t.data()).map(|v| v * v).sum();
    assert!((after.sqrt() - 5.0).abs() < 1e-12);
    let mut small = vec![Some(Tensor::full([1, 1, 1, 1], 0.5))];
    engine::clip_global_norm(&mut small, 5.0);
    assert_eq!(small[0].as_ref().unwrap().item(), 0.5);
}

#[test]
fn training_loss_halves_on_separable_data() {
    let mut cfg = tiny_config(200);
    cfg.dataset = crate::data::DatasetSpec::Synthetic {
        classes: 4,
        side: 8,
        noise_sigma: 0.05,
        samples_per_class: 40,
        seed: 2,
    };
    cfg.val_size = 16;
    let mut run = SearchRun::new(&cfg).unwrap();
    let mut losses = Vec::new();
    while !run.is_done() {
        losses.push(run.step().unwrap().train_loss);
    }
    let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = losses[losses.len() - 20..].iter().sum::<f64>() / 20.0;
    assert!(tail <= 0.5 * head, "{head} -> {tail}");
}

#[test]
fn alpha_favors_the_better_operation() {
    let mut cfg = tiny_config(300);
    cfg.nodes = 1;
    cfg.blocks = 1;
    cfg.op_set = vec![OpKind::Conv(3), OpKind::Conv(3)];
    let mut run = SearchRun::new(&cfg).unwrap();
    for b in &run.state.parent.net.node(0).ops[1].blocks.clone() {
        if let crate::supergraph::OpParams::Conv { w } = *b {
            run.state.parent.net.params[w] = crate::tensor::Tensor::zeros(run.state.parent.net.params[w].shape());
        }
    }
    let batch = run.train.batch(&run.split.weight_train[..32]);
    for _ in 0..100 {
        run.state.weight_step_with(&batch, &[0]).unwrap();
    }
    let val = run.train.batch(&run.split.alpha_val);
    let mut gap = 0.0;
    for i in 0..50 {
        run.state.alpha_step(&val).unwrap();
        let row = &run.state.parent.alpha.rows[0];
        let g = row[0] - row[1];
        assert!(g > gap, "step {i}: {g} <= {gap}");
        gap = g;
    }
}

#[test]
fn constant_loss_leaves_alpha_alone() {
    let mut run = SearchRun::new(&tiny_config(10)).unwrap();
    let net = &mut run.state.parent.net;
    for id in [net.head_w, net.head_b] {
        net.params[id] = crate::tensor::Tensor::zeros(net.params[id].shape());
    }
    let before = run.state.parent.alpha.clone();
    let val = run.train.batch(&run.split.alpha_val);
    for _ in 0..20 {
        run.state.alpha_step(&val).unwrap();
    }
    for (a, b) in run.state.parent.alpha.rows.iter().flatten().zip(before.rows.iter().flatten()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn non_finite_loss_is_reported() {
    let mut run = SearchRun::new(&tiny_config(10)).unwrap();
    let id = run.state.parent.net.stem;
    run.state.parent.net.params[id].data_mut()[0] = f64::NAN;
    let batch = run.train.batch(&run.split.weight_train[..8]);
    let err = run.state.weight_step(&batch).unwrap_err();
    assert!(matches!(err, crate::Error::NonFinite { op: "leaf", step: 0, .. }), "{err}");
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let (_, a) = run_search(&tiny_config(8)).unwrap();
    let (_, b) = run_search(&tiny_config(8)).unwrap();
    assert_eq!(a, b);
    let mut other = tiny_config(8);
    other.seed = 8;
    assert_ne!(run_search(&other).unwrap().1, a);
}

#[test]
fn zero_steps_checkpoint_is_the_fresh_network() {
    let cfg = tiny_config(0);
    let (state, ckpt) = run_search(&cfg).unwrap();
    let fresh = ParentNetwork::build(&cfg.network_shape(3, 4), cfg.seed).unwrap();
    assert_eq!(state.parent, fresh);
    let decoded = ckpt.decode(Path::new("mem")).unwrap();
    assert_eq!(decoded.parent, fresh);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut run = SearchRun::new(&tiny_config(6)).unwrap();
    for _ in 0..3 {
        run.step().unwrap();
    }
    let ckpt = run.checkpoint();
    let state = ckpt.decode(Path::new("mem")).unwrap();
    assert_eq!(Checkpoint::from_state(&state), ckpt);
    assert_eq!(state.parent, run.state.parent);
    assert_eq!(state.sgd, run.state.sgd);
    assert_eq!(state.adam, run.state.adam);
}

#[test]
fn resumed_search_matches_uninterrupted_search() {
    let (_, straight) = run_search(&tiny_config(6)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    let mut run = SearchRun::new(&tiny_config(6)).unwrap();
    for _ in 0..3 {
        run.step().unwrap();
    }
    run.checkpoint().write(&path).unwrap();
    let (state, _) = Checkpoint::load(&path).unwrap();
    let mut resumed = SearchRun::resume(state).unwrap();
    resumed.run(|_, _| Ok(())).unwrap();
    assert_eq!(resumed.checkpoint(), straight);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let (_, ckpt) = run_search(&tiny_config(1)).unwrap();
    let mut bad = ckpt.clone();
    let mid = bad.bytes.len() / 2;
    bad.bytes[mid] ^= 1;
    let msg = bad.decode(Path::new("x.ckpt")).unwrap_err().to_string();
    assert!(msg.contains("digest"), "{msg}");
    let mut old = ckpt.clone();
    old.bytes[8] = 9;
    let msg = old.decode(Path::new("x.ckpt")).unwrap_err().to_string();
    assert!(msg.contains("version 9"), "{msg}");
    let msg = Checkpoint { bytes: b"nonsense".to_vec() }
        .decode(Path::new("x.ckpt"))
        .unwrap_err()
        .to_string();
    assert!(msg.contains("magic"), "{msg}");
}

#[test]
fn config_validation() {
    let base = tiny_config(1);
    let mut j = serde_json::to_value(&base).unwrap();
    j["extra"] = 1.into();
    assert!(serde_json::from_value::<SearchConfig>(j).is_err());

    let mut c = base.clone();
    c.blocks = 3;
    let msg = c.validate().unwrap_err().to_string();
    assert!(msg.contains("K=3") && msg.contains("C0=4"), "{msg}");

    let mut c = base.clone();
    c.val_size = 64;
    assert!(c.validate().is_err());

    let mut c = base.clone();
    c.dataset = crate::data::DatasetSpec::Cifar10 {
        dir: "/nonexistent/cifar".into(),
    };
    assert!(matches!(c.validate().unwrap_err(), crate::Error::Dataset { .. }));

    let defaults = SearchConfig::from_json(
        r#"{"seed":0,"M":1,"N":2,"C0":8,"total_steps":1,
            "dataset":{"kind":"cifar10","dir":"/x"}}"#,
    )
    .unwrap();
    assert_eq!(defaults.blocks, 4);
    assert_eq!(defaults.lr_w, 0.1);
    assert_eq!(defaults.momentum, 0.9);
    assert_eq!(defaults.lr_alpha, 0.006);
    assert_eq!(defaults.val_size, 5000);
    assert_eq!(defaults.op_set, OpKind::default_set());
}

#[test]
fn synthetic_sets_feed_the_network() {
    let (train, _) = gen_synthetic(&SyntheticSpec {
        classes: 4,
        side: 8,
        noise_sigma: 0.3,
        samples_per_class: 5,
        seed: 0,
    })
    .unwrap();
    let b: ImageBatch = train.batch(&[0, 1, 2]);
    let parent = ParentNetwork::build(&tiny_config(1).network_shape(3, 4), 0).unwrap();
    let logits = parent.net.logits(&b.images, &[0, 1]).unwrap();
    assert_eq!(logits.shape(), [3, 4, 1, 1]);
}
