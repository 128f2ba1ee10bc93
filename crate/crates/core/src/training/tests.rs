use proptest::prelude::*;

use super::*;
use crate::data::WindowSet;
use crate::model::{MedMamba, ModelConfig};
use crate::numerics::{Rng, Tape, Tensor};
use crate::Error;

fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.normal()).collect())
}

// ---------------------------------------------------------------------------
// loss

#[test]
fn uniform_logits_give_log_k() {
    for k in 2..=10 {
        for eps in [0.0, 0.02, 0.3, 0.9] {
            let labels: Vec<usize> = (0..7).map(|i| i % k).collect();
            let loss = smoothed_ce_value(&Tensor::full(&[7, k], 1.3), &labels, eps).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-9);
        }
    }
    assert!((smoothed_ce_value(&Tensor::zeros(&[1, 3]), &[2], 0.02).unwrap() - 1.09861).abs() < 1e-5);
}

#[test]
fn smoothed_ce_hand_values() {
    let z = Tensor::from_vec(&[1, 2], vec![0.5f64.ln(), 0.5f64.ln()]);
    assert!((smoothed_ce_value(&z, &[1], 0.0).unwrap() - 2f64.ln()).abs() < 1e-15);
    let z = Tensor::from_vec(&[1, 2], vec![0.9f64.ln(), 0.1f64.ln()]);
    let expected = -(0.99 * 0.9f64.ln() + 0.01 * 0.1f64.ln());
    let got = smoothed_ce_value(&z, &[0], 0.02).unwrap();
    assert!((got - expected).abs() < 1e-14);
    assert!((got - 0.12733).abs() < 1e-5);
    assert!(matches!(smoothed_ce_value(&z, &[2], 0.02), Err(Error::Data(_))));
    assert!(smoothed_ce_value(&z, &[0], 1.0).is_err());
    assert!(smoothed_ce_value(&z, &[0, 1], 0.0).is_err());
}

#[test]
fn smoothed_ce_gradient_is_softmax_minus_target() {
    let mut rng = Rng::new(2);
    let z = randn(&mut rng, &[4, 3]);
    let labels = [0, 2, 1, 2];
    let eps = 0.1;
    let mut tape = Tape::new();
    let zv = tape.leaf(z.clone());
    let loss = smoothed_ce(&mut tape, zv, &labels, eps).unwrap();
    let g = tape.backward(loss).get_or_zeros(&tape, zv);
    let p = softmax_rows(&z);
    for i in 0..4 {
        for k in 0..3 {
            let q = if k == labels[i] { 1.0 - eps + eps / 3.0 } else { eps / 3.0 };
            assert!((g.at(&[i, k]) - (p.at(&[i, k]) - q) / 4.0).abs() < 1e-15);
        }
    }
}

// ---------------------------------------------------------------------------
// optimizer

fn store(values: &[(&str, Tensor)]) -> crate::model::ParamStore {
    let mut s = crate::model::ParamStore::new();
    for (k, v) in values {
        s.insert(*k, v.clone());
    }
    s
}

#[test]
fn adamw_closed_forms() {
    let cfg = TrainConfig {
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let mut p = store(&[("w", Tensor::from_vec(&[2], vec![0.3, -1.0]))]);
    let mut opt = AdamW::new();
    opt.step(&mut p, &[("w".into(), Tensor::zeros(&[2]))], 1e-3, &cfg).unwrap();
    assert_eq!(p.get("w").unwrap().data(), &[0.3, -1.0]);

    let mut p = store(&[("w", Tensor::scalar(2.0))]);
    let mut opt = AdamW::new();
    opt.step(&mut p, &[("w".into(), Tensor::scalar(1.0))], 1e-3, &cfg).unwrap();
    let delta = p.get("w").unwrap().item() - 2.0;
    assert!((delta + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);

    let cfg = TrainConfig::default();
    let mut p = store(&[("w", Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]))]);
    let mut opt = AdamW::new();
    opt.step(&mut p, &[("w".into(), Tensor::zeros(&[3]))], 1e-2, &cfg).unwrap();
    let shrink = 1.0 - 1e-2 * 0.1;
    assert_eq!(p.get("w").unwrap().data(), &[shrink, -2.0 * shrink, 0.5 * shrink]);
}

#[test]
fn adamw_matches_scalar_reference() {
    let cfg = TrainConfig::default();
    let mut rng = Rng::new(4);
    let grads: Vec<f64> = (0..25).map(|_| rng.normal()).collect();
    let lrs: Vec<f64> = (0..25).map(|i| 1e-3 * (1.0 + i as f64 / 10.0)).collect();
    let mut p = store(&[("w", Tensor::scalar(0.7))]);
    let mut opt = AdamW::new();
    let (mut theta, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
    for (t, (&g, &lr)) in grads.iter().zip(&lrs).enumerate() {
        opt.step(&mut p, &[("w".into(), Tensor::scalar(g))], lr, &cfg).unwrap();
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
        let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
        theta = theta - lr * 0.1 * theta - lr * mh / (vh.sqrt() + 1e-8);
        assert!((p.get("w").unwrap().item() - theta).abs() < 1e-14);
    }
    assert_eq!(opt.steps_taken(), 25);
}

#[test]
fn adamw_rejects_non_finite_gradients_without_side_effects() {
    let mut p = store(&[("a", Tensor::scalar(1.0)), ("b", Tensor::scalar(2.0))]);
    let before = p.clone();
    let mut opt = AdamW::new();
    let grads = [("a".to_string(), Tensor::scalar(1.0)), ("b".to_string(), Tensor::scalar(f64::NAN))];
    match opt.step(&mut p, &grads, 1e-3, &TrainConfig::default()) {
        Err(Error::NonFinite(msg)) => assert!(msg.contains('b'), "{msg}"),
        other => panic!("{other:?}"),
    }
    assert_eq!(p, before);
    assert_eq!(opt.steps_taken(), 0);
    let bad_shape = [("a".to_string(), Tensor::zeros(&[2]))];
    assert!(opt.step(&mut p, &bad_shape, 1e-3, &TrainConfig::default()).is_err());
}

// ---------------------------------------------------------------------------
// schedule and clipping

#[test]
fn schedule_endpoints() {
    let cfg = TrainConfig::default();
    let spe = 7;
    let total = cfg.epochs * spe;
    assert_eq!(lr_schedule(0, spe, &cfg), 0.01 * cfg.lr_peak);
    assert_eq!(lr_schedule(cfg.warmup_epochs * spe, spe, &cfg), cfg.lr_peak);
    assert_eq!(lr_schedule(total - 1, spe, &cfg), 0.0);
    let warm: Vec<f64> = (0..=cfg.warmup_epochs * spe).map(|s| lr_schedule(s, spe, &cfg)).collect();
    assert!(warm.windows(2).all(|w| w[1] > w[0]));
    let cos: Vec<f64> = (cfg.warmup_epochs * spe..total).map(|s| lr_schedule(s, spe, &cfg)).collect();
    assert!(cos.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn schedule_is_continuous() {
    for (epochs, warmup, spe) in [(50, 5, 7), (30, 5, 1), (10, 9, 3), (3, 5, 4), (8, 0, 5)] {
        let cfg = TrainConfig {
            epochs,
            warmup_epochs: warmup,
            ..TrainConfig::default()
        };
        let total = epochs * spe;
        let w = (warmup * spe).min((total - 1) / 2);
        let phase = w.min(total - 1 - w).max(1);
        let bound = 2.0 * cfg.lr_peak / phase as f64;
        for s in 1..total {
            let d = (lr_schedule(s, spe, &cfg) - lr_schedule(s - 1, spe, &cfg)).abs();
            assert!(d <= bound + 1e-18, "{epochs} {warmup} {spe} step {s}: {d} > {bound}");
        }
        assert_eq!(lr_schedule(total - 1, spe, &cfg), 0.0);
    }
}

fn grads(values: &[&[f64]]) -> Vec<(String, Tensor)> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| (format!("g{i}"), Tensor::from_vec(&[v.len()], v.to_vec())))
        .collect()
}

#[test]
fn clipping_examples() {
    let mut g = grads(&[&[2.0, 0.0], &[0.0]]);
    assert_eq!(clip_grad_norm(&mut g, 4.0), 2.0);
    assert_eq!(g, grads(&[&[2.0, 0.0], &[0.0]]));
    let mut g = grads(&[&[0.0, 8.0], &[0.0]]);
    assert_eq!(clip_grad_norm(&mut g, 4.0), 8.0);
    assert_eq!(g, grads(&[&[0.0, 4.0], &[0.0]]));
    let mut g = grads(&[&[0.0, 0.0]]);
    clip_grad_norm(&mut g, 4.0);
    assert_eq!(g, grads(&[&[0.0, 0.0]]));
}

// ---------------------------------------------------------------------------
// metrics

#[test]
fn metrics_hand_cases() {
    let labels = [0, 0, 1, 1];
    let logits = Tensor::from_vec(&[4, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    let m = compute_metrics(&logits, &labels).unwrap();
    assert_eq!(m.accuracy, 0.75);
    assert!((m.precision - 0.5 * (1.0 + 2.0 / 3.0)).abs() < 1e-15);
    assert!((m.recall - 0.75).abs() < 1e-15);
    assert!((m.f1 - 0.5 * (2.0 / 3.0 + 0.8)).abs() < 1e-15);
    assert!((m.precision - 0.8333).abs() < 1e-4 && (m.f1 - 0.7333).abs() < 1e-4);

    let perfect = Tensor::from_vec(&[4, 2], vec![2.0, 0.0, 3.0, 1.0, 0.0, 1.0, -1.0, 4.0]);
    let m = compute_metrics(&perfect, &labels).unwrap();
    assert_eq!((m.accuracy, m.precision, m.recall, m.f1, m.auroc), (1.0, 1.0, 1.0, 1.0, Some(1.0)));

    let constant = Tensor::full(&[4, 3], 0.2);
    assert_eq!(compute_metrics(&constant, &[0, 1, 2, 1]).unwrap().auroc, Some(0.5));

    let single = compute_metrics(&logits, &[1, 1, 1, 1]).unwrap();
    assert_eq!(single.auroc, None);
    assert_eq!(single.accuracy, 0.75);
    let json = serde_json::to_string(&single).unwrap();
    assert!(!json.contains("auroc"), "{json}");

    assert!(compute_metrics(&logits, &[0, 2, 1, 1]).is_err());
    assert!(compute_metrics(&logits, &[0, 1]).is_err());
}

/// Confusion matrix and all-pairs ROC, written independently of
/// `compute_metrics`.
fn brute_force(logits: &Tensor, labels: &[usize]) -> (f64, f64, f64, f64, Option<f64>) {
    let k = logits.shape()[1];
    let rows: Vec<&[f64]> = logits.data().chunks(k).collect();
    let preds: Vec<usize> = rows
        .iter()
        .map(|r| {
            let mut best = 0;
            for c in 1..k {
                if r[c] > r[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    let mut cm = vec![vec![0usize; k]; k];
    for (&y, &p) in labels.iter().zip(&preds) {
        cm[y][p] += 1;
    }
    let classes: Vec<usize> = (0..k).filter(|&c| labels.contains(&c) || preds.contains(&c)).collect();
    let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
    for &c in &classes {
        let tp = cm[c][c];
        let col: usize = (0..k).map(|r| cm[r][c]).sum();
        let row: usize = cm[c].iter().sum();
        let p = if col == 0 { 0.0 } else { tp as f64 / col as f64 };
        let r = if row == 0 { 0.0 } else { tp as f64 / row as f64 };
        ps += p;
        rs += r;
        fs += if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    let n = classes.len() as f64;
    let acc = (0..k).map(|c| cm[c][c]).sum::<usize>() as f64 / labels.len() as f64;

    let probs = softmax_rows(logits);
    let present: Vec<usize> = (0..k).filter(|c| labels.contains(c)).collect();
    let auroc = (present.len() >= 2).then(|| {
        present
            .iter()
            .map(|&c| {
                let score = |i: usize| probs.at(&[i, c]);
                let (mut wins, mut pairs) = (0.0, 0.0);
                for i in (0..labels.len()).filter(|&i| labels[i] == c) {
                    for j in (0..labels.len()).filter(|&j| labels[j] != c) {
                        pairs += 1.0;
                        wins += match score(i).partial_cmp(&score(j)).unwrap() {
                            std::cmp::Ordering::Greater => 1.0,
                            std::cmp::Ordering::Equal => 0.5,
                            std::cmp::Ordering::Less => 0.0,
                        };
                    }
                }
                wins / pairs
            })
            .sum::<f64>()
            / present.len() as f64
    });
    (acc, ps / n, rs / n, fs / n, auroc)
}

#[test]
fn metrics_match_brute_force() {
    let mut rng = Rng::new(12);
    for case in 0..1000 {
        let n = 1 + rng.below(50);
        let k = 2 + rng.below(4);
        // coarse integer scores force ties in both argmax and ranking
        let coarse = case % 2 == 0;
        let logits = Tensor::from_vec(
            &[n, k],
            (0..n * k).map(|_| if coarse { rng.below(3) as f64 } else { rng.normal() }).collect(),
        );
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let m = compute_metrics(&logits, &labels).unwrap();
        let (acc, p, r, f, auc) = brute_force(&logits, &labels);
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (acc, p, r, f), "case {case}");
        match (m.auroc, auc) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12, "case {case}: {a} vs {b}"),
            (None, None) => {}
            other => panic!("case {case}: {other:?}"),
        }
    }
}

#[test]
fn summary_over_runs() {
    let r = |acc: f64, auroc: Option<f64>| MetricsReport {
        n: 4,
        accuracy: acc,
        precision: acc,
        recall: acc,
        f1: acc,
        auroc,
    };
    let s = MetricsSummary::of(&[r(0.5, Some(0.6)), r(0.7, Some(0.8)), r(0.9, Some(1.0))]).unwrap();
    assert!((s.accuracy.mean - 0.7).abs() < 1e-15 && (s.accuracy.std - 0.2).abs() < 1e-15);
    assert!((s.auroc.unwrap().mean - 0.8).abs() < 1e-15);
    assert_eq!(MetricsSummary::of(&[r(0.5, None), r(0.7, Some(0.8))]).unwrap().auroc, None);
    assert_eq!(MetricsSummary::of(&[r(0.5, None)]).unwrap().accuracy.std, 0.0);
    assert!(MetricsSummary::of(&[]).is_none());
}

// ---------------------------------------------------------------------------
// training loop

fn toy_sets(cfg: &ModelConfig, seed: u64) -> (WindowSet, WindowSet) {
    let make = |n: usize, rng: &mut Rng| {
        let labels: Vec<usize> = (0..n).map(|i| i % cfg.classes).collect();
        let mut x = randn(rng, &[n, cfg.window, cfg.channels]);
        // class 1 carries an offset on channel 0
        for (i, &y) in labels.iter().enumerate() {
            for t in 0..cfg.window {
                let v = x.at(&[i, t, 0]) + 1.5 * y as f64;
                x.set(&[i, t, 0], v);
            }
        }
        WindowSet {
            windows: x,
            subjects: (0..n).map(|i| format!("s{i}")).collect(),
            labels,
            stats: None,
        }
    };
    let mut rng = Rng::new(seed);
    (make(12, &mut rng), make(6, &mut rng))
}

fn quick_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 5,
        lr_peak: 1e-2,
        warmup_epochs: 1,
        seed: 7,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_bitwise_reproducible() {
    let mcfg = ModelConfig::tiny();
    let (train, val) = toy_sets(&mcfg, 1);
    let run = |mcfg: &ModelConfig| {
        let model = MedMamba::new(mcfg.clone(), &Rng::new(3)).unwrap();
        train_loop(model, &train, &val, &quick_cfg(), |_| {}).unwrap()
    };
    let (a, b) = (run(&mcfg), run(&mcfg));
    assert_eq!(a.history.to_csv(), b.history.to_csv());
    assert_eq!(a.last.params, b.last.params);
    assert_eq!(a.best.params, b.best.params);
    assert_eq!(a.history.records.len(), 3);
    assert_ne!(a.last.params, MedMamba::new(mcfg.clone(), &Rng::new(3)).unwrap().params);

    let quiet = ModelConfig {
        p_ch: 0.0,
        p_do: 0.0,
        p_dp: 0.0,
        ..mcfg
    };
    let (c, d) = (run(&quiet), run(&quiet));
    assert_eq!(c.last.params, d.last.params);
    assert_eq!(c.history, {
        let mut h = d.history.clone();
        for (x, y) in h.records.iter_mut().zip(&c.history.records) {
            x.seconds = y.seconds;
        }
        h
    });
}

#[test]
fn zero_learning_rate_only_moves_running_statistics() {
    let mcfg = ModelConfig::tiny();
    let (train, val) = toy_sets(&mcfg, 2);
    let model = MedMamba::new(mcfg.clone(), &Rng::new(4)).unwrap();
    let cfg = TrainConfig {
        lr_peak: 0.0,
        ..quick_cfg()
    };
    let mut seen = Vec::new();
    let out = train_loop(model.clone(), &train, &val, &cfg, |r| seen.push(r.epoch)).unwrap();
    assert_eq!(seen, [1, 2, 3]);
    for (name, t) in model.params.iter() {
        let after = out.last.params.get(name).unwrap();
        if name.contains(".bn.running_") {
            assert_ne!(after, t, "{name}");
        } else {
            assert_eq!(after, t, "{name}");
        }
    }
    let r = &out.history.records;
    assert!(r.iter().all(|x| x.val.accuracy == r[0].val.accuracy && x.lr == 0.0));
    assert_eq!(out.best_epoch, 1);
}

#[test]
fn best_checkpoint_is_the_best_validation_f1() {
    let mcfg = ModelConfig::tiny();
    let (train, val) = toy_sets(&mcfg, 5);
    let model = MedMamba::new(mcfg, &Rng::new(6)).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        ..quick_cfg()
    };
    let out = train_loop(model, &train, &val, &cfg, |_| {}).unwrap();
    let f1s: Vec<f64> = out.history.records.iter().map(|r| r.val.f1).collect();
    let top = f1s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_epoch, f1s.iter().position(|&f| f == top).unwrap() + 1);
    assert_eq!(evaluate(&out.best, &val).unwrap(), out.history.records[out.best_epoch - 1].val);

    let csv = out.history.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], History::CSV_HEADER);
    assert_eq!(lines.len(), 6);
    assert!(lines[1].starts_with("1,"));
}

#[test]
fn training_input_errors() {
    let mcfg = ModelConfig::tiny();
    let (train, mut val) = toy_sets(&mcfg, 5);
    let model = MedMamba::new(mcfg.clone(), &Rng::new(6)).unwrap();
    let empty = WindowSet {
        windows: Tensor::zeros(&[0, mcfg.window, mcfg.channels]),
        labels: vec![],
        subjects: vec![],
        stats: None,
    };
    assert!(matches!(train_loop(model.clone(), &train, &empty, &quick_cfg(), |_| {}), Err(Error::Data(_))));
    let wrong = WindowSet {
        windows: Tensor::zeros(&[2, mcfg.window + 1, mcfg.channels]),
        labels: vec![0, 1],
        subjects: vec!["a".into(), "b".into()],
        stats: None,
    };
    match train_loop(model.clone(), &train, &wrong, &quick_cfg(), |_| {}) {
        Err(Error::Config(msg)) => assert!(msg.contains("L=31") && msg.contains("L=30"), "{msg}"),
        other => panic!("{other:?}"),
    }
    val.labels[0] = 5;
    assert!(matches!(train_loop(model.clone(), &train, &val, &quick_cfg(), |_| {}), Err(Error::Data(_))));
    let bad = TrainConfig {
        clip_norm: 0.0,
        ..quick_cfg()
    };
    assert!(matches!(train_loop(model, &train, &train, &bad, |_| {}), Err(Error::Config(_))));
}

#[test]
fn non_finite_loss_aborts_with_context() {
    let mcfg = ModelConfig::tiny();
    let (train, val) = toy_sets(&mcfg, 5);
    let mut model = MedMamba::new(mcfg, &Rng::new(6)).unwrap();
    let w = model.params.get_mut("head.b").unwrap();
    w.data_mut()[0] = f64::INFINITY;
    match train_loop(model, &train, &val, &quick_cfg(), |_| {}) {
        Err(Error::NonFinite(msg)) => assert!(msg.contains("epoch 1, batch 1"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn train_config_defaults() {
    let c = TrainConfig::default();
    assert_eq!((c.epochs, c.batch_size, c.warmup_epochs), (50, 512, 5));
    assert_eq!((c.lr_peak, c.weight_decay, c.warmup_start_frac), (5e-4, 0.1, 0.01));
    assert_eq!((c.clip_norm, c.label_smoothing, c.betas, c.adam_eps), (4.0, 0.02, [0.9, 0.999], 1e-8));
    let parsed: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
    assert_eq!(parsed, TrainConfig { epochs: 3, ..c });
    assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
}

#[test]
fn model_gradient_check_harness() {
    let report = model_grad_check(&ModelConfig::tiny(), 11, 1e-4).unwrap();
    assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
    assert!(report.entries.len() > 40);
    let big = ModelConfig {
        d_model: 64,
        ..ModelConfig::tiny()
    };
    assert!(matches!(model_grad_check(&big, 11, 1e-4), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn clipped_norm_never_exceeds_bound(v in proptest::collection::vec(-1e3f64..1e3, 1..20), max in 1e-3f64..100.0) {
        let (a, b) = v.split_at(v.len() / 2);
        let mut g = grads(&[a, b]);
        clip_grad_norm(&mut g, max);
        let n = g.iter().map(|(_, t)| t.norm_sq()).sum::<f64>().sqrt();
        prop_assert!(n <= max + 1e-9);
    }
}
