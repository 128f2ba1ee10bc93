//! End to end through the public API: generate, write, reload, split,
//! normalize, train, checkpoint and evaluate.

use std::collections::HashSet;

use medmamba::data::{
    load_recordings, prepare_splits, subject_split, synth_centralized, NormStats, Part, SynthShape,
};
use medmamba::model::{MedMamba, ModelConfig};
use medmamba::numerics::Rng;
use medmamba::training::{evaluate, train_loop, TrainConfig, EVAL_CHUNK};

fn small_model(channels: usize, window: usize) -> ModelConfig {
    ModelConfig {
        channels,
        window,
        classes: 2,
        d_model: 8,
        n_layer: 1,
        d_state: 4,
        strides: vec![5, 10],
        ..ModelConfig::default()
    }
}

#[test]
fn dataset_survives_disk_and_trains_to_a_reloadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let shape = SynthShape {
        segments: 4,
        ..SynthShape::new(10, 3, 50, 7)
    };
    let ds = synth_centralized(&shape, 4.0).unwrap();
    let manifest = ds.write(dir.path()).unwrap();
    let recs = load_recordings(&manifest, None).unwrap();
    assert_eq!(recs.len(), ds.recordings.len());
    for (a, b) in recs.iter().zip(&ds.recordings) {
        assert_eq!((&a.subject_id, a.label), (&b.subject_id, b.label));
        let worst = a
            .values
            .data()
            .iter()
            .zip(b.values.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert_eq!(worst, 0.0, "CSV round trip must be exact");
    }

    let split = subject_split(&recs, [0.6, 0.2, 0.2], 3, true).unwrap();
    let parts: Vec<HashSet<&String>> =
        [Part::Train, Part::Val, Part::Test].map(|p| split.part(p).iter().collect()).into();
    assert!(parts.iter().all(|p| !p.is_empty()));
    assert!(parts[0].is_disjoint(&parts[1]) && parts[0].is_disjoint(&parts[2]) && parts[1].is_disjoint(&parts[2]));

    let prep = prepare_splits(&recs, &split, 50, 50).unwrap();
    assert_eq!(prep.train.len() + prep.val.len() + prep.test.len(), 10 * 4);

    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        warmup_epochs: 1,
        seed: 5,
        ..TrainConfig::default()
    };
    let model = MedMamba::new(small_model(3, 50), &Rng::new(5)).unwrap();
    let mut seen = 0;
    let outcome = train_loop(model, &prep.train, &prep.val, &cfg, |_| seen += 1).unwrap();
    assert_eq!((seen, outcome.history.records.len()), (2, 2));
    assert!((1..=2).contains(&outcome.best_epoch));

    let mut best = outcome.best;
    prep.stats.store_in(&mut best.params);
    let path = dir.path().join("best.ckpt");
    best.save(&path).unwrap();
    let loaded = MedMamba::load(&path).unwrap();
    assert_eq!(loaded.config, best.config);
    assert_eq!(NormStats::load_from(&loaded.params), Some(prep.stats.clone()));

    let a = best.predict(&prep.test.windows, EVAL_CHUNK).unwrap();
    let b = loaded.predict(&prep.test.windows, EVAL_CHUNK).unwrap();
    assert_eq!(a.data(), b.data());
    assert_eq!(evaluate(&best, &prep.test).unwrap(), evaluate(&loaded, &prep.test).unwrap());
}

#[test]
fn training_rejects_mismatched_windows() {
    let ds = synth_centralized(&SynthShape::new(6, 2, 40, 1), 1.0).unwrap();
    let split = subject_split(&ds.recordings, [0.5, 0.5, 0.0], 1, false).unwrap();
    let prep = prepare_splits(&ds.recordings, &split, 40, 40).unwrap();
    let model = MedMamba::new(small_model(3, 40), &Rng::new(1)).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let err = train_loop(model, &prep.train, &prep.val, &cfg, |_| {}).unwrap_err();
    assert_eq!(err.kind(), medmamba::ErrorKind::Config);
}
