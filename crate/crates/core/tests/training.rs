use std::fs;
use std::path::Path;

use mgp_core::nn::ParamSet;
use mgp_core::synthdata::{make_splits, render, Lexicon};
use mgp_core::trainer::{Record, TrainConfig, Trainer, METRICS_FILE};
use mgp_core::Granularity;

fn steps_without_time(dir: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(dir.join(METRICS_FILE))
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_time");
            v
        })
        .collect()
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let train = make_splits(&Lexicon::default(), 24, 0, 5, true).unwrap().0;
    let cfg = TrainConfig {
        batch_size: 8,
        epochs: 2,
        seed: 4,
        log_every: Some(1),
        bpe_merges: 32,
        wp_vocab: 100,
        ..Default::default()
    };

    let straight = tempfile::tempdir().unwrap();
    let mut a = Trainer::new(cfg.clone(), &train).unwrap();
    a.run(&train, None, Some(straight.path())).unwrap();

    let split = tempfile::tempdir().unwrap();
    let first = TrainConfig { max_steps: Some(3), ..cfg.clone() };
    Trainer::new(first, &train).unwrap().run(&train, None, Some(split.path())).unwrap();
    let mut b = Trainer::resume(cfg, split.path()).unwrap();
    let summary = b.run(&train, None, Some(split.path())).unwrap();
    assert_eq!(summary.steps, 6);
    assert!(summary.records.iter().all(|r| match r {
        Record::Step { epoch, .. } | Record::Epoch { epoch, .. } => *epoch == 2,
    }));

    assert_eq!(steps_without_time(straight.path()), steps_without_time(split.path()));
    let pa = ParamSet::from_module(&a.recognizer.model);
    let pb = ParamSet::from_module(&b.recognizer.model);
    assert_eq!(pa.len(), pb.len());
    for (name, t) in pa.iter() {
        let u = pb.get(name).unwrap();
        assert!(
            t.data().iter().zip(u.data()).all(|(x, y)| x.to_bits() == y.to_bits()),
            "{name}"
        );
    }
}

#[test]
fn single_sample_is_memorized() {
    let sample = render("watercourse", 3, false).unwrap();
    let train = vec![sample];
    let cfg = TrainConfig {
        batch_size: 1,
        epochs: 500,
        seed: 1,
        heads: vec![Granularity::Char],
        ..Default::default()
    };
    let mut t = Trainer::new(cfg, &train).unwrap();
    let summary = t.run(&train, None, None).unwrap();
    let (scores, _) = summary.last_epoch().unwrap();
    let loss = scores.loss["char"];
    println!("char loss after 500 single-sample steps: {loss:.4}");
    assert!(loss < 0.05, "char loss {loss}");
}
