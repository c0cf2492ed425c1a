mod common;

use std::time::Instant;

use atl_core::datasets::{FoldPlan, FoldSelector};
use atl_core::models::{Architecture, Model};
use atl_core::training::{evaluate_examples, fit, TrainConfig, TrainOptions};
use atl_core::Execution;
use candle_core::DType;

#[test]
fn tiny_overfits_two_tone_classes() {
    let dir = tempfile::tempdir().unwrap();
    let (set, store) = common::tone_store(dir.path(), 100, 2, 3);
    let ids: Vec<String> = set.manifest.entries.iter().map(|e| e.clip_id.clone()).collect();
    let plan = FoldPlan { selector: FoldSelector::Fold(0), train_ids: ids.clone(), val_ids: Vec::new() };
    let train = store.examples(&plan.train_ids, false).unwrap().preloaded().unwrap();
    let mut model = Model::random(Architecture::Tiny, 2, 11, DType::F32).unwrap();
    let cfg = TrainConfig::custom(10, 5);
    let t = Instant::now();
    let logs = fit(&mut model, &train, None, &cfg, &TrainOptions::default(), "sanity").unwrap();
    for l in &logs {
        eprintln!("epoch {} loss {:.4} acc {:.3}", l.epoch, l.train_loss, l.train_accuracy);
    }
    let m = evaluate_examples(&model, &train, Execution::default()).unwrap();
    eprintln!("eval-mode train accuracy {:.3} in {:?}", m.accuracy, t.elapsed());
    assert!(logs[9].train_loss < logs[0].train_loss);
    assert!(m.accuracy >= 0.95);
}
