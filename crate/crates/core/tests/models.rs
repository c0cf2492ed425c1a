mod common;

use std::sync::Arc;

use atl_core::datasets::{split_folds, FoldSelector};
use atl_core::models::{fuse_weights, images_to_tensor, Architecture, Model, ModelRecipe, Segment, WeightArchive};
use atl_core::training::{evaluate_model, train_model, RunRegistry, TrainConfig, TrainOptions};
use atl_core::dsp::MelTensor;
use atl_core::Execution;
use candle_core::{DType, Tensor};

fn pseudo_random(n: usize, seed: u64) -> Vec<f32> {
    let mut x = seed;
    (0..n)
        .map(|_| {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 33) as f64 / (1u64 << 31) as f64 - 0.5) as f32 * 4.0
        })
        .collect()
}

#[test]
fn input_gradient_matches_finite_differences() {
    let model = Model::random(Architecture::Tiny, 3, 11, DType::F64).unwrap();
    let (c, h, w) = (3, 32, 32);
    let base = pseudo_random(c * h * w, 5);
    let x = MelTensor::from_vec(base.clone(), c, h, w).unwrap();
    let t = images_to_tensor(&[&x], DType::F64).unwrap();
    let (_, grad) = model.input_gradient(&t, 1).unwrap();
    let grad: Vec<f64> = grad.flatten_all().unwrap().to_vec1().unwrap();
    let score = |v: &[f64]| {
        let t = Tensor::from_slice(v, (1, c, h, w), &candle_core::Device::Cpu).unwrap();
        model.input_gradient(&t, 1).unwrap().0[0]
    };
    let x64: Vec<f64> = base.iter().map(|&v| f64::from(v)).collect();
    let eps = 1e-5;
    for i in [0, 17, 400, 1500, 3071] {
        let mut plus = x64.clone();
        let mut minus = x64.clone();
        plus[i] += eps;
        minus[i] -= eps;
        let numeric = (score(&plus) - score(&minus)) / (2.0 * eps);
        assert!(
            (numeric - grad[i]).abs() <= 1e-5 + 1e-3 * numeric.abs(),
            "coordinate {i}: analytic {} vs numeric {numeric}",
            grad[i]
        );
    }
}

#[test]
fn full_size_backbones_map_mel_input_to_class_logits() {
    let x = MelTensor::from_vec(pseudo_random(3 * 128 * 250, 1), 3, 128, 250).unwrap();
    for arch in [Architecture::DenseNet201, Architecture::ResNet(50), Architecture::InceptionV3] {
        let model = Model::random(arch, 50, 0, DType::F32).unwrap();
        let logits = model.logits(&[&x]).unwrap();
        assert_eq!((logits.len(), logits[0].len()), (1, 50), "{arch}");
        assert!(logits[0].iter().all(|v| v.is_finite()), "{arch}");
    }
}

#[test]
fn archive_round_trip_preserves_every_segment() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::random(Architecture::Tiny, 4, 21, DType::F32).unwrap();
    model.to_archive("test", true).unwrap().save(dir.path()).unwrap();
    let back = Model::from_parts(model.descriptor(), &WeightArchive::load(dir.path()).unwrap()).unwrap();
    for seg in Segment::ALL {
        assert_eq!(model.segment_checksum(seg).unwrap(), back.segment_checksum(seg).unwrap(), "{seg}");
    }
}

#[test]
fn partial_fusion_keeps_only_the_transplanted_prefix() {
    let source = Model::random(Architecture::Tiny, 9, 1, DType::F32).unwrap();
    let archive = source.to_archive("test", false).unwrap();
    let fused = fuse_weights(&archive, Segment::Block1, 2, 2).unwrap();
    for seg in Segment::FEATURES {
        let same = fused.segment_checksum(seg).unwrap() == source.segment_checksum(seg).unwrap();
        assert_eq!(same, seg <= Segment::Block1, "{seg}");
    }
}

#[test]
fn freezing_removes_parameters_from_the_optimiser() {
    let model = Model::random(Architecture::Tiny, 2, 3, DType::F32)
        .unwrap()
        .with_frozen_through(Some(Segment::Block2))
        .unwrap();
    let all = Model::random(Architecture::Tiny, 2, 3, DType::F32).unwrap();
    assert!(model.trainable_vars().len() < all.trainable_vars().len());
    for seg in Segment::ALL {
        assert_eq!(model.is_frozen(seg), seg <= Segment::Block2, "{seg}");
    }
}

#[test]
fn truncated_model_drops_later_blocks() {
    let model = Model::random(Architecture::Tiny, 5, 4, DType::F32)
        .unwrap()
        .truncate_after(Segment::Block2, 3, 4)
        .unwrap();
    assert_eq!(model.segments(), vec![Segment::Stem, Segment::Block1, Segment::Block2, Segment::Classifier]);
    let x = MelTensor::from_vec(pseudo_random(3 * 32 * 40, 2), 3, 32, 40).unwrap();
    assert_eq!(model.logits(&[&x]).unwrap()[0].len(), 3);
}

#[test]
fn reloaded_checkpoint_reproduces_the_recorded_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (set, store) = common::tone_store(&dir.path().join("store"), 20, 2, 8);
    let plan = split_folds(&set.manifest, FoldSelector::Fold(2)).unwrap();
    let registry = RunRegistry::new(dir.path().join("runs"));
    let source = Model::random(Architecture::Tiny, 5, 8, DType::F32).unwrap();
    let recipe = ModelRecipe::pretrained(Arc::new(source.to_archive("test", false).unwrap()))
        .frozen_through(Some(Segment::Stem));
    let mut model = recipe.instantiate(2, 8).unwrap();
    let opts = TrainOptions { registry: Some(&registry), ..Default::default() };
    let record = train_model(&mut model, &store, &plan, &TrainConfig::custom(2, 8), &opts).unwrap();
    let loaded = registry.load_checkpoint(&record.run_id).unwrap();
    let m = evaluate_model(&loaded, &store, &plan.val_ids, Execution::Sequential).unwrap();
    assert_eq!(m, record.final_val);
    assert_eq!(registry.load_record(&record.run_id).unwrap(), record);
}

#[test]
fn evaluation_leaves_weights_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let (set, store) = common::tone_store(dir.path(), 10, 2, 9);
    let model = Model::random(Architecture::Tiny, 2, 9, DType::F32).unwrap();
    let before: Vec<String> = Segment::ALL.iter().map(|&s| model.segment_checksum(s).unwrap()).collect();
    let ids: Vec<String> = set.manifest.entries.iter().map(|e| e.clip_id.clone()).collect();
    let a = evaluate_model(&model, &store, &ids, Execution::Parallel).unwrap();
    let b = evaluate_model(&model, &store, &ids, Execution::Sequential).unwrap();
    let after: Vec<String> = Segment::ALL.iter().map(|&s| model.segment_checksum(s).unwrap()).collect();
    assert_eq!(before, after);
    assert_eq!(a, b);
}
