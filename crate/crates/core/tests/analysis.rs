mod common;

use std::sync::Arc;

use atl_core::analysis::{
    capture_activations, integrated_gradients, run_ablation_suite, svcca_similarity, weights_change_curve,
    ActivationMatrix, AblationKind, Attributable, LinearScorer, Scaled,
};
use atl_core::datasets::{split_folds, FoldSelector};
use atl_core::dsp::MelTensor;
use atl_core::models::{Architecture, Model, Segment};
use atl_core::training::{evaluate_model, RunRegistry, TrainConfig, TrainOptions};
use atl_core::{Error, Execution, Result};
use candle_core::DType;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut x = seed | 1;
    DMatrix::from_fn(n, d, |_, _| {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    })
}

fn act(m: DMatrix<f64>) -> ActivationMatrix {
    ActivationMatrix::new(m, "probe", "test").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn svcca_is_symmetric_and_bounded(seed in any::<u64>(), da in 2usize..8, db in 2usize..8) {
        let a = act(matrix(60, da, seed));
        let b = act(matrix(60, db, seed.wrapping_add(1)));
        let ab = svcca_similarity(&a, &b, 0.99).unwrap();
        let ba = svcca_similarity(&b, &a, 0.99).unwrap();
        prop_assert!((ab.mean - ba.mean).abs() < 1e-9);
        prop_assert!(ab.correlations.iter().all(|&r| (0.0..=1.0).contains(&r)));
        prop_assert!(ab.correlations.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!((0.0..=1.0).contains(&ab.mean));
    }

    #[test]
    fn svcca_ignores_scale_and_shift(seed in any::<u64>(), scale in 0.01f64..100.0, shift in -50.0f64..50.0) {
        let a = matrix(80, 5, seed);
        let b = matrix(80, 4, !seed);
        let moved = a.map(|v| v * scale + shift);
        let r1 = svcca_similarity(&act(a), &act(b.clone()), 1.0).unwrap();
        let r2 = svcca_similarity(&act(moved), &act(b), 1.0).unwrap();
        prop_assert!((r1.mean - r2.mean).abs() < 1e-8);
    }

    #[test]
    fn linear_attribution_is_exact_for_any_baseline(
        w in proptest::collection::vec(-3.0f64..3.0, 12),
        x in proptest::collection::vec(-3.0f32..3.0, 12),
        b in proptest::collection::vec(-3.0f32..3.0, 12),
        steps in 1usize..40,
    ) {
        let scorer = LinearScorer { weights: vec![w.clone()], bias: vec![0.3] };
        let xt = MelTensor::from_vec(x.clone(), 1, 3, 4).unwrap();
        let bt = MelTensor::from_vec(b.clone(), 1, 3, 4).unwrap();
        let ig = integrated_gradients(&scorer, &xt, &bt, "custom", steps, 0).unwrap();
        for i in 0..12 {
            let exact = w[i] * (f64::from(x[i]) - f64::from(b[i]));
            prop_assert!((ig.values[i] - exact).abs() < 1e-9);
        }
        prop_assert!(ig.residual < 1e-9);
    }

    #[test]
    fn attribution_scales_with_the_model(factor in -5.0f64..5.0, steps in 1usize..20) {
        let inner = Quadratic(vec![0.5, -1.0, 2.0, 0.25]);
        let scaled = Scaled { inner: &inner, factor };
        let x = MelTensor::from_vec(vec![1.0, -0.5, 0.75, 2.0], 1, 2, 2).unwrap();
        let base = MelTensor::zeros(1, 2, 2);
        let a = integrated_gradients(&inner, &x, &base, "zero", steps, 0).unwrap();
        let b = integrated_gradients(&scaled, &x, &base, "zero", steps, 0).unwrap();
        for (u, v) in a.values.iter().zip(&b.values) {
            prop_assert!((u * factor - v).abs() < 1e-9);
        }
    }
}

/// `F(x) = sum a_i x_i^2`.
struct Quadratic(Vec<f64>);

impl Attributable for Quadratic {
    fn num_classes(&self) -> usize {
        1
    }

    fn scores_and_gradients(
        &self,
        _shape: (usize, usize, usize),
        inputs: &[Vec<f64>],
        _target: usize,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let scores = inputs.iter().map(|x| x.iter().zip(&self.0).map(|(v, a)| a * v * v).sum()).collect();
        let grads = inputs.iter().map(|x| x.iter().zip(&self.0).map(|(v, a)| 2.0 * a * v).collect()).collect();
        Ok((scores, grads))
    }
}

#[test]
fn quadratic_residual_shrinks_like_one_over_steps() {
    let f = Quadratic(vec![1.0, 2.0, -0.5, 3.0]);
    let x = MelTensor::from_vec(vec![1.0, 1.0, 2.0, -1.0], 1, 2, 2).unwrap();
    let base = MelTensor::zeros(1, 2, 2);
    let r: Vec<f64> = [10, 20, 40, 80]
        .iter()
        .map(|&m| integrated_gradients(&f, &x, &base, "zero", m, 0).unwrap().residual)
        .collect();
    for w in r.windows(2) {
        assert!((w[0] / w[1] - 2.0).abs() < 1e-6, "{r:?}");
    }
}

#[test]
fn svcca_needs_more_rows_than_rank() {
    let a = act(matrix(4, 6, 1));
    let b = act(matrix(4, 6, 2));
    assert!(matches!(svcca_similarity(&a, &b, 0.99), Err(Error::InsufficientSamples { .. })));
}

#[test]
fn identical_models_have_unit_similarity_at_every_probe() {
    let dir = tempfile::tempdir().unwrap();
    let (set, store) = common::tone_store(dir.path(), 60, 3, 1);
    let ids: Vec<String> = set.manifest.entries.iter().map(|e| e.clip_id.clone()).collect();
    let examples = store.examples(&ids, false).unwrap();
    let model = Model::random(Architecture::Tiny, 3, 1, DType::F32).unwrap();
    let copy = model.try_clone().unwrap();
    let curve = weights_change_curve(&model, &copy, &examples, 0.99, Execution::default()).unwrap();
    assert_eq!(curve.len(), model.segments().len());
    for p in &curve {
        assert!((p.report.mean - 1.0).abs() < 1e-6, "{}: {}", p.segment, p.report.mean);
    }
    let acts = capture_activations(&model, &[Segment::Block2], &examples, "m", Execution::Sequential).unwrap();
    assert_eq!(acts[0].n(), 60);
}

#[test]
fn ablation_points_reload_to_their_recorded_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let (set, store) = common::tone_store(&dir.path().join("store"), 20, 2, 2);
    let plan = split_folds(&set.manifest, FoldSelector::Fold(1)).unwrap();
    let registry = RunRegistry::new(dir.path().join("runs"));
    let source = Model::random(Architecture::Tiny, 6, 3, DType::F32).unwrap();
    let archive = Arc::new(source.to_archive("test", false).unwrap());
    let opts = TrainOptions { registry: Some(&registry), ..Default::default() };
    let curve = run_ablation_suite(AblationKind::Freeze, archive, &store, &plan, &TrainConfig::custom(1, 3), &opts)
        .unwrap();
    assert!(!curve.partial);
    assert_eq!(curve.x(), AblationKind::Freeze.cut_points());
    let mut run_ids = std::collections::BTreeSet::new();
    for p in &curve.points {
        assert!(!p.frozen_checksums.is_empty(), "{}", p.cut);
        for (seg, before, after) in &p.frozen_checksums {
            assert_eq!(before, after, "{seg} moved while frozen at cut {}", p.cut);
        }
        let id = p.run_id.clone().unwrap();
        let model = registry.load_checkpoint(&id).unwrap();
        let m = evaluate_model(&model, &store, &plan.val_ids, Execution::default()).unwrap();
        assert_eq!(Some(m.accuracy), p.val_accuracy);
        run_ids.insert(id);
    }
    assert_eq!(run_ids.len(), curve.points.len());
    let csv = dir.path().join("freeze.csv");
    curve.write_csv(&csv).unwrap();
    assert_eq!(std::fs::read_to_string(csv).unwrap().lines().count(), curve.points.len() + 1);
}
