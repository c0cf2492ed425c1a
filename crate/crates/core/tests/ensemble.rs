mod common;

use atl_core::datasets::{split_folds, FoldSelector};
use atl_core::dsp::MelTensor;
use atl_core::ensemble::{ensemble_evaluate, ensemble_predict, run_ensemble, softmax, Classifier, EnsembleConfig};
use atl_core::models::{Architecture, ModelRecipe};
use atl_core::report::{emit_report, format_percent, Table};
use atl_core::training::{RunRegistry, TrainConfig, TrainOptions};
use atl_core::{Error, Execution};
use proptest::prelude::*;

/// Returns a fixed logit row for each input, indexed by the input's first cell.
struct Table2d(Vec<Vec<f64>>);

impl Classifier for Table2d {
    fn num_classes(&self) -> usize {
        self.0[0].len()
    }

    fn logits(&self, items: &[&MelTensor]) -> atl_core::Result<Vec<Vec<f64>>> {
        Ok(items.iter().map(|x| self.0[x.get(0, 0, 0) as usize].clone()).collect())
    }
}

fn inputs(n: usize) -> Vec<MelTensor> {
    (0..n).map(|i| MelTensor::from_vec(vec![i as f32], 1, 1, 1).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mean_is_a_distribution_and_order_free(
        logits in proptest::collection::vec(proptest::collection::vec(proptest::collection::vec(-30.0f64..30.0, 4), 3), 2..6),
        rotate in 0usize..6,
    ) {
        let members: Vec<Table2d> = logits.into_iter().map(Table2d).collect();
        let xs = inputs(3);
        let xr: Vec<&MelTensor> = xs.iter().collect();
        let refs: Vec<&dyn Classifier> = members.iter().map(|m| m as &dyn Classifier).collect();
        let mut rotated = refs.clone();
        rotated.rotate_left(rotate % refs.len());
        let a = ensemble_predict(&refs, &xr).unwrap();
        let b = ensemble_predict(&rotated, &xr).unwrap();
        for (ra, rb) in a.mean.iter().zip(&b.mean) {
            prop_assert!((ra.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (u, v) in ra.iter().zip(rb) {
                prop_assert!((u - v).abs() <= 1e-9);
            }
        }
        for (i, row) in a.mean.iter().enumerate() {
            let expected: Vec<f64> = (0..4)
                .map(|k| members.iter().map(|m| softmax(&m.0[i])[k]).sum::<f64>() / members.len() as f64)
                .collect();
            for (u, v) in row.iter().zip(&expected) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn mismatched_members_are_rejected() {
    let a = Table2d(vec![vec![0.0, 1.0]]);
    let b = Table2d(vec![vec![0.0, 1.0, 2.0]]);
    let xs = inputs(1);
    assert!(matches!(ensemble_predict(&[&a, &b], &[&xs[0]]), Err(Error::Domain(_))));
    assert!(matches!(ensemble_predict(&[], &[&xs[0]]), Err(Error::Domain(_))));
}

#[test]
fn ensemble_run_is_recorded_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (set, store) = common::tone_store(&dir.path().join("store"), 20, 2, 3);
    let plan = split_folds(&set.manifest, FoldSelector::Fold(3)).unwrap();
    let registry = RunRegistry::new(dir.path().join("runs"));
    let opts = TrainOptions { registry: Some(&registry), ..Default::default() };
    let recipe = ModelRecipe::random(Architecture::Tiny);
    let run = run_ensemble(&EnsembleConfig::new(3, 7), &recipe, &TrainConfig::custom(2, 0), &store, &plan, &opts)
        .unwrap();
    assert_eq!(run.members.len(), 3);
    assert!(run.warnings.is_empty());
    let seeds: std::collections::BTreeSet<u64> = run.members.iter().map(|m| m.seed).collect();
    assert_eq!(seeds.len(), 3);

    let models: Vec<_> = run.member_run_ids.iter().map(|id| registry.load_checkpoint(id).unwrap()).collect();
    let refs: Vec<&dyn Classifier> = models.iter().map(|m| m as &dyn Classifier).collect();
    let again = ensemble_evaluate(&refs, &store, &plan.val_ids, Execution::Sequential).unwrap();
    assert_eq!(Some(&again), run.ensemble.as_ref());

    let out = emit_report(&registry, &dir.path().join("report")).unwrap();
    assert_eq!((out.runs, out.ensembles), (3, 1));
    let csv = std::fs::read_to_string(&out.single_vs_ensemble).unwrap();
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    let rows: Vec<Vec<String>> = reader.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    let table = Table { header, rows };
    let expected = format_percent(run.accuracy().unwrap());
    assert_eq!(table.get("Tiny (Random)", "synthetic_ensemble"), Some(expected.as_str()), "{csv}");
    let mean = run.member_accuracies().iter().sum::<f64>() / 3.0;
    let single = table.get("Tiny (Random)", "synthetic_single").unwrap();
    assert!(single.starts_with(&format!("{:.2}±", 100.0 * mean)), "{single}");
}

#[test]
fn single_member_ensembles_are_rejected() {
    assert!(matches!(EnsembleConfig::new(1, 0).validate(), Err(Error::Config(_))));
}
