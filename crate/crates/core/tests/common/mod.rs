#![allow(dead_code)]

use std::path::Path;

use atl_core::datasets::synthetic::{ToneSet, ToneSetConfig};
use atl_core::datasets::{cache_features, DatasetKind, FeatureStore};
use atl_core::dsp::AugmentationPolicy;
use atl_core::Execution;

/// Tone corpus cached under `dir` with the synthetic DSP defaults.
pub fn tone_store(dir: &Path, n_clips: usize, n_classes: usize, seed: u64) -> (ToneSet, FeatureStore) {
    let set = ToneSet::generate(ToneSetConfig::new(n_clips, n_classes, seed)).unwrap();
    let dsp = DatasetKind::Synthetic.default_dsp();
    let report = cache_features(
        &set.manifest,
        &set,
        &dsp,
        &AugmentationPolicy::none(),
        dir,
        Execution::default(),
    )
    .unwrap();
    (set, report.store)
}
