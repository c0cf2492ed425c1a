//! Parallel against sequential execution for the two hot loops: clip
//! featurization and batched evaluation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use atl_core::datasets::synthetic::{ToneSet, ToneSetConfig};
use atl_core::datasets::{cache_features, DatasetKind};
use atl_core::dsp::{AugmentationPolicy, Waveform};
use atl_core::models::{Architecture, Model};
use atl_core::training::evaluate_model;
use atl_core::Execution;
use candle_core::DType;

const POLICIES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn featurize(c: &mut Criterion) {
    let set = ToneSet::generate(ToneSetConfig::new(32, 4, 0)).unwrap();
    let clips: Vec<Waveform> = set.manifest.entries.iter().map(|e| set.render(&e.clip_id).unwrap()).collect();
    let dsp = DatasetKind::Synthetic.default_dsp();
    let mut g = c.benchmark_group("featurize_32_clips");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| exec.map(&clips, |w| dsp.extract(w).unwrap()))
        });
    }
    g.finish();
}

fn evaluate(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let set = ToneSet::generate(ToneSetConfig::new(128, 4, 1)).unwrap();
    let store = cache_features(
        &set.manifest,
        &set,
        &DatasetKind::Synthetic.default_dsp(),
        &AugmentationPolicy::none(),
        dir.path(),
        Execution::default(),
    )
    .unwrap()
    .store;
    let ids: Vec<String> = set.manifest.entries.iter().map(|e| e.clip_id.clone()).collect();
    let model = Model::random(Architecture::Tiny, 4, 0, DType::F32).unwrap();
    let mut g = c.benchmark_group("evaluate_128_clips");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate_model(&model, &store, &ids, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, featurize, evaluate);
criterion_main!(benches);
