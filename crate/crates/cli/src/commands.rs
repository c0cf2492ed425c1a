//! One function per subcommand. Each returns the artifact paths it wrote.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use atl_core::analysis::{
    default_baseline, integrated_gradients, render_attribution, render_panels, run_ablation_suite,
    weights_change_curve, AblationKind, Series, WeightsChangeCurve,
};
use atl_core::datasets::synthetic::{ToneSet, ToneSetConfig};
use atl_core::datasets::{
    build_manifest, cache_features, load_examples, split_folds, AudioSource, DatasetKind, DatasetManifest,
    FeatureStore, FileSource, Split,
};
use atl_core::ensemble::{run_ensemble, EnsembleRun};
use atl_core::models::{import_safetensors, Architecture, InitMode, ModelRecipe, WeightArchive};
use atl_core::report::emit_report;
use atl_core::training::{cross_validate, train_model, CrossValidation, EpochLog, RunRecord, RunRegistry, TrainOptions};
use serde::Serialize;

use crate::config::{ConfigError, Resolved};

pub const MANIFEST_FILE: &str = "manifest.json";

fn progress(label: &str, e: &EpochLog) {
    let val = e.val_accuracy.map(|a| format!(" val_acc={a:.4}")).unwrap_or_default();
    eprintln!(
        "[{label}] epoch {} lr={:.1e} loss={:.4} acc={:.4}{val}",
        e.epoch + 1,
        e.lr,
        e.train_loss,
        e.train_accuracy
    );
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("cannot write {}", path.display()))
}

fn tone_set(r: &Resolved) -> anyhow::Result<ToneSet> {
    let s = r.synthetic.as_ref().expect("resolved synthetic section");
    let mut cfg = ToneSetConfig::new(s.n_clips, s.n_classes, s.seed.unwrap_or(r.seed));
    cfg.sample_rate = r.dsp.sample_rate;
    cfg.seconds = r.dsp.clip_seconds;
    Ok(ToneSet::generate(cfg)?)
}

/// Build the manifest, extract every clip into the feature store and save
/// the manifest beside it.
pub fn prep(r: &Resolved) -> anyhow::Result<Vec<PathBuf>> {
    let tones;
    let (manifest, source): (DatasetManifest, &dyn AudioSource) = match r.dataset {
        DatasetKind::Synthetic => {
            tones = tone_set(r)?;
            (tones.manifest.clone(), &tones)
        }
        kind => {
            let root = r.dataset_root.as_ref().ok_or_else(|| {
                ConfigError(format!(
                    "dataset.root is not set for {kind}; pass --dataset-root or set {}",
                    crate::config::DATASET_ROOT_ENV
                ))
            })?;
            (build_manifest(kind, root)?, &FileSource)
        }
    };
    eprintln!("prep: {} clips of {} into {}", manifest.len(), manifest.kind, r.store_dir.display());
    let report = cache_features(&manifest, source, &r.dsp, &r.augmentation, &r.store_dir, r.exec)?;
    eprintln!("prep: {} records written, {} verified", report.written, report.verified);
    let manifest_path = r.store_dir.join(MANIFEST_FILE);
    write_json(&manifest_path, &manifest)?;
    let echoed = r.echo_to(&r.store_dir)?;
    Ok(vec![r.store_dir.join("store.json"), manifest_path, echoed])
}

/// The store and manifest written by `prep`.
pub fn open_store(r: &Resolved) -> anyhow::Result<(DatasetManifest, FeatureStore)> {
    let manifest_path = r.store_dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() || !r.store_dir.join("store.json").is_file() {
        bail!(
            "no feature store at {}; run `atl prep` with this config first",
            r.store_dir.display()
        );
    }
    let manifest: DatasetManifest = serde_json::from_slice(&std::fs::read(&manifest_path)?)
        .with_context(|| format!("cannot parse {}", manifest_path.display()))?;
    let store = FeatureStore::open(&r.store_dir)?;
    if store.index().dataset != r.dataset {
        bail!(
            "feature store at {} holds {}, config asks for {}",
            r.store_dir.display(),
            store.index().dataset,
            r.dataset
        );
    }
    Ok((manifest, store))
}

fn load_archive(r: &Resolved) -> anyhow::Result<Arc<WeightArchive>> {
    let path = r.weights.as_ref().ok_or_else(|| {
        ConfigError("model.weights is required for pretrained init; create an archive with `atl import-weights`".into())
    })?;
    let archive = WeightArchive::load(path)?;
    if archive.provenance.architecture != r.architecture {
        return Err(ConfigError(format!(
            "weight archive {} is for {}, config asks for {}",
            path.display(),
            archive.provenance.architecture,
            r.architecture
        ))
        .into());
    }
    Ok(Arc::new(archive))
}

pub fn recipe(r: &Resolved) -> anyhow::Result<ModelRecipe> {
    let m = &r.file.model;
    let mut recipe = match r.init_mode {
        InitMode::Random => ModelRecipe::random(r.architecture),
        InitMode::Pretrained => ModelRecipe::pretrained(load_archive(r)?),
    };
    if let Some(cut) = m.fuse_through {
        recipe = recipe.fused_through(cut);
    }
    recipe = recipe.frozen_through(m.frozen_through);
    if let Some(seg) = m.last_kept {
        recipe = recipe.truncated_after(seg);
    }
    Ok(recipe)
}

fn options<'a>(r: &Resolved, registry: &'a RunRegistry, tag: Option<&'a str>) -> TrainOptions<'a> {
    TrainOptions {
        registry: Some(registry),
        tag,
        exec: r.exec,
        progress: Some(&progress),
        preload: None,
    }
}

pub fn train(r: &Resolved, tag: Option<&str>) -> anyhow::Result<RunRecord> {
    let (manifest, store) = open_store(r)?;
    let plan = split_folds(&manifest, r.selector)?;
    let registry = RunRegistry::new(&r.output);
    let mut model = recipe(r)?.instantiate(store.num_classes(), r.train.seed)?;
    let record = train_model(&mut model, &store, &plan, &r.train, &options(r, &registry, tag))?;
    r.echo_to(&registry.run_dir(&record.run_id))?;
    Ok(record)
}

pub fn cross_validation(r: &Resolved, tag: Option<&str>) -> anyhow::Result<(CrossValidation, PathBuf)> {
    let (manifest, store) = open_store(r)?;
    let registry = RunRegistry::new(&r.output);
    let recipe = recipe(r)?;
    let opts = options(r, &registry, tag);
    let cv = cross_validate(&recipe, &manifest, &store, &r.train, r.split_seed, &opts)?;
    for run in &cv.runs {
        r.echo_to(&registry.run_dir(&run.run_id))?;
    }
    let summary = registry.write_summary(&cv, r.train.seed, tag)?;
    r.echo_to(&registry.root().join("summaries"))?;
    Ok((cv, summary))
}

pub fn ensemble(r: &Resolved, tag: Option<&str>) -> anyhow::Result<Vec<EnsembleRun>> {
    let (manifest, store) = open_store(r)?;
    let registry = RunRegistry::new(&r.output);
    let recipe = recipe(r)?;
    let plans = if r.ensemble_all_folds {
        manifest.cross_validation_plans(r.split_seed)?
    } else {
        vec![split_folds(&manifest, r.selector)?]
    };
    let opts = options(r, &registry, tag);
    let mut runs = Vec::new();
    for plan in &plans {
        let run = run_ensemble(&r.ensemble, &recipe, &r.train, &store, plan, &opts)?;
        for id in &run.member_run_ids {
            r.echo_to(&registry.run_dir(id))?;
        }
        runs.push(run);
    }
    r.echo_to(&registry.root().join("ensembles"))?;
    Ok(runs)
}

fn analysis_dir(r: &Resolved) -> PathBuf {
    r.output.join("analysis")
}

/// SVCCA between a model before and after fine-tuning at every segment.
/// Without `before`, the recipe is re-instantiated with the run's seed,
/// which reproduces its starting point exactly.
pub fn svcca(r: &Resolved, after_id: &str, before_id: Option<&str>) -> anyhow::Result<Vec<PathBuf>> {
    let (manifest, store) = open_store(r)?;
    let registry = RunRegistry::new(&r.output);
    let record = registry
        .load_record(after_id)
        .with_context(|| format!("run `{after_id}` not found under {}", registry.root().display()))?;
    let after = registry.load_checkpoint(after_id)?;
    let (before, before_label) = match before_id {
        Some(id) => (registry.load_checkpoint(id)?, id.to_string()),
        None => {
            let archive = match record.init_mode {
                InitMode::Pretrained => Some(load_archive(r)?),
                InitMode::Random => None,
            };
            let recipe = ModelRecipe {
                spec: record.model.clone(),
                archive,
            };
            (recipe.instantiate(store.num_classes(), record.config.seed)?, format!("init:{after_id}"))
        }
    };
    let plan = split_folds(&manifest, record.selector)?;
    let probe = load_examples(&store, &plan, Split::Validation, false)?;
    let points = weights_change_curve(&before, &after, &probe, r.variance_keep, r.exec)?;
    let curve = WeightsChangeCurve {
        label: record.init_mode.to_string(),
        architecture: record.architecture,
        before: before_label,
        after: after_id.to_string(),
        points,
    };
    let dir = analysis_dir(r);
    let stem = format!("svcca-{after_id}");
    let json = dir.join(format!("{stem}.json"));
    write_json(&json, &curve)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["segment", "mean_correlation", "rank_before", "rank_after"])?;
    for p in &curve.points {
        w.write_record([
            p.segment.name().to_string(),
            p.report.mean.to_string(),
            p.report.rank_a.to_string(),
            p.report.rank_b.to_string(),
        ])?;
    }
    w.flush()?;
    let png = dir.join(format!("{stem}.png"));
    render_panels(&[vec![Series { values: curve.means(), color: [31, 119, 180] }]], (0.0, 1.0), &png)?;
    r.echo_to(&dir)?;
    Ok(vec![json, csv_path, png])
}

pub fn ablation(r: &Resolved, kind: AblationKind) -> anyhow::Result<(bool, Vec<PathBuf>)> {
    let (manifest, store) = open_store(r)?;
    let registry = RunRegistry::new(&r.output);
    let archive = load_archive(r)?;
    let plan = split_folds(&manifest, r.selector)?;
    let curve = run_ablation_suite(kind, archive, &store, &plan, &r.train, &options(r, &registry, None))?;
    for p in curve.points.iter().filter_map(|p| p.run_id.as_ref()) {
        r.echo_to(&registry.run_dir(p))?;
    }
    let dir = analysis_dir(r);
    let stem = format!("{kind}-{}-{}-{}-s{}", r.dataset, r.architecture, r.selector, r.train.seed);
    let json = dir.join(format!("{stem}.json"));
    write_json(&json, &curve)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    curve.write_csv(&csv_path)?;
    let png = dir.join(format!("{stem}.png"));
    render_panels(&[vec![Series { values: curve.y(), color: [214, 39, 40] }]], (0.0, 1.0), &png)?;
    r.echo_to(&dir)?;
    Ok((curve.partial, vec![json, csv_path, png]))
}

#[derive(Serialize)]
struct IgRecord<'a> {
    run_id: &'a str,
    clip_id: &'a str,
    target: usize,
    label: usize,
    steps: usize,
    baseline: &'a str,
    score_input: f64,
    score_baseline: f64,
    attribution_total: f64,
    residual: f64,
    relative_residual: f64,
}

pub fn ig(
    r: &Resolved,
    run_id: &str,
    clip: Option<&str>,
    target: Option<usize>,
    steps: Option<usize>,
) -> anyhow::Result<Vec<PathBuf>> {
    let (manifest, store) = open_store(r)?;
    let registry = RunRegistry::new(&r.output);
    let record = registry
        .load_record(run_id)
        .with_context(|| format!("run `{run_id}` not found under {}", registry.root().display()))?;
    let model = registry.load_checkpoint(run_id)?;
    let clip_id = match clip {
        Some(c) => c.to_string(),
        None => split_folds(&manifest, record.selector)?
            .val_ids
            .first()
            .cloned()
            .context("the run's validation split is empty")?,
    };
    let set = store.examples(std::slice::from_ref(&clip_id), false)?;
    let x = set.load(0)?;
    let label = set.label(0);
    let target = target.unwrap_or(label);
    if target >= model.num_classes() {
        return Err(ConfigError(format!("target class {target} out of range 0..{}", model.num_classes())).into());
    }
    let steps = steps.unwrap_or(r.ig_steps);
    let baseline = default_baseline(&x);
    let map = integrated_gradients(&model, &x, &baseline, "channel_minimum", steps, target)?;
    let dir = analysis_dir(r);
    std::fs::create_dir_all(&dir)?;
    let stem = format!("ig-{run_id}-{clip_id}");
    let png = dir.join(format!("{stem}.png"));
    render_attribution(&x, &map, &png)?;
    let json = dir.join(format!("{stem}.json"));
    write_json(
        &json,
        &IgRecord {
            run_id,
            clip_id: &clip_id,
            target,
            label,
            steps,
            baseline: &map.baseline,
            score_input: map.score_input,
            score_baseline: map.score_baseline,
            attribution_total: map.total(),
            residual: map.residual,
            relative_residual: map.relative_residual(),
        },
    )?;
    r.echo_to(&dir)?;
    Ok(vec![png, json])
}

pub fn report(output: &Path, out_dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let registry = RunRegistry::new(output);
    let out = emit_report(&registry, out_dir)?;
    eprintln!("report: {} runs, {} ensembles", out.runs, out.ensembles);
    let mut paths = vec![out.pretrained_vs_random, out.single_vs_ensemble];
    paths.extend(out.figure);
    Ok(paths)
}

pub enum WeightSource<'a> {
    Safetensors { path: &'a Path, architecture: Architecture },
    Run { registry: &'a Path, run_id: &'a str },
}

/// Write a weight archive from a safetensors file or a trained run.
pub fn import_weights(source: WeightSource, name: &str, out: &Path) -> anyhow::Result<PathBuf> {
    let archive = match source {
        WeightSource::Safetensors { path, architecture } => import_safetensors(path, architecture, name)?,
        WeightSource::Run { registry, run_id } => {
            let model = RunRegistry::new(registry).load_checkpoint(run_id)?;
            model.to_archive(name, false)?
        }
    };
    archive.save(out)?;
    eprintln!("import-weights: {} tensors for {}", archive.len(), archive.provenance.architecture);
    Ok(out.join("index.json"))
}
