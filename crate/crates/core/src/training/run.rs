use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{argmax, Metrics};
use super::optim::Adam;
use super::{scheduled_lr, TrainConfig};
use crate::datasets::{load_examples, DatasetKind, DatasetManifest, ExampleSet, FeatureStore, FoldPlan, FoldSelector, Split};
use crate::models::{Architecture, InitMode, Model, ModelRecipe, RecipeSpec};
use crate::{seed, Error, Execution, Result};

const EVAL_BATCH: usize = 32;
/// Training sets below this many bytes are held in memory.
const PRELOAD_LIMIT: usize = 1 << 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Running accuracy over the epoch's training batches.
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

/// Resolved configuration of one run, echoed as `config.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    pub dataset: DatasetKind,
    pub selector: FoldSelector,
    pub model: RecipeSpec,
    pub train: TrainConfig,
    pub store_config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub dataset: DatasetKind,
    pub selector: FoldSelector,
    pub architecture: Architecture,
    pub init_mode: InitMode,
    pub model: RecipeSpec,
    pub config: TrainConfig,
    pub epochs: Vec<EpochLog>,
    pub final_val: Metrics,
    /// Checkpoint directory relative to the run directory.
    pub checkpoint: Option<String>,
    pub wall_clock_s: f64,
    pub num_parameters: usize,
    pub train_examples: usize,
    pub val_examples: usize,
}

impl RunRecord {
    pub fn final_accuracy(&self) -> f64 {
        self.final_val.accuracy
    }
}

#[derive(Clone, Copy, Default)]
pub struct TrainOptions<'a> {
    pub registry: Option<&'a RunRegistry>,
    /// Appended to the generated run id (e.g. an ensemble member tag).
    pub tag: Option<&'a str>,
    pub exec: Execution,
    pub progress: Option<&'a (dyn Fn(&str, &EpochLog) + Sync)>,
    /// Force or forbid holding the training set in memory.
    pub preload: Option<bool>,
}

/// `<dataset>-<arch>-<init>[-fuse_x][-freeze_x][-cut_x]-<fold>-s<seed>[-tag]`.
pub fn run_id(dataset: DatasetKind, spec: &RecipeSpec, selector: FoldSelector, seed: u64, tag: Option<&str>) -> String {
    let mut id = format!("{}-{}-{}", dataset.name(), spec.architecture, spec.init_mode);
    if let Some(c) = spec.fuse_through {
        id.push_str(&format!("-fuse_{c}"));
    }
    if let Some(f) = spec.frozen_through {
        id.push_str(&format!("-freeze_{f}"));
    }
    if spec.last_kept != crate::models::Segment::Block4 {
        id.push_str(&format!("-cut_{}", spec.last_kept));
    }
    id.push_str(&format!("-{selector}-s{seed}"));
    if let Some(t) = tag {
        id.push('-');
        id.push_str(t);
    }
    id
}

fn batch_tensors(model: &Model, set: &ExampleSet, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let tensors = idx.iter().map(|&i| set.load(i)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = tensors.iter().collect();
    let labels = idx.iter().map(|&i| set.label(i)).collect();
    Ok((model.batch(&refs)?, labels))
}

fn label_tensor(labels: &[usize]) -> Result<Tensor> {
    let v: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
    Ok(Tensor::from_vec(v, labels.len(), &Device::Cpu)?)
}

fn check_compatible(model: &Model, set: &ExampleSet) -> Result<()> {
    if model.num_classes() != set.num_classes() {
        return Err(Error::Config(format!(
            "model emits {} classes, dataset has {}",
            model.num_classes(),
            set.num_classes()
        )));
    }
    let [_, h, w] = set.shape();
    model.check_input(h, w).map(|_| ())
}

/// Train `model` in place on `train`, evaluating on `val` after every epoch.
pub fn fit(
    model: &mut Model,
    train: &ExampleSet,
    val: Option<&ExampleSet>,
    cfg: &TrainConfig,
    opts: &TrainOptions,
    label: &str,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    check_compatible(model, train)?;
    let vars = model.trainable_vars();
    let mut opt = Adam::new(vars.iter().map(|(_, v)| v.clone()).collect(), cfg.weight_decay, cfg.weight_decay_mode)?;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = scheduled_lr(epoch, cfg);
        let mut rng = seed::rng(seed::derive(cfg.seed, 0x4F52_4445_5200_0000 | epoch as u64));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let (x, labels) = batch_tensors(model, train, idx)?;
            let logits = model.forward(&x, true)?;
            let loss = candle_nn::loss::cross_entropy(&logits, &label_tensor(&labels)?)?;
            let lv = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !lv.is_finite() {
                return Err(Error::Diverged { epoch, loss: lv });
            }
            if !vars.is_empty() {
                let grads = loss.backward()?;
                opt.step(&grads, lr)?;
            }
            loss_sum += lv * idx.len() as f64;
            let rows = logits.to_dtype(DType::F64)?.to_vec2::<f64>()?;
            correct += rows.iter().zip(&labels).filter(|(r, &y)| argmax(r) == y).count();
        }
        let (val_loss, val_accuracy) = match val {
            Some(v) if !v.is_empty() => {
                let m = evaluate_examples(model, v, opts.exec)?;
                (m.loss, Some(m.accuracy))
            }
            _ => (None, None),
        };
        let log = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss,
            val_accuracy,
        };
        if let Some(p) = opts.progress {
            p(label, &log);
        }
        logs.push(log);
    }
    Ok(logs)
}

/// Evaluation-mode metrics over every item of `set`; weights and buffers
/// are left untouched.
pub fn evaluate_examples(model: &Model, set: &ExampleSet, exec: Execution) -> Result<Metrics> {
    if set.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty set".into()));
    }
    check_compatible(model, set)?;
    let n_batches = set.len().div_ceil(EVAL_BATCH);
    let batches = exec.map_range(n_batches, |b| -> Result<(Vec<usize>, Vec<usize>, f64)> {
        let idx: Vec<usize> = (b * EVAL_BATCH..((b + 1) * EVAL_BATCH).min(set.len())).collect();
        let (x, labels) = batch_tensors(model, set, &idx)?;
        let logits = model.forward(&x, false)?.to_dtype(DType::F64)?;
        let loss = candle_nn::loss::cross_entropy(&logits, &label_tensor(&labels)?)?.to_scalar::<f64>()?;
        let preds = logits.to_vec2::<f64>()?.iter().map(|r| argmax(r)).collect();
        Ok((labels, preds, loss * idx.len() as f64))
    });
    let (mut labels, mut preds, mut loss) = (Vec::new(), Vec::new(), 0.0);
    for b in batches {
        let (l, p, s) = b?;
        labels.extend(l);
        preds.extend(p);
        loss += s;
    }
    let mut m = Metrics::from_predictions(&labels, &preds, model.num_classes())?;
    m.loss = Some(loss / labels.len() as f64);
    Ok(m)
}

/// Metrics on the base (never augmented) records of `ids`.
pub fn evaluate_model(model: &Model, store: &FeatureStore, ids: &[String], exec: Execution) -> Result<Metrics> {
    if ids.is_empty() {
        return Err(Error::Domain("evaluation ids are empty".into()));
    }
    evaluate_examples(model, &store.examples(ids, false)?, exec)
}

fn estimated_bytes(set: &ExampleSet) -> usize {
    let [c, h, w] = set.shape();
    set.len() * c * h * w * 4
}

/// Train on the plan's training split and evaluate on its validation split.
/// With a registry, the run directory receives `config.toml`,
/// `record.json`, `metrics.csv` and the final checkpoint.
pub fn train_model(
    model: &mut Model,
    store: &FeatureStore,
    plan: &FoldPlan,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<RunRecord> {
    let started = Instant::now();
    let spec = recipe_spec_of(model);
    let dataset = store.index().dataset;
    let id = run_id(dataset, &spec, plan.selector, cfg.seed, opts.tag);
    let mut train = load_examples(store, plan, Split::Train, cfg.include_augmented)?;
    let mut val = load_examples(store, plan, Split::Validation, false)?;
    if opts.preload.unwrap_or(estimated_bytes(&train) + estimated_bytes(&val) <= PRELOAD_LIMIT) {
        train = train.preloaded()?;
        val = val.preloaded()?;
    }
    let epochs = fit(model, &train, Some(&val), cfg, opts, &id)?;
    let final_val = evaluate_examples(model, &val, opts.exec)?;
    let mut record = RunRecord {
        run_id: id.clone(),
        dataset,
        selector: plan.selector,
        architecture: model.architecture(),
        init_mode: model.init_mode(),
        model: spec.clone(),
        config: cfg.clone(),
        epochs,
        final_val,
        checkpoint: None,
        wall_clock_s: 0.0,
        num_parameters: model.num_parameters(),
        train_examples: train.len(),
        val_examples: val.len(),
    };
    record.wall_clock_s = started.elapsed().as_secs_f64();
    if let Some(reg) = opts.registry {
        let run_config = RunConfig {
            run_id: id,
            dataset,
            selector: plan.selector,
            model: spec,
            train: cfg.clone(),
            store_config_hash: store.index().config_hash.clone(),
        };
        record.checkpoint = Some("checkpoint".into());
        reg.write_run(&record, &run_config, Some(model))?;
    }
    Ok(record)
}

fn recipe_spec_of(model: &Model) -> RecipeSpec {
    let d = model.descriptor();
    RecipeSpec {
        architecture: d.architecture,
        init_mode: d.init_mode,
        fuse_through: d.pretrained_through.filter(|&s| s != crate::models::Segment::Block4),
        frozen_through: d.frozen_through,
        last_kept: d.last_kept,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub selector: FoldSelector,
    pub error: String,
}

/// Cross-validation outcome: mean of per-fold validation accuracies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub dataset: DatasetKind,
    pub model: RecipeSpec,
    pub runs: Vec<RunRecord>,
    pub failures: Vec<FoldFailure>,
    pub fold_accuracies: Vec<f64>,
    /// Mean over completed folds.
    pub mean_accuracy: f64,
    /// Population standard deviation over completed folds.
    pub std_accuracy: f64,
    pub complete: bool,
}

/// One run per fold (or the single seeded split), each from a fresh model.
pub fn cross_validate(
    recipe: &ModelRecipe,
    manifest: &DatasetManifest,
    store: &FeatureStore,
    cfg: &TrainConfig,
    split_seed: u64,
    opts: &TrainOptions,
) -> Result<CrossValidation> {
    cfg.validate()?;
    let plans = manifest.cross_validation_plans(split_seed)?;
    let outcomes = opts.exec.map(&plans, |plan| {
        let mut model = recipe.instantiate(store.num_classes(), cfg.seed)?;
        train_model(&mut model, store, plan, cfg, opts)
    });
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (plan, o) in plans.iter().zip(outcomes) {
        match o {
            Ok(r) => runs.push(r),
            Err(e) => {
                let failure = FoldFailure {
                    selector: plan.selector,
                    error: e.to_string(),
                };
                if let Some(reg) = opts.registry {
                    let id = run_id(manifest.kind, &recipe.spec, plan.selector, cfg.seed, opts.tag);
                    reg.write_failure(&id, &failure)?;
                }
                log::error!("{}: {}", plan.selector, e);
                failures.push(failure);
            }
        }
    }
    let fold_accuracies: Vec<f64> = runs.iter().map(|r| r.final_accuracy()).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&fold_accuracies);
    let cv = CrossValidation {
        dataset: manifest.kind,
        model: recipe.spec.clone(),
        complete: failures.is_empty(),
        runs,
        failures,
        fold_accuracies,
        mean_accuracy,
        std_accuracy,
    };
    if let Some(reg) = opts.registry {
        reg.write_summary(&cv, cfg.seed, opts.tag)?;
    }
    Ok(cv)
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Directory of runs: `<root>/runs/<run_id>/` plus cross-validation
/// summaries under `<root>/summaries/`.
#[derive(Clone, Debug)]
pub struct RunRegistry {
    root: PathBuf,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl RunRegistry {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id)
    }

    pub fn write_run(&self, record: &RunRecord, config: &RunConfig, model: Option<&Model>) -> Result<()> {
        let dir = self.run_dir(&record.run_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let toml = toml::to_string_pretty(config)?;
        write_file(&dir.join("config.toml"), toml.as_bytes())?;
        let mut csv = csv::Writer::from_writer(Vec::new());
        csv.write_record(["epoch", "lr", "train_loss", "train_accuracy", "val_loss", "val_accuracy"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &record.epochs {
            csv.write_record([
                e.epoch.to_string(),
                e.lr.to_string(),
                e.train_loss.to_string(),
                e.train_accuracy.to_string(),
                opt(e.val_loss),
                opt(e.val_accuracy),
            ])?;
        }
        let csv = csv.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        write_file(&dir.join("metrics.csv"), &csv)?;
        if let Some(m) = model {
            m.save_checkpoint(&dir.join("checkpoint"), &format!("checkpoint:{}", record.run_id))?;
        }
        write_file(&dir.join("record.json"), &serde_json::to_vec_pretty(record)?)
    }

    pub fn write_failure(&self, run_id: &str, failure: &FoldFailure) -> Result<()> {
        let dir = self.run_dir(run_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_file(&dir.join("failure.json"), &serde_json::to_vec_pretty(failure)?)
    }

    pub fn write_summary(&self, cv: &CrossValidation, seed: u64, tag: Option<&str>) -> Result<PathBuf> {
        let dir = self.root.join("summaries");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let name = run_id(cv.dataset, &cv.model, FoldSelector::Fold(0), seed, tag).replace("-fold0", "-cv");
        let path = dir.join(format!("{name}.json"));
        write_file(&path, &serde_json::to_vec_pretty(cv)?)?;
        Ok(path)
    }

    pub fn load_record(&self, run_id: &str) -> Result<RunRecord> {
        let path = self.run_dir(run_id).join("record.json");
        let raw = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&raw)?)
    }

    /// Every completed run, sorted by id.
    pub fn records(&self) -> Result<Vec<RunRecord>> {
        let dir = self.root.join("runs");
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut ids: Vec<String> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("record.json").is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        ids.sort();
        ids.iter().map(|id| self.load_record(id)).collect()
    }

    pub fn load_checkpoint(&self, run_id: &str) -> Result<Model> {
        Model::load_checkpoint(&self.run_dir(run_id).join("checkpoint"))
    }
}
