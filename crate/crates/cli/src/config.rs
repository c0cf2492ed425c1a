//! Experiment configuration: file parsing, flag overrides, defaults and
//! validation.
//!
//! A resolved config has every default filled in and parses back to itself,
//! so the copy written next to each artifact can relaunch the same run.

use std::path::{Path, PathBuf};

use atl_core::datasets::{DatasetKind, FoldSelector};
use atl_core::dsp::{AugmentationPolicy, DspConfig};
use atl_core::ensemble::EnsembleConfig;
use atl_core::models::{Architecture, InitMode, Segment};
use atl_core::training::{Regime, TrainConfig, WeightDecay};
use atl_core::Execution;
use serde::{Deserialize, Serialize};

/// Environment variable naming the dataset root when the config has none.
pub const DATASET_ROOT_ENV: &str = "ATL_DATASET_ROOT";

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

/// Invalid configuration; maps to exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn config_err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Registry root: runs, stores, ensembles, analysis and reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execution: Option<Execution>,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dsp: Option<DspConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<AugmentationPolicy>,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<DatasetKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    /// Feature store directory; defaults to `<output>/features/<kind>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store: Option<PathBuf>,
    /// Tone corpus parameters for `kind = "synthetic"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_clips: usize,
    pub n_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<Architecture>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_mode: Option<InitMode>,
    /// Weight archive directory (see `atl import-weights`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuse_through: Option<Segment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_through: Option<Segment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_kept: Option<Segment>,
}

/// Field-by-field overrides of the regime's preset [`TrainConfig`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay_mode: Option<WeightDecay>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_drop_epochs: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub include_augmented: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    /// Held-out official fold (ESC-50, UrbanSound8K).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<u32>,
    /// Seed of the stratified split (GTZAN, synthetic).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub members: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub member_seeds: Option<Vec<u64>>,
    /// One ensemble per cross-validation plan instead of the configured split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub all_folds: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_keep: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ig_steps: Option<usize>,
}

/// Values given on the command line; each replaces the file value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub dataset: Option<DatasetKind>,
    pub dataset_root: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub architecture: Option<Architecture>,
    pub init_mode: Option<InitMode>,
    pub weights: Option<PathBuf>,
    pub regime: Option<Regime>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub fold: Option<u32>,
    pub members: Option<usize>,
    pub sequential: bool,
}

/// Defaults applied and invariants checked.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub file: ExperimentConfig,
    pub seed: u64,
    pub output: PathBuf,
    pub exec: Execution,
    pub dataset: DatasetKind,
    pub dataset_root: Option<PathBuf>,
    pub store_dir: PathBuf,
    pub synthetic: Option<SyntheticSection>,
    pub architecture: Architecture,
    pub init_mode: InitMode,
    pub weights: Option<PathBuf>,
    pub train: TrainConfig,
    pub dsp: DspConfig,
    pub augmentation: AugmentationPolicy,
    pub selector: FoldSelector,
    pub split_seed: u64,
    pub ensemble: EnsembleConfig,
    pub ensemble_all_folds: bool,
    pub variance_keep: f64,
    pub ig_steps: usize,
}

pub const DEFAULT_OUTPUT: &str = "atl-out";
pub const DEFAULT_MEMBERS: usize = 5;

/// Read a TOML (or `.json`) config file.
pub fn parse_file(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let raw = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    parse_str(&raw, path.extension().is_some_and(|x| x.eq_ignore_ascii_case("json")))
        .map_err(|e| config_err(format!("{}: {}", path.display(), e.0)))
}

pub fn parse_str(raw: &str, json: bool) -> Result<ExperimentConfig, ConfigError> {
    if json {
        serde_json::from_str(raw).map_err(|e| config_err(e.to_string()))
    } else {
        toml::from_str(raw).map_err(|e| config_err(e.message().to_string()))
    }
}

/// Parse `path` (or start from an empty config), apply `overrides`, fill
/// defaults and validate.
pub fn parse_and_validate(path: Option<&Path>, overrides: &Overrides) -> Result<Resolved, ConfigError> {
    let file = match path {
        Some(p) => parse_file(p)?,
        None => ExperimentConfig::default(),
    };
    resolve(file, overrides)
}

pub fn resolve(mut f: ExperimentConfig, o: &Overrides) -> Result<Resolved, ConfigError> {
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src.clone() {
                $dst = Some(v);
            }
        };
    }
    set!(f.dataset.kind, o.dataset);
    set!(f.dataset.root, o.dataset_root);
    set!(f.output, o.output);
    set!(f.model.architecture, o.architecture);
    set!(f.model.init_mode, o.init_mode);
    set!(f.model.weights, o.weights);
    set!(f.train.regime, o.regime);
    set!(f.train.epochs, o.epochs);
    set!(f.train.base_lr, o.lr);
    set!(f.train.batch_size, o.batch_size);
    set!(f.seed, o.seed);
    set!(f.split.fold, o.fold);
    set!(f.ensemble.members, o.members);
    if o.sequential {
        f.execution = Some(Execution::Sequential);
    }

    let dataset = f
        .dataset
        .kind
        .ok_or_else(|| config_err("dataset.kind is required (esc50, urbansound8k, gtzan or synthetic)"))?;
    let seed = *f.seed.get_or_insert(0);
    let output = f.output.get_or_insert_with(|| PathBuf::from(DEFAULT_OUTPUT)).clone();
    let exec = *f.execution.get_or_insert(Execution::Parallel);
    if f.dataset.root.is_none() && dataset != DatasetKind::Synthetic {
        if let Some(env) = std::env::var_os(DATASET_ROOT_ENV) {
            f.dataset.root = Some(PathBuf::from(env));
        }
    }
    let store_dir = f
        .dataset
        .store
        .get_or_insert_with(|| output.join("features").join(dataset.name()))
        .clone();
    let synthetic = match dataset {
        DatasetKind::Synthetic => {
            let s = f
                .dataset
                .synthetic
                .as_mut()
                .ok_or_else(|| config_err("dataset.synthetic (n_clips, n_classes) is required for the synthetic dataset"))?;
            s.seed.get_or_insert(seed);
            Some(s.clone())
        }
        _ => {
            if f.dataset.synthetic.is_some() {
                return Err(config_err("dataset.synthetic is only valid with kind = \"synthetic\""));
            }
            None
        }
    };

    let architecture = *f.model.architecture.get_or_insert(Architecture::DenseNet201);
    let init_mode = *f.model.init_mode.get_or_insert(InitMode::Pretrained);
    if init_mode == InitMode::Random && f.model.fuse_through.is_some() {
        return Err(config_err("model.fuse_through needs init_mode = \"pretrained\""));
    }
    f.model.last_kept.get_or_insert(Segment::Block4);

    let t = &mut f.train;
    let regime = *t.regime.get_or_insert(match init_mode {
        InitMode::Pretrained => Regime::Pretrained70,
        InitMode::Random => Regime::Scratch450,
    });
    if regime == Regime::Custom && t.epochs.is_none() {
        return Err(config_err("train.epochs is required with regime = \"custom\""));
    }
    let train_seed = *t.seed.get_or_insert(seed);
    let mut train = TrainConfig::for_regime(regime, t.epochs.unwrap_or(1), train_seed);
    macro_rules! fill {
        ($field:ident) => {
            match &t.$field {
                Some(v) => train.$field = v.clone(),
                None => t.$field = Some(train.$field.clone()),
            }
        };
    }
    fill!(base_lr);
    fill!(weight_decay);
    fill!(weight_decay_mode);
    fill!(batch_size);
    fill!(epochs);
    fill!(lr_drop_epochs);
    fill!(drop_factor);
    fill!(include_augmented);
    train.validate().map_err(|e| config_err(format!("[train] {e}")))?;

    let dsp = f.dsp.get_or_insert_with(|| dataset.default_dsp()).clone();
    dsp.validate().map_err(|e| config_err(format!("[dsp] {e}")))?;
    let augmentation = f.augmentation.get_or_insert_with(|| dataset.default_augmentation()).clone();

    let split_seed = *f.split.split_seed.get_or_insert(seed);
    let selector = match dataset.official_folds() {
        Some(k) => {
            let fold = *f.split.fold.get_or_insert(1);
            if fold == 0 || fold > k {
                return Err(config_err(format!("split.fold must be in 1..={k} for {dataset}, got {fold}")));
            }
            FoldSelector::Fold(fold)
        }
        None => {
            if f.split.fold.is_some() {
                return Err(config_err(format!("{dataset} has no official folds; use split.split_seed")));
            }
            FoldSelector::Seed(split_seed)
        }
    };

    let e = &mut f.ensemble;
    let ensemble = EnsembleConfig {
        members: *e.members.get_or_insert(DEFAULT_MEMBERS),
        root_seed: *e.root_seed.get_or_insert(seed),
        member_seeds: e.member_seeds.clone(),
    };
    ensemble.validate().map_err(|err| config_err(format!("[ensemble] {err}")))?;
    let ensemble_all_folds = *e.all_folds.get_or_insert(true);

    let variance_keep = *f.analysis.variance_keep.get_or_insert(atl_core::analysis::DEFAULT_VARIANCE_KEEP);
    if !(variance_keep > 0.0 && variance_keep <= 1.0) {
        return Err(config_err(format!("analysis.variance_keep must be in (0, 1], got {variance_keep}")));
    }
    let ig_steps = *f.analysis.ig_steps.get_or_insert(atl_core::analysis::DEFAULT_IG_STEPS);
    if ig_steps == 0 {
        return Err(config_err("analysis.ig_steps must be at least 1"));
    }

    Ok(Resolved {
        seed,
        output,
        exec,
        dataset,
        dataset_root: f.dataset.root.clone(),
        store_dir,
        synthetic,
        architecture,
        init_mode,
        weights: f.model.weights.clone(),
        train,
        dsp,
        augmentation,
        selector,
        split_seed,
        ensemble,
        ensemble_all_folds,
        variance_keep,
        ig_steps,
        file: f,
    })
}

impl Resolved {
    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string_pretty(&self.file).map_err(|e| config_err(format!("cannot serialize config: {e}")))
    }

    /// Write the resolved config as `resolved_config.toml` in `dir`.
    pub fn echo_to(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(RESOLVED_CONFIG);
        std::fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }
}
