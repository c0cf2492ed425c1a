use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::folds::{FoldPlan, Split};
use super::manifest::{ClipEntry, DatasetKind, DatasetManifest};
use crate::dsp::{load_audio, normalize_tensor, AugmentationPolicy, DspConfig, MelTensor, Waveform};
use crate::{Error, Execution, Result};

pub const STORE_FORMAT_VERSION: u32 = 1;
const INDEX_FILE: &str = "store.json";
const RECORD_DIR: &str = "records";

/// Supplies the waveform for a manifest entry at the requested rate.
pub trait AudioSource: Sync {
    fn load(&self, entry: &ClipEntry, sample_rate: u32) -> Result<Waveform>;
}

/// Decodes the entry's file from disk.
#[derive(Clone, Copy, Debug, Default)]
pub struct FileSource;

impl AudioSource for FileSource {
    fn load(&self, entry: &ClipEntry, sample_rate: u32) -> Result<Waveform> {
        load_audio(&entry.path, sample_rate)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    /// File stem under `records/`: `<clip_id>` or `<clip_id>.aug-<k>`.
    pub key: String,
    pub clip_id: String,
    /// Index into the store's augmentation policy; `None` for the base clip.
    pub augmentation: Option<usize>,
    pub label: usize,
    pub byte_len: u64,
    pub shape: [usize; 3],
    pub sha256: String,
}

impl StoreRecord {
    pub fn file_name(&self) -> String {
        format!("{}.bin", self.key)
    }
}

/// Contents of `store.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreIndex {
    pub format_version: u32,
    pub dataset: DatasetKind,
    pub config_hash: String,
    pub dsp: DspConfig,
    pub augmentation: AugmentationPolicy,
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
    pub normalization: String,
    pub class_names: Vec<String>,
    pub records: Vec<StoreRecord>,
}

/// Opened feature cache rooted at a directory.
#[derive(Clone, Debug)]
pub struct FeatureStore {
    root: PathBuf,
    index: StoreIndex,
    by_clip: HashMap<String, Vec<usize>>,
}

/// Outcome of [`cache_features`].
#[derive(Clone, Debug)]
pub struct CacheReport {
    pub store: FeatureStore,
    pub written: usize,
    pub verified: usize,
}

fn config_hash(kind: DatasetKind, dsp: &DspConfig, policy: &AugmentationPolicy) -> Result<String> {
    let canonical = serde_json::to_vec(&(STORE_FORMAT_VERSION, kind, dsp, policy))?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl FeatureStore {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(INDEX_FILE);
        if !path.is_file() {
            return Err(Error::Integrity(format!(
                "no feature store at {} (missing {INDEX_FILE}); run `prep` first",
                root.display()
            )));
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let index: StoreIndex = serde_json::from_slice(&bytes)?;
        if index.format_version != STORE_FORMAT_VERSION {
            return Err(Error::Integrity(format!(
                "store format version {} unsupported (expected {STORE_FORMAT_VERSION})",
                index.format_version
            )));
        }
        Ok(Self::from_index(root.to_path_buf(), index))
    }

    fn from_index(root: PathBuf, index: StoreIndex) -> Self {
        let mut by_clip: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, r) in index.records.iter().enumerate() {
            by_clip.entry(r.clip_id.clone()).or_default().push(i);
        }
        Self {
            root,
            index,
            by_clip,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn index(&self) -> &StoreIndex {
        &self.index
    }

    pub fn records(&self) -> &[StoreRecord] {
        &self.index.records
    }

    pub fn num_classes(&self) -> usize {
        self.index.class_names.len()
    }

    pub fn tensor_shape(&self) -> [usize; 3] {
        let n_mels = self.index.dsp.specs[0].n_mels;
        [3, n_mels, self.index.dsp.target_width]
    }

    /// All records (base first, then augmentations) of a clip.
    pub fn clip_records(&self, clip_id: &str) -> impl Iterator<Item = &StoreRecord> {
        self.by_clip
            .get(clip_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.index.records[i])
    }

    pub fn record_path(&self, r: &StoreRecord) -> PathBuf {
        self.root.join(RECORD_DIR).join(r.file_name())
    }

    /// Raw (unnormalised) tensor of a record.
    pub fn read(&self, r: &StoreRecord) -> Result<MelTensor> {
        let path = self.record_path(r);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() as u64 != r.byte_len {
            return Err(Error::Integrity(format!(
                "record {} has {} bytes, index says {}",
                r.key,
                bytes.len(),
                r.byte_len
            )));
        }
        MelTensor::from_le_bytes(&bytes, r.shape[0], r.shape[1], r.shape[2])
    }

    /// Re-hash every record file against the index.
    pub fn verify(&self) -> Result<()> {
        for r in self.records() {
            let path = self.record_path(r);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if sha256_hex(&bytes) != r.sha256 {
                return Err(Error::Integrity(format!("checksum mismatch for record {}", r.key)));
            }
        }
        Ok(())
    }
}

enum ClipOutcome {
    Done { records: Vec<StoreRecord>, written: usize, verified: usize },
    Failed(String, String),
}

/// Materialise one record per clip (plus one per augmentation variant) under
/// `out_dir`, then write `store.json` once every clip has succeeded.
///
/// Re-running with an identical configuration verifies existing records by
/// checksum and rewrites nothing.
pub fn cache_features(
    m: &DatasetManifest,
    source: &dyn AudioSource,
    dsp: &DspConfig,
    policy: &AugmentationPolicy,
    out_dir: &Path,
    exec: Execution,
) -> Result<CacheReport> {
    dsp.validate()?;
    let hash = config_hash(m.kind, dsp, policy)?;
    let record_dir = out_dir.join(RECORD_DIR);
    std::fs::create_dir_all(&record_dir).map_err(|e| Error::io(&record_dir, e))?;

    let previous: BTreeMap<String, StoreRecord> = match FeatureStore::open(out_dir) {
        Ok(s) if s.index.config_hash == hash => s
            .index
            .records
            .into_iter()
            .map(|r| (r.key.clone(), r))
            .collect(),
        _ => BTreeMap::new(),
    };
    let shape = [3, dsp.specs[0].n_mels, dsp.target_width];

    let outcomes = exec.map(&m.entries, |entry| {
        let mut records = Vec::with_capacity(1 + policy.len());
        let (mut written, mut verified) = (0, 0);
        let mut waveform: Option<Waveform> = None;
        for aug in std::iter::once(None).chain((0..policy.len()).map(Some)) {
            let key = match aug {
                None => entry.clip_id.clone(),
                Some(k) => format!("{}.aug-{k}", entry.clip_id),
            };
            let path = record_dir.join(format!("{key}.bin"));
            if let Some(prev) = previous.get(&key) {
                if prev.label == entry.label {
                    if let Ok(bytes) = std::fs::read(&path) {
                        if sha256_hex(&bytes) == prev.sha256 {
                            records.push(prev.clone());
                            verified += 1;
                            continue;
                        }
                    }
                }
            }
            let result = (|| -> Result<StoreRecord> {
                if waveform.is_none() {
                    waveform = Some(source.load(entry, dsp.sample_rate)?);
                }
                let base = waveform.as_ref().expect("loaded above");
                let tensor = match aug {
                    None => dsp.extract(base)?,
                    Some(k) => dsp.extract(&policy.variants[k].apply(base)?)?,
                };
                let bytes = tensor.to_le_bytes();
                write_atomic(&path, &bytes)?;
                Ok(StoreRecord {
                    key: key.clone(),
                    clip_id: entry.clip_id.clone(),
                    augmentation: aug,
                    label: entry.label,
                    byte_len: bytes.len() as u64,
                    shape,
                    sha256: sha256_hex(&bytes),
                })
            })();
            match result {
                Ok(r) => {
                    records.push(r);
                    written += 1;
                }
                Err(e) => return ClipOutcome::Failed(key, e.to_string()),
            }
        }
        ClipOutcome::Done { records, written, verified }
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let (mut written, mut verified) = (0, 0);
    for o in outcomes {
        match o {
            ClipOutcome::Done { records: r, written: w, verified: v } => {
                records.extend(r);
                written += w;
                verified += v;
            }
            ClipOutcome::Failed(key, msg) => failures.push((key, msg)),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Extraction(failures));
    }

    let index = StoreIndex {
        format_version: STORE_FORMAT_VERSION,
        dataset: m.kind,
        config_hash: hash,
        dsp: dsp.clone(),
        augmentation: policy.clone(),
        dtype: "f32".into(),
        byte_order: "little".into(),
        layout: "channel, mel, time; row-major".into(),
        normalization: "per-sample per-channel z-score, applied at load".into(),
        class_names: m.class_names.clone(),
        records,
    };
    let json = serde_json::to_vec_pretty(&index)?;
    let index_path = out_dir.join(INDEX_FILE);
    let unchanged = std::fs::read(&index_path).map(|b| b == json).unwrap_or(false);
    if !unchanged {
        write_atomic(&index_path, &json)?;
    }
    Ok(CacheReport {
        store: FeatureStore::from_index(out_dir.to_path_buf(), index),
        written,
        verified,
    })
}

/// Labelled, normalised examples of one split, read lazily from the store.
#[derive(Clone, Debug)]
pub struct ExampleSet {
    store: FeatureStore,
    items: Vec<StoreRecord>,
    cache: Option<Vec<MelTensor>>,
}

impl ExampleSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn record(&self, i: usize) -> &StoreRecord {
        &self.items[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.items[i].label
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|r| r.label).collect()
    }

    pub fn clip_ids(&self) -> Vec<&str> {
        self.items.iter().map(|r| r.clip_id.as_str()).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.store.num_classes()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.store.tensor_shape()
    }

    pub fn store(&self) -> &FeatureStore {
        &self.store
    }

    /// Normalised tensor of item `i`.
    pub fn load(&self, i: usize) -> Result<MelTensor> {
        match &self.cache {
            Some(c) => Ok(c[i].clone()),
            None => Ok(normalize_tensor(&self.store.read(&self.items[i])?)),
        }
    }

    /// Keep every tensor in memory; later loads are copies.
    pub fn preloaded(mut self) -> Result<Self> {
        if self.cache.is_none() {
            let c = (0..self.items.len()).map(|i| self.load(i)).collect::<Result<Vec<_>>>()?;
            self.cache = Some(c);
        }
        Ok(self)
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<(MelTensor, usize)>> + '_ {
        (0..self.len()).map(|i| self.load(i).map(|t| (t, self.label(i))))
    }

    /// Base records of `ids`, in `ids` order.
    pub fn subset(&self, ids: &[String]) -> Result<ExampleSet> {
        self.store.examples(ids, false)
    }
}

impl FeatureStore {
    /// Records of `ids` in `ids` order; each clip's augmented records follow
    /// its base record when `include_augmented` is set.
    pub fn examples(&self, ids: &[String], include_augmented: bool) -> Result<ExampleSet> {
        build_examples(self, ids, include_augmented)
    }
}

fn build_examples(store: &FeatureStore, ids: &[String], include_augmented: bool) -> Result<ExampleSet> {
    let mut items = Vec::with_capacity(ids.len());
    for id in ids {
        let mut found_base = false;
        for r in store.clip_records(id) {
            match r.augmentation {
                None => {
                    found_base = true;
                    items.push(r.clone());
                }
                Some(_) if include_augmented => items.push(r.clone()),
                Some(_) => {}
            }
        }
        if !found_base {
            return Err(Error::Integrity(format!("feature store has no record for clip `{id}`")));
        }
    }
    Ok(ExampleSet {
        store: store.clone(),
        items,
        cache: None,
    })
}

/// Examples of one split. Augmented records are only ever returned for the
/// training split, and only when requested.
pub fn load_examples(
    store: &FeatureStore,
    plan: &FoldPlan,
    split: Split,
    include_augmented: bool,
) -> Result<ExampleSet> {
    let augmented = include_augmented && split == Split::Train;
    build_examples(store, plan.ids(split), augmented)
}
