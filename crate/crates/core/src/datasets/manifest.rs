use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsp::{AugmentationPolicy, DspConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Esc50,
    #[serde(rename = "urbansound8k")]
    UrbanSound8K,
    Gtzan,
    /// Generated tone clips used for CPU-scale checks.
    Synthetic,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Esc50 => "esc50",
            DatasetKind::UrbanSound8K => "urbansound8k",
            DatasetKind::Gtzan => "gtzan",
            DatasetKind::Synthetic => "synthetic",
        }
    }

    pub fn expected_entries(self) -> Option<usize> {
        match self {
            DatasetKind::Esc50 => Some(2000),
            DatasetKind::UrbanSound8K => Some(8732),
            DatasetKind::Gtzan => Some(1000),
            DatasetKind::Synthetic => None,
        }
    }

    pub fn expected_classes(self) -> Option<usize> {
        match self {
            DatasetKind::Esc50 => Some(50),
            DatasetKind::UrbanSound8K | DatasetKind::Gtzan => Some(10),
            DatasetKind::Synthetic => None,
        }
    }

    /// Official fold count, or `None` for seeded splits.
    pub fn official_folds(self) -> Option<u32> {
        match self {
            DatasetKind::Esc50 => Some(5),
            DatasetKind::UrbanSound8K => Some(10),
            DatasetKind::Gtzan => None,
            DatasetKind::Synthetic => Some(5),
        }
    }

    pub fn default_dsp(self) -> DspConfig {
        match self {
            DatasetKind::Esc50 => DspConfig::new(44_100, 5.0, 250),
            DatasetKind::UrbanSound8K => DspConfig::new(22_050, 4.0, 250),
            DatasetKind::Gtzan => DspConfig::new(22_050, 30.0, 1500),
            DatasetKind::Synthetic => DspConfig::new(22_050, 1.0, 64),
        }
    }

    pub fn default_augmentation(self) -> AugmentationPolicy {
        match self {
            DatasetKind::Esc50 => AugmentationPolicy::esc50(),
            _ => AugmentationPolicy::none(),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "esc50" => Ok(DatasetKind::Esc50),
            "urbansound8k" | "us8k" => Ok(DatasetKind::UrbanSound8K),
            "gtzan" => Ok(DatasetKind::Gtzan),
            "synthetic" => Ok(DatasetKind::Synthetic),
            _ => Err(Error::Config(format!("unknown dataset `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub clip_id: String,
    pub path: PathBuf,
    pub label: usize,
    pub class_name: String,
    pub fold: Option<u32>,
    /// Nominal duration in seconds, from metadata.
    pub duration: f64,
    /// Native sample rate when the dataset defines one.
    pub source_sample_rate: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: DatasetKind,
    pub root: PathBuf,
    pub class_names: Vec<String>,
    pub entries: Vec<ClipEntry>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, clip_id: &str) -> Option<&ClipEntry> {
        self.entries.iter().find(|e| e.clip_id == clip_id)
    }

    pub fn folds(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.entries.iter().filter_map(|e| e.fold).collect();
        set.into_iter().collect()
    }

    /// Assemble a manifest from raw `(clip_id, path, class_name, fold,
    /// duration)` rows, assigning labels by sorted class name.
    pub fn from_rows(
        kind: DatasetKind,
        root: PathBuf,
        rows: Vec<(String, PathBuf, String, Option<u32>, f64)>,
        source_sample_rate: Option<u32>,
    ) -> Result<Self> {
        let class_names: Vec<String> = rows
            .iter()
            .map(|r| r.2.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: BTreeMap<&str, usize> = class_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let entries = rows
            .iter()
            .map(|(id, path, class, fold, duration)| ClipEntry {
                clip_id: id.clone(),
                path: path.clone(),
                label: index[class.as_str()],
                class_name: class.clone(),
                fold: *fold,
                duration: *duration,
                source_sample_rate,
            })
            .collect();
        let m = DatasetManifest {
            kind,
            root,
            class_names,
            entries,
        };
        m.check_integrity()?;
        Ok(m)
    }

    /// Verify entry, class and fold counts against the dataset definition.
    pub fn check_integrity(&self) -> Result<()> {
        let mut problems = Vec::new();
        let ids: BTreeSet<&str> = self.entries.iter().map(|e| e.clip_id.as_str()).collect();
        if ids.len() != self.entries.len() {
            problems.push(format!("{} duplicate clip ids", self.entries.len() - ids.len()));
        }
        if let Some(n) = self.kind.expected_entries() {
            if self.entries.len() != n {
                problems.push(format!("expected {n} entries, found {}", self.entries.len()));
            }
        }
        if let Some(c) = self.kind.expected_classes() {
            if self.num_classes() != c {
                problems.push(format!("expected {c} classes, found {}", self.num_classes()));
            }
        }
        let mut per_fold: BTreeMap<u32, usize> = BTreeMap::new();
        for e in &self.entries {
            if let Some(f) = e.fold {
                *per_fold.entry(f).or_default() += 1;
            }
        }
        match self.kind.official_folds() {
            Some(k) => {
                let expected: Vec<u32> = (1..=k).collect();
                let found: Vec<u32> = per_fold.keys().copied().collect();
                if found != expected {
                    problems.push(format!("expected folds {expected:?}, found {found:?}"));
                }
                if self.entries.iter().any(|e| e.fold.is_none()) {
                    problems.push("entries without a fold".into());
                }
                if self.kind == DatasetKind::Esc50 {
                    for (f, n) in &per_fold {
                        if *n != 400 {
                            problems.push(format!("fold {f} has {n} entries, expected 400"));
                        }
                    }
                }
            }
            None => {
                if !per_fold.is_empty() {
                    problems.push("dataset has no official folds but entries carry fold indices".into());
                }
            }
        }
        if self.kind == DatasetKind::Gtzan {
            let mut per_class = vec![0usize; self.num_classes()];
            for e in &self.entries {
                per_class[e.label] += 1;
            }
            for (c, n) in per_class.iter().enumerate() {
                if *n != 100 {
                    problems.push(format!("class {} has {n} clips, expected 100", self.class_names[c]));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Integrity(format!("{} manifest: {}", self.kind, problems.join("; "))))
        }
    }
}

#[derive(Deserialize)]
struct Esc50Row {
    filename: String,
    fold: u32,
    category: String,
}

#[derive(Deserialize)]
struct Us8kRow {
    slice_file_name: String,
    start: f64,
    end: f64,
    fold: u32,
    class: String,
}

fn stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(name)
        .to_string()
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.is_file() {
        return Err(Error::Ingestion(format!("metadata file {} not found", path.display())));
    }
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::Ingestion(format!("{}: {e}", path.display()))))
        .collect()
}

const AUDIO_EXTENSIONS: [&str; 6] = ["wav", "au", "aiff", "aif", "ogg", "flac"];

fn gtzan_genre_root(root: &Path) -> Option<PathBuf> {
    ["genres_original", "genres", "."]
        .iter()
        .map(|d| root.join(d))
        .find(|p| {
            p.is_dir()
                && std::fs::read_dir(p)
                    .map(|rd| rd.flatten().any(|e| e.path().is_dir()))
                    .unwrap_or(false)
        })
}

/// Enumerate a dataset from its published layout:
/// `meta/esc50.csv` + `audio/`, `metadata/UrbanSound8K.csv` +
/// `audio/fold<k>/`, or one directory per genre for GTZAN.
pub fn build_manifest(kind: DatasetKind, root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Ingestion(format!("dataset root {} is not a directory", root.display())));
    }
    match kind {
        DatasetKind::Esc50 => {
            let rows: Vec<Esc50Row> = read_csv(&root.join("meta").join("esc50.csv"))?;
            let rows = rows
                .into_iter()
                .map(|r| {
                    let path = root.join("audio").join(&r.filename);
                    (stem(&r.filename), path, r.category, Some(r.fold), 5.0)
                })
                .collect();
            DatasetManifest::from_rows(kind, root.to_path_buf(), rows, Some(44_100))
        }
        DatasetKind::UrbanSound8K => {
            let rows: Vec<Us8kRow> = read_csv(&root.join("metadata").join("UrbanSound8K.csv"))?;
            let rows = rows
                .into_iter()
                .map(|r| {
                    let path = root
                        .join("audio")
                        .join(format!("fold{}", r.fold))
                        .join(&r.slice_file_name);
                    let duration = (r.end - r.start).clamp(0.0, 4.0);
                    (stem(&r.slice_file_name), path, r.class, Some(r.fold), duration)
                })
                .collect();
            DatasetManifest::from_rows(kind, root.to_path_buf(), rows, None)
        }
        DatasetKind::Gtzan => {
            let genres = gtzan_genre_root(root).ok_or_else(|| {
                Error::Ingestion(format!("no genre directories under {}", root.display()))
            })?;
            let mut dirs: Vec<PathBuf> = std::fs::read_dir(&genres)
                .map_err(|e| Error::io(&genres, e))?
                .flatten()
                .map(|e| e.path())
                .filter(|p| p.is_dir())
                .collect();
            dirs.sort();
            let mut rows = Vec::new();
            for dir in dirs {
                let genre = dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                    .map_err(|e| Error::io(&dir, e))?
                    .flatten()
                    .map(|e| e.path())
                    .filter(|p| {
                        p.extension()
                            .and_then(|e| e.to_str())
                            .is_some_and(|e| AUDIO_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                    })
                    .collect();
                files.sort();
                for f in files {
                    let id = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                    rows.push((id, f, genre.clone(), None, 30.0));
                }
            }
            if rows.is_empty() {
                return Err(Error::Ingestion(format!("no audio files under {}", genres.display())));
            }
            DatasetManifest::from_rows(kind, root.to_path_buf(), rows, Some(22_050))
        }
        DatasetKind::Synthetic => Err(Error::Ingestion(
            "synthetic datasets are generated, not ingested; use datasets::synthetic".into(),
        )),
    }
}
