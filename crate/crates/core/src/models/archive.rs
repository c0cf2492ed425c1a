//! Named-tensor archives: pretrained sources and run checkpoints.
//!
//! On disk an archive is a directory holding `index.json` (name, shape,
//! dtype, byte offset, segment) and `tensors.bin` (raw little-endian values,
//! concatenated in index order), plus free-form provenance in the index.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::arch::Architecture;
use super::params::{tensor_bytes, ParamKind, Segment};
use crate::{Error, Result};

const INDEX: &str = "index.json";
const DATA: &str = "tensors.bin";
pub const ARCHIVE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// `pretrained:<source>` or `checkpoint:<run id>`.
    pub source: String,
    pub architecture: Architecture,
    #[serde(default)]
    pub note: String,
}

#[derive(Clone, Debug)]
pub struct ArchivedTensor {
    pub tensor: Tensor,
    pub segment: Segment,
    pub kind: ParamKind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    byte_len: u64,
    segment: Segment,
    kind: ParamKind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct IndexFile {
    format_version: u32,
    provenance: Provenance,
    data_sha256: String,
    tensors: Vec<IndexEntry>,
}

/// Immutable once built; cloning shares tensor storage.
#[derive(Clone, Debug)]
pub struct WeightArchive {
    pub provenance: Provenance,
    tensors: IndexMap<String, ArchivedTensor>,
}

fn dtype_name(d: DType) -> Result<&'static str> {
    match d {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(Error::Integrity(format!("unsupported archive dtype {other:?}"))),
    }
}

impl WeightArchive {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            provenance,
            tensors: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: ArchivedTensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&ArchivedTensor> {
        self.tensors.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArchivedTensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn segment_keys(&self, seg: Segment) -> Vec<&str> {
        self.tensors
            .iter()
            .filter(|(_, t)| t.segment == seg)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut data = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let bytes = tensor_bytes(&t.tensor)?;
            entries.push(IndexEntry {
                name: name.clone(),
                shape: t.tensor.dims().to_vec(),
                dtype: dtype_name(t.tensor.dtype())?.into(),
                offset: data.len() as u64,
                byte_len: bytes.len() as u64,
                segment: t.segment,
                kind: t.kind,
            });
            data.extend_from_slice(&bytes);
        }
        let index = IndexFile {
            format_version: ARCHIVE_FORMAT_VERSION,
            provenance: self.provenance.clone(),
            data_sha256: hex::encode(Sha256::digest(&data)),
            tensors: entries,
        };
        let data_path = dir.join(DATA);
        std::fs::write(&data_path, &data).map_err(|e| Error::io(&data_path, e))?;
        let index_path = dir.join(INDEX);
        std::fs::write(&index_path, serde_json::to_vec_pretty(&index)?).map_err(|e| Error::io(&index_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index_path = dir.join(INDEX);
        if !index_path.is_file() {
            return Err(Error::Initialization(format!(
                "no weight archive at {} (missing {INDEX})",
                dir.display()
            )));
        }
        let raw = std::fs::read(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let index: IndexFile = serde_json::from_slice(&raw)?;
        if index.format_version != ARCHIVE_FORMAT_VERSION {
            return Err(Error::Integrity(format!(
                "archive format version {} unsupported",
                index.format_version
            )));
        }
        let data_path = dir.join(DATA);
        let data = std::fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
        if hex::encode(Sha256::digest(&data)) != index.data_sha256 {
            return Err(Error::Integrity(format!("checksum mismatch in {}", data_path.display())));
        }
        let mut out = WeightArchive::new(index.provenance);
        for e in index.tensors {
            let start = e.offset as usize;
            let end = start + e.byte_len as usize;
            let bytes = data
                .get(start..end)
                .ok_or_else(|| Error::Integrity(format!("tensor `{}` extends past the data file", e.name)))?;
            let tensor = match e.dtype.as_str() {
                "f32" => {
                    let v: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                    Tensor::from_vec(v, e.shape.as_slice(), &Device::Cpu)?
                }
                "f64" => {
                    let v: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                    Tensor::from_vec(v, e.shape.as_slice(), &Device::Cpu)?
                }
                other => return Err(Error::Integrity(format!("unknown dtype `{other}` for `{}`", e.name))),
            };
            out.insert(
                e.name,
                ArchivedTensor {
                    tensor,
                    segment: e.segment,
                    kind: e.kind,
                },
            );
        }
        Ok(out)
    }
}

/// Keys of an upstream checkpoint that are never imported: the original
/// 1000-way head, Inception's auxiliary classifier and batch counters.
pub fn is_discarded_key(arch: Architecture, name: &str) -> bool {
    let head = format!("{}.", arch.head_name());
    name.starts_with(&head) || name.starts_with("AuxLogits.") || name.ends_with("num_batches_tracked")
}

/// Convert a torchvision-layout safetensors file into an archive for `arch`.
/// Every backbone tensor must be present with a matching shape; the head is
/// dropped.
pub fn import_safetensors(path: &Path, arch: Architecture, source: &str) -> Result<WeightArchive> {
    let raw = candle_core::safetensors::load(path, &Device::Cpu)
        .map_err(|e| Error::Initialization(format!("cannot read {}: {e}", path.display())))?;
    let reference = super::Model::random(arch, 1, 0, DType::F32)?;
    let mut out = WeightArchive::new(Provenance {
        source: format!("pretrained:{source}"),
        architecture: arch,
        note: format!("imported from {}", path.display()),
    });
    let mut missing = Vec::new();
    for (name, entry) in reference.params().iter() {
        if entry.segment == Segment::Classifier {
            continue;
        }
        match raw.get(name) {
            Some(t) if t.dims() == entry.var.as_tensor().dims() => out.insert(
                name,
                ArchivedTensor {
                    tensor: t.to_dtype(DType::F32)?,
                    segment: entry.segment,
                    kind: entry.kind,
                },
            ),
            Some(t) => {
                return Err(Error::Initialization(format!(
                    "`{name}` has shape {:?} in {}, expected {:?}",
                    t.dims(),
                    path.display(),
                    entry.var.as_tensor().dims()
                )))
            }
            None => missing.push(name.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Initialization(format!(
            "{} backbone tensors missing from {} (first: {})",
            missing.len(),
            path.display(),
            missing[0]
        )));
    }
    let unexpected: Vec<&String> = raw
        .keys()
        .filter(|k| !is_discarded_key(arch, k) && reference.params().get(k).is_none())
        .collect();
    if !unexpected.is_empty() {
        log::warn!("ignoring {} unrecognised tensors, e.g. {}", unexpected.len(), unexpected[0]);
    }
    Ok(out)
}
