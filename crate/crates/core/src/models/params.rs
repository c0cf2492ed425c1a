use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor, Var};
use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{BatchNorm2d, Conv2d, Linear};
use crate::{seed, Error, Result};

/// The six forward-ordered parameter groups shared by every backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Stem,
    Block1,
    Block2,
    Block3,
    Block4,
    Classifier,
}

impl Segment {
    pub const ALL: [Segment; 6] = [
        Segment::Stem,
        Segment::Block1,
        Segment::Block2,
        Segment::Block3,
        Segment::Block4,
        Segment::Classifier,
    ];

    /// Convolutional segments, in order.
    pub const FEATURES: [Segment; 5] = [
        Segment::Stem,
        Segment::Block1,
        Segment::Block2,
        Segment::Block3,
        Segment::Block4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Segment::Stem => "stem",
            Segment::Block1 => "block1",
            Segment::Block2 => "block2",
            Segment::Block3 => "block3",
            Segment::Block4 => "block4",
            Segment::Classifier => "classifier",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Segment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Segment::ALL
            .into_iter()
            .find(|seg| seg.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Domain(format!(
                    "unknown segment `{s}` (expected stem, block1..block4 or classifier)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// Optimised by gradient descent.
    Weight,
    /// Running statistic, updated in training mode only.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub var: Var,
    pub segment: Segment,
    pub kind: ParamKind,
}

/// Named parameters and buffers in construction (= forward) order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: IndexMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub(crate) fn insert(&mut self, name: String, entry: ParamEntry) -> Result<()> {
        if self.entries.contains_key(&name) {
            return Err(Error::Initialization(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, entry);
        Ok(())
    }

    pub(crate) fn retain(&mut self, keep: impl Fn(&str, &ParamEntry) -> bool) {
        self.entries.retain(|k, v| keep(k, v));
    }

    pub fn segment_names(&self, seg: Segment) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, e)| e.segment == seg)
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// SHA-256 over every tensor (weights and buffers) of a segment, in
    /// name order.
    pub fn checksum(&self, seg: Segment) -> Result<String> {
        let mut names: Vec<&String> = self
            .entries
            .iter()
            .filter(|(_, e)| e.segment == seg)
            .map(|(k, _)| k)
            .collect();
        names.sort();
        let mut h = Sha256::new();
        for n in names {
            h.update(n.as_bytes());
            h.update(tensor_bytes(self.entries[n].var.as_tensor())?);
        }
        Ok(hex::encode(h.finalize()))
    }
}

/// Little-endian raw bytes of a floating tensor in its own dtype.
pub fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        _ => flat
            .to_dtype(DType::F32)?
            .to_vec1::<f32>()?
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect(),
    })
}

fn name_stream(name: &str) -> u64 {
    // FNV-1a; stable across platforms and releases.
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Registers parameters of one model while tracking the current segment.
/// Random values for a parameter depend only on the seed and its name.
pub(crate) struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub segment: Segment,
    pub seed: u64,
    pub dtype: DType,
}

impl Builder<'_> {
    fn tensor(&self, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype)?)
    }

    fn register(&mut self, name: &str, t: Tensor, kind: ParamKind) -> Result<Var> {
        let var = Var::from_tensor(&t)?;
        self.store.insert(
            name.to_string(),
            ParamEntry {
                var: var.clone(),
                segment: self.segment,
                kind,
            },
        )?;
        Ok(var)
    }

    fn rng(&self, name: &str) -> rand_chacha::ChaCha8Rng {
        seed::rng(seed::derive(self.seed, name_stream(name)))
    }

    /// Kaiming-normal (fan-in, ReLU gain) weights; no bias.
    pub fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: (usize, usize),
    ) -> Result<Conv2d> {
        let wname = format!("{name}.weight");
        let fan_in = cin * kernel.0 * kernel.1;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).map_err(|e| Error::Initialization(e.to_string()))?;
        let mut rng = self.rng(&wname);
        let n = cout * fan_in;
        let values = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let t = self.tensor(values, &[cout, cin, kernel.0, kernel.1])?;
        Ok(Conv2d {
            weight: self.register(&wname, t, ParamKind::Weight)?,
            bias: None,
            kernel,
            stride,
            padding,
        })
    }

    pub fn batch_norm(&mut self, name: &str, c: usize, eps: f64) -> Result<BatchNorm2d> {
        let ones = self.tensor(vec![1.0; c], &[c])?;
        let zeros = self.tensor(vec![0.0; c], &[c])?;
        Ok(BatchNorm2d {
            weight: self.register(&format!("{name}.weight"), ones.clone(), ParamKind::Weight)?,
            bias: self.register(&format!("{name}.bias"), zeros.clone(), ParamKind::Weight)?,
            running_mean: self.register(&format!("{name}.running_mean"), zeros, ParamKind::Buffer)?,
            running_var: self.register(&format!("{name}.running_var"), ones, ParamKind::Buffer)?,
            eps,
            momentum: 0.1,
        })
    }

    /// Uniform(-1/sqrt(in), 1/sqrt(in)) weights and bias.
    pub fn linear(&mut self, name: &str, cin: usize, cout: usize) -> Result<Linear> {
        let bound = 1.0 / (cin as f64).sqrt();
        let wname = format!("{name}.weight");
        let bname = format!("{name}.bias");
        let mut rng = self.rng(&wname);
        let w = (0..cin * cout).map(|_| rng.random_range(-bound..bound)).collect();
        let mut rng = self.rng(&bname);
        let b = (0..cout).map(|_| rng.random_range(-bound..bound)).collect();
        let w = self.tensor(w, &[cout, cin])?;
        let b = self.tensor(b, &[cout])?;
        Ok(Linear {
            weight: self.register(&wname, w, ParamKind::Weight)?,
            bias: self.register(&bname, b, ParamKind::Weight)?,
        })
    }
}
