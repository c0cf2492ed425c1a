//! Backbones, block partitions and weight surgery.
//!
//! Every model is split into six forward-ordered segments (stem, block1-4,
//! classifier). Initialisation is deterministic: a parameter's random value
//! depends only on the model seed and the parameter's name, and the linear
//! head is always freshly drawn.

mod archive;
mod arch;
mod layers;
mod params;
mod recipe;

use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use serde::{Deserialize, Serialize};

pub use arch::Architecture;
pub use archive::{import_safetensors, is_discarded_key, ArchivedTensor, Provenance, WeightArchive};
pub use params::{tensor_bytes, ParamEntry, ParamKind, ParamStore, Segment};
pub use recipe::{ModelRecipe, RecipeSpec};

use arch::SegmentModule;
use layers::{global_avg_pool, Linear};
use params::Builder;

use crate::dsp::MelTensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Pretrained,
    Random,
}

impl std::fmt::Display for InitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitMode::Pretrained => "pretrained",
            InitMode::Random => "random",
        })
    }
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pretrained" => Ok(InitMode::Pretrained),
            "random" | "scratch" => Ok(InitMode::Random),
            _ => Err(Error::Config(format!("unknown init mode `{s}` (expected pretrained or random)"))),
        }
    }
}

/// Parameter names of one segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentGroup {
    pub segment: Segment,
    pub weights: Vec<String>,
    pub buffers: Vec<String>,
}

/// Six-segment partition of a model's parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub architecture: Architecture,
    pub groups: Vec<SegmentGroup>,
    /// Composite layers per dense block (DenseNet only).
    pub dense_layers: Option<[usize; 4]>,
}

impl BlockSpec {
    pub fn segments(&self) -> Vec<Segment> {
        self.groups.iter().map(|g| g.segment).collect()
    }

    pub fn group(&self, seg: Segment) -> Option<&SegmentGroup> {
        self.groups.iter().find(|g| g.segment == seg)
    }
}

/// Serializable description of a model's topology and state flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub architecture: Architecture,
    pub init_mode: InitMode,
    pub num_classes: usize,
    pub last_kept: Segment,
    pub frozen_through: Option<Segment>,
    /// Last segment carrying archive weights at construction, if any.
    pub pretrained_through: Option<Segment>,
    pub dtype: String,
    pub seed: u64,
}

pub struct Model {
    descriptor: ModelDescriptor,
    dtype: DType,
    segments: Vec<SegmentModule>,
    head: Linear,
    params: ParamStore,
}

fn dtype_from_name(s: &str) -> Result<DType> {
    match s {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(Error::Config(format!("unsupported dtype `{other}`"))),
    }
}

fn dtype_name(d: DType) -> &'static str {
    if d == DType::F64 {
        "f64"
    } else {
        "f32"
    }
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("descriptor", &self.descriptor)
            .field("parameters", &self.num_parameters())
            .finish()
    }
}

impl Model {
    /// Standard random initialisation throughout.
    pub fn random(arch: Architecture, num_classes: usize, seed: u64, dtype: DType) -> Result<Model> {
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if !matches!(dtype, DType::F32 | DType::F64) {
            return Err(Error::Config(format!("unsupported dtype {dtype:?}")));
        }
        let mut params = ParamStore::default();
        let mut b = Builder {
            store: &mut params,
            segment: Segment::Stem,
            seed,
            dtype,
        };
        let segments = arch.build(&mut b)?;
        let c = segments.last().map(|s| s.out_channels).unwrap_or(3);
        b.segment = Segment::Classifier;
        let head = b.linear(arch.head_name(), c, num_classes)?;
        Ok(Model {
            descriptor: ModelDescriptor {
                architecture: arch,
                init_mode: InitMode::Random,
                num_classes,
                last_kept: Segment::Block4,
                frozen_through: None,
                pretrained_through: None,
                dtype: dtype_name(dtype).into(),
                seed,
            },
            dtype,
            segments,
            head,
            params,
        })
    }

    pub fn descriptor(&self) -> &ModelDescriptor {
        &self.descriptor
    }

    pub fn architecture(&self) -> Architecture {
        self.descriptor.architecture
    }

    pub fn init_mode(&self) -> InitMode {
        self.descriptor.init_mode
    }

    pub fn num_classes(&self) -> usize {
        self.descriptor.num_classes
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn frozen_through(&self) -> Option<Segment> {
        self.descriptor.frozen_through
    }

    pub fn last_kept(&self) -> Segment {
        self.descriptor.last_kept
    }

    /// Segments present in this model, in forward order.
    pub fn segments(&self) -> Vec<Segment> {
        self.segments
            .iter()
            .map(|s| s.segment)
            .chain(std::iter::once(Segment::Classifier))
            .collect()
    }

    /// Output channels of each convolutional segment.
    pub fn segment_channels(&self) -> Vec<(Segment, usize)> {
        self.segments.iter().map(|s| (s.segment, s.out_channels)).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params
            .iter()
            .filter(|(_, e)| e.kind == ParamKind::Weight)
            .map(|(_, e)| e.var.as_tensor().elem_count())
            .sum()
    }

    pub fn is_frozen(&self, seg: Segment) -> bool {
        self.descriptor.frozen_through.is_some_and(|f| seg <= f)
    }

    /// Copy archive tensors into every parameter of segments `<= through`.
    fn load_segments(&mut self, archive: &WeightArchive, through: Segment) -> Result<()> {
        if archive.provenance.architecture != self.architecture() {
            return Err(Error::Initialization(format!(
                "archive holds {} weights, model is {}",
                archive.provenance.architecture,
                self.architecture()
            )));
        }
        for (name, entry) in self.params.iter() {
            if entry.segment > through {
                continue;
            }
            let src = archive.get(name).ok_or_else(|| {
                Error::Initialization(format!("archive has no tensor `{name}` ({} segment)", entry.segment))
            })?;
            let dst = entry.var.as_tensor();
            if src.tensor.dims() != dst.dims() {
                return Err(Error::Initialization(format!(
                    "`{name}`: archive shape {:?}, model shape {:?}",
                    src.tensor.dims(),
                    dst.dims()
                )));
            }
            entry.var.set(&src.tensor.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Freeze segments up to and including `frozen_through` (`None`
    /// unfreezes everything). Frozen segments receive no updates and their
    /// batch-norm layers always run with stored statistics.
    pub fn set_trainable(&mut self, frozen_through: Option<Segment>) -> Result<()> {
        if let Some(f) = frozen_through {
            if f != Segment::Classifier && f > self.last_kept() {
                return Err(Error::Domain(format!(
                    "cannot freeze through {f}: model was truncated after {}",
                    self.last_kept()
                )));
            }
        }
        self.descriptor.frozen_through = frozen_through;
        Ok(())
    }

    pub fn with_frozen_through(mut self, frozen_through: Option<Segment>) -> Result<Model> {
        self.set_trainable(frozen_through)?;
        Ok(self)
    }

    /// Drop every segment after `last_kept` and attach a fresh head to the
    /// surviving feature map (global average pooling + linear).
    pub fn truncate_after(mut self, last_kept: Segment, num_classes: usize, seed: u64) -> Result<Model> {
        if last_kept == Segment::Stem || last_kept == Segment::Classifier {
            return Err(Error::Domain(format!(
                "truncating after {last_kept} leaves no convolutional block"
            )));
        }
        if last_kept > self.last_kept() {
            return Err(Error::Domain(format!(
                "model already truncated after {}; cannot keep {last_kept}",
                self.last_kept()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        self.segments.retain(|s| s.segment <= last_kept);
        self.params
            .retain(|_, e| e.segment <= last_kept && e.segment != Segment::Classifier);
        let c = self.segments.last().expect("at least stem and block1").out_channels;
        let mut b = Builder {
            store: &mut self.params,
            segment: Segment::Classifier,
            seed,
            dtype: self.dtype,
        };
        self.head = b.linear(self.descriptor.architecture.head_name(), c, num_classes)?;
        self.descriptor.last_kept = last_kept;
        self.descriptor.num_classes = num_classes;
        if let Some(f) = self.descriptor.frozen_through {
            if f > last_kept {
                self.descriptor.frozen_through = Some(last_kept);
            }
        }
        Ok(self)
    }

    /// Spatial size after the last kept segment, or a configuration error if
    /// the input is below the architecture's minimum grid.
    pub fn check_input(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.segments
            .iter()
            .try_fold((h, w), |hw, s| s.body.out_hw(hw))
            .filter(|&(a, b)| a > 0 && b > 0)
            .ok_or_else(|| {
                let min = self.min_square_input();
                Error::Config(format!(
                    "input {h}x{w} is below the minimum grid of {} (smallest square input: {min}x{min})",
                    self.architecture()
                ))
            })
    }

    /// Smallest `s` such that an `s x s` input is accepted.
    pub fn min_square_input(&self) -> usize {
        (1..=4096)
            .find(|&s| {
                self.segments
                    .iter()
                    .try_fold((s, s), |hw, seg| seg.body.out_hw(hw))
                    .is_some_and(|(a, b)| a > 0 && b > 0)
            })
            .unwrap_or(usize::MAX)
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x
            .dims4()
            .map_err(|_| Error::Config(format!("expected (N, 3, H, W) input, got {:?}", x.dims())))?;
        if c != 3 {
            return Err(Error::Config(format!("expected 3 input channels, got {c}")));
        }
        self.check_input(h, w).map(|_| ())
    }

    /// Logits for a batch `(N, 3, H, W)`. `train` selects batch-statistics
    /// normalisation (and running-stat updates) in unfrozen segments.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.forward_taps(x, train).map(|(_, logits)| logits)
    }

    /// Logits plus every convolutional segment's output feature map.
    pub fn forward_taps(&self, x: &Tensor, train: bool) -> Result<(Vec<Tensor>, Tensor)> {
        self.check_batch(x)?;
        let mut taps = Vec::with_capacity(self.segments.len());
        let mut y = x.to_dtype(self.dtype)?;
        for s in &self.segments {
            y = s.body.forward(&y, train && !self.is_frozen(s.segment))?;
            taps.push(y.clone());
        }
        let logits = self.head.forward(&global_avg_pool(&y)?)?;
        Ok((taps, logits))
    }

    /// Stack feature tensors into a model-dtype batch.
    pub fn batch(&self, items: &[&MelTensor]) -> Result<Tensor> {
        images_to_tensor(items, self.dtype)
    }

    /// Class probabilities (softmax of logits) in evaluation mode.
    pub fn predict_proba(&self, items: &[&MelTensor]) -> Result<Vec<Vec<f64>>> {
        let logits = self.forward(&self.batch(items)?, false)?;
        let p = candle_nn::ops::softmax(&logits.to_dtype(DType::F64)?, D::Minus1)?;
        Ok(p.to_vec2::<f64>()?)
    }

    /// Logits in evaluation mode, as f64.
    pub fn logits(&self, items: &[&MelTensor]) -> Result<Vec<Vec<f64>>> {
        let logits = self.forward(&self.batch(items)?, false)?;
        Ok(logits.to_dtype(DType::F64)?.to_vec2::<f64>()?)
    }

    /// Evaluation-mode scores of `class` and their gradients with respect to
    /// the input batch.
    pub fn input_gradient(&self, x: &Tensor, class: usize) -> Result<(Vec<f64>, Tensor)> {
        if class >= self.num_classes() {
            return Err(Error::Domain(format!("class {class} out of range for {} outputs", self.num_classes())));
        }
        let var = Var::from_tensor(&x.to_dtype(self.dtype)?)?;
        let logits = self.forward(var.as_tensor(), false)?;
        let scores = logits.narrow(1, class, 1)?.squeeze(1)?;
        let grads = scores.sum_all()?.backward()?;
        let g = grads
            .get(var.as_tensor())
            .cloned()
            .unwrap_or(var.as_tensor().zeros_like()?);
        Ok((scores.to_dtype(DType::F64)?.to_vec1::<f64>()?, g))
    }

    /// Weights (not buffers) that the optimiser may update.
    pub fn trainable_vars(&self) -> Vec<(String, Var)> {
        self.params
            .iter()
            .filter(|(_, e)| e.kind == ParamKind::Weight && !self.is_frozen(e.segment))
            .map(|(n, e)| (n.to_string(), e.var.clone()))
            .collect()
    }

    pub fn block_spec(&self) -> BlockSpec {
        let groups = self
            .segments()
            .into_iter()
            .map(|seg| {
                let (mut weights, mut buffers) = (Vec::new(), Vec::new());
                for (n, e) in self.params.iter().filter(|(_, e)| e.segment == seg) {
                    match e.kind {
                        ParamKind::Weight => weights.push(n.to_string()),
                        ParamKind::Buffer => buffers.push(n.to_string()),
                    }
                }
                SegmentGroup { segment: seg, weights, buffers }
            })
            .collect();
        BlockSpec {
            architecture: self.architecture(),
            groups,
            dense_layers: self.architecture().dense_layers(),
        }
    }

    pub fn segment_checksum(&self, seg: Segment) -> Result<String> {
        self.params.checksum(seg)
    }

    /// Snapshot of the current tensors. `include_head = false` produces a
    /// backbone archive suitable for pretrained initialisation.
    pub fn to_archive(&self, source: &str, include_head: bool) -> Result<WeightArchive> {
        let mut a = WeightArchive::new(Provenance {
            source: source.into(),
            architecture: self.architecture(),
            note: String::new(),
        });
        for (n, e) in self.params.iter() {
            if e.segment == Segment::Classifier && !include_head {
                continue;
            }
            a.insert(
                n,
                ArchivedTensor {
                    tensor: e.var.as_tensor().copy()?,
                    segment: e.segment,
                    kind: e.kind,
                },
            );
        }
        Ok(a)
    }

    /// Rebuild a model from a descriptor and a complete archive.
    pub fn from_parts(descriptor: &ModelDescriptor, archive: &WeightArchive) -> Result<Model> {
        let dtype = dtype_from_name(&descriptor.dtype)?;
        let mut m = Model::random(descriptor.architecture, descriptor.num_classes, descriptor.seed, dtype)?;
        if descriptor.last_kept != Segment::Block4 {
            m = m.truncate_after(descriptor.last_kept, descriptor.num_classes, descriptor.seed)?;
        }
        m.load_segments(archive, Segment::Classifier)?;
        m.descriptor = descriptor.clone();
        Ok(m)
    }

    /// Deep copy in another floating dtype.
    pub fn to_dtype(&self, dtype: DType) -> Result<Model> {
        let mut d = self.descriptor.clone();
        d.dtype = dtype_name(dtype).into();
        Model::from_parts(&d, &self.to_archive("copy", true)?)
    }

    pub fn try_clone(&self) -> Result<Model> {
        self.to_dtype(self.dtype)
    }

    pub fn save_checkpoint(&self, dir: &Path, source: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("model.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&self.descriptor)?).map_err(|e| Error::io(&path, e))?;
        self.to_archive(source, true)?.save(dir)
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Model> {
        let path = dir.join("model.json");
        let raw = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let d: ModelDescriptor = serde_json::from_slice(&raw)?;
        Model::from_parts(&d, &WeightArchive::load(dir)?)
    }
}

/// `(N, 3, H, W)` batch from feature tensors.
pub fn images_to_tensor(items: &[&MelTensor], dtype: DType) -> Result<Tensor> {
    let first = items.first().ok_or_else(|| Error::EmptyInput("empty batch".into()))?;
    let (c, h, w) = first.shape();
    let mut data = Vec::with_capacity(items.len() * c * h * w);
    for t in items {
        if t.shape() != (c, h, w) {
            return Err(Error::Config(format!(
                "batch mixes shapes {:?} and {:?}",
                (c, h, w),
                t.shape()
            )));
        }
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::from_vec(data, (items.len(), c, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Build a backbone. Pretrained mode loads every convolutional segment from
/// `archive`; the classifier is always drawn fresh from `seed`.
pub fn build_backbone(
    arch: Architecture,
    init: InitMode,
    num_classes: usize,
    seed: u64,
    archive: Option<&WeightArchive>,
) -> Result<Model> {
    match init {
        InitMode::Random => Model::random(arch, num_classes, seed, DType::F32),
        InitMode::Pretrained => {
            let archive = archive.ok_or_else(|| {
                Error::Initialization(format!("pretrained {arch} requested but no weight archive was supplied"))
            })?;
            if archive.provenance.architecture != arch {
                return Err(Error::Initialization(format!(
                    "archive holds {} weights, requested {arch}",
                    archive.provenance.architecture
                )));
            }
            fuse_weights(archive, Segment::Block4, num_classes, seed)
        }
    }
}

/// Segments up to and including `cut` from `archive`, the rest random.
pub fn fuse_weights(archive: &WeightArchive, cut: Segment, num_classes: usize, seed: u64) -> Result<Model> {
    if cut == Segment::Classifier {
        return Err(Error::Domain(
            "cut must be a convolutional segment; the classifier is always freshly initialised".into(),
        ));
    }
    let mut m = Model::random(archive.provenance.architecture, num_classes, seed, DType::F32)?;
    m.load_segments(archive, cut)?;
    m.descriptor.init_mode = InitMode::Pretrained;
    m.descriptor.pretrained_through = Some(cut);
    Ok(m)
}

pub fn list_blocks(m: &Model) -> BlockSpec {
    m.block_spec()
}

pub fn set_trainable(m: Model, frozen_through: Option<Segment>) -> Result<Model> {
    m.with_frozen_through(frozen_through)
}

pub fn truncate_after(m: Model, last_kept: Segment, num_classes: usize, seed: u64) -> Result<Model> {
    m.truncate_after(last_kept, num_classes, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_forward_shape_and_minimum() {
        let m = Model::random(Architecture::Tiny, 5, 1, DType::F32).unwrap();
        let x = Tensor::zeros((2, 3, 128, 64), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(m.forward(&x, false).unwrap().dims(), &[2, 5]);
        let small = Tensor::zeros((1, 3, 8, 8), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(m.forward(&small, false), Err(Error::Config(_))));
        assert!(m.min_square_input() > 8);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Model::random(Architecture::Tiny, 3, 7, DType::F32).unwrap();
        let b = Model::random(Architecture::Tiny, 3, 7, DType::F32).unwrap();
        for seg in Segment::ALL {
            assert_eq!(a.segment_checksum(seg).unwrap(), b.segment_checksum(seg).unwrap());
        }
    }
}
