use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::svcca::{svcca_similarity, ActivationMatrix, CcaReport};
use crate::datasets::ExampleSet;
use crate::dsp::MelTensor;
use crate::models::{Model, Segment};
use crate::{Error, Execution, Result};

const BATCH: usize = 32;

/// Per-example channel-wise spatial means of each probe segment's output
/// (logits for the classifier), row-aligned with `set`.
pub fn capture_activations(
    model: &Model,
    probes: &[Segment],
    set: &ExampleSet,
    source: &str,
    exec: Execution,
) -> Result<Vec<ActivationMatrix>> {
    if set.is_empty() {
        return Err(Error::Domain("no examples to probe".into()));
    }
    let present = model.segments();
    if let Some(p) = probes.iter().find(|p| !present.contains(p)) {
        return Err(Error::Domain(format!("probe point {p} is not part of this model")));
    }
    let n_batches = set.len().div_ceil(BATCH);
    let parts = exec.map_range(n_batches, |b| -> Result<Vec<Vec<Vec<f64>>>> {
        let idx: Vec<usize> = (b * BATCH..((b + 1) * BATCH).min(set.len())).collect();
        let tensors = idx.iter().map(|&i| set.load(i)).collect::<Result<Vec<MelTensor>>>()?;
        let refs: Vec<&MelTensor> = tensors.iter().collect();
        let (taps, logits) = model.forward_taps(&model.batch(&refs)?, false)?;
        probes
            .iter()
            .map(|&p| {
                let t = if p == Segment::Classifier {
                    logits.clone()
                } else {
                    let pos = present.iter().position(|&s| s == p).expect("checked above");
                    taps[pos].flatten_from(2)?.mean(2)?
                };
                Ok(t.to_dtype(candle_core::DType::F64)?.to_vec2::<f64>()?)
            })
            .collect()
    });
    let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(set.len()); probes.len()];
    for part in parts {
        for (k, r) in part?.into_iter().enumerate() {
            rows[k].extend(r);
        }
    }
    probes
        .iter()
        .zip(rows)
        .map(|(p, r)| {
            let d = r.first().map_or(0, |x| x.len());
            ActivationMatrix::new(DMatrix::from_fn(r.len(), d, |i, j| r[i][j]), p.name(), source)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsChangePoint {
    pub segment: Segment,
    pub report: CcaReport,
}

/// SVCCA similarity between `before` and `after` at every segment output,
/// in forward order.
pub fn weights_change_curve(
    before: &Model,
    after: &Model,
    set: &ExampleSet,
    variance_keep: f64,
    exec: Execution,
) -> Result<Vec<WeightsChangePoint>> {
    if before.architecture() != after.architecture() || before.segments() != after.segments() {
        return Err(Error::Domain(format!(
            "models differ in topology ({} vs {})",
            before.architecture(),
            after.architecture()
        )));
    }
    let probes = before.segments();
    let a = capture_activations(before, &probes, set, "before", exec)?;
    let b = capture_activations(after, &probes, set, "after", exec)?;
    probes
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(&segment, (x, y))| {
            Ok(WeightsChangePoint {
                segment,
                report: svcca_similarity(x, y, variance_keep)?,
            })
        })
        .collect()
}

/// A persisted weights-change curve, one per before/after pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsChangeCurve {
    /// Legend label, e.g. the init mode of the fine-tuned model.
    pub label: String,
    pub architecture: crate::models::Architecture,
    pub before: String,
    pub after: String,
    pub points: Vec<WeightsChangePoint>,
}

impl WeightsChangeCurve {
    pub fn means(&self) -> Vec<Option<f64>> {
        self.points.iter().map(|p| Some(p.report.mean)).collect()
    }
}
