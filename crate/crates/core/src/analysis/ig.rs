use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::dsp::MelTensor;
use crate::models::Model;
use crate::{Error, Result};

pub const DEFAULT_IG_STEPS: usize = 50;
const IG_BATCH: usize = 16;

/// A differentiable scalar-per-class function of a (C, H, W) input.
pub trait Attributable {
    fn num_classes(&self) -> usize;
    /// Target-class scores and input gradients, one flattened (C, H, W)
    /// vector per input.
    fn scores_and_gradients(
        &self,
        shape: (usize, usize, usize),
        inputs: &[Vec<f64>],
        target: usize,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)>;
}

impl Attributable for Model {
    fn num_classes(&self) -> usize {
        Model::num_classes(self)
    }

    fn scores_and_gradients(
        &self,
        (c, h, w): (usize, usize, usize),
        inputs: &[Vec<f64>],
        target: usize,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let flat: Vec<f64> = inputs.iter().flatten().copied().collect();
        let x = Tensor::from_vec(flat, (inputs.len(), c, h, w), &Device::Cpu)?;
        let (scores, g) = self.input_gradient(&x, target)?;
        let g = g.to_dtype(candle_core::DType::F64)?.flatten_from(1)?.to_vec2::<f64>()?;
        Ok((scores, g))
    }
}

/// `F_k(x) = w_k . x + b_k`.
#[derive(Clone, Debug)]
pub struct LinearScorer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Attributable for LinearScorer {
    fn num_classes(&self) -> usize {
        self.weights.len()
    }

    fn scores_and_gradients(
        &self,
        shape: (usize, usize, usize),
        inputs: &[Vec<f64>],
        target: usize,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let w = &self.weights[target];
        if w.len() != shape.0 * shape.1 * shape.2 {
            return Err(Error::Domain("linear scorer weight length does not match the input".into()));
        }
        let scores = inputs
            .iter()
            .map(|x| x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + self.bias[target])
            .collect();
        Ok((scores, vec![w.clone(); inputs.len()]))
    }
}

/// Multiplies every score of the wrapped function by a constant.
pub struct Scaled<'a> {
    pub inner: &'a dyn Attributable,
    pub factor: f64,
}

impl Attributable for Scaled<'_> {
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn scores_and_gradients(
        &self,
        shape: (usize, usize, usize),
        inputs: &[Vec<f64>],
        target: usize,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let (s, g) = self.inner.scores_and_gradients(shape, inputs, target)?;
        let f = self.factor;
        Ok((
            s.into_iter().map(|v| v * f).collect(),
            g.into_iter().map(|r| r.into_iter().map(|v| v * f).collect()).collect(),
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    /// (channels, mels, frames)
    pub shape: (usize, usize, usize),
    pub values: Vec<f64>,
    pub baseline: String,
    pub steps: usize,
    pub target: usize,
    pub score_input: f64,
    pub score_baseline: f64,
    /// `|sum(values) - (score_input - score_baseline)|`
    pub residual: f64,
}

impl AttributionMap {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Residual as a fraction of `|F(x) - F(x')|`.
    pub fn relative_residual(&self) -> f64 {
        self.residual / (self.score_input - self.score_baseline).abs().max(f64::MIN_POSITIVE)
    }

    pub fn get(&self, c: usize, m: usize, t: usize) -> f64 {
        self.values[(c * self.shape.1 + m) * self.shape.2 + t]
    }
}

/// Integrated gradients with the right Riemann sum:
/// `IG_i = (x_i - x'_i) / m * sum_{k=1..m} dF/dx_i (x' + k/m (x - x'))`.
pub fn integrated_gradients(
    model: &dyn Attributable,
    x: &MelTensor,
    baseline: &MelTensor,
    baseline_name: &str,
    steps: usize,
    target: usize,
) -> Result<AttributionMap> {
    if x.shape() != baseline.shape() {
        return Err(Error::Domain(format!(
            "input shape {:?} differs from baseline shape {:?}",
            x.shape(),
            baseline.shape()
        )));
    }
    if steps == 0 {
        return Err(Error::Domain("integrated gradients needs at least one step".into()));
    }
    if target >= model.num_classes() {
        return Err(Error::Domain(format!("target class {target} out of range")));
    }
    let shape = x.shape();
    let xs: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let bs: Vec<f64> = baseline.data().iter().map(|&v| v as f64).collect();
    let delta: Vec<f64> = xs.iter().zip(&bs).map(|(a, b)| a - b).collect();
    let point = |k: usize| -> Vec<f64> {
        let alpha = k as f64 / steps as f64;
        bs.iter().zip(&delta).map(|(b, d)| b + alpha * d).collect()
    };
    let (s0, _) = model.scores_and_gradients(shape, std::slice::from_ref(&bs), target)?;
    let score_baseline = s0[0];
    let mut sum = vec![0.0f64; xs.len()];
    let mut score_input = f64::NAN;
    let mut k = 1;
    while k <= steps {
        let hi = (k + IG_BATCH - 1).min(steps);
        let pts: Vec<Vec<f64>> = (k..=hi).map(point).collect();
        let (scores, grads) = model.scores_and_gradients(shape, &pts, target)?;
        for (j, g) in grads.iter().enumerate() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite gradient at step {}", k + j)));
            }
            for (a, v) in sum.iter_mut().zip(g) {
                *a += v;
            }
        }
        if hi == steps {
            score_input = *scores.last().expect("non-empty batch");
        }
        k = hi + 1;
    }
    let values: Vec<f64> = sum
        .iter()
        .zip(&delta)
        .map(|(g, d)| d * g / steps as f64)
        .collect();
    let total: f64 = values.iter().sum();
    Ok(AttributionMap {
        shape,
        residual: (total - (score_input - score_baseline)).abs(),
        values,
        baseline: baseline_name.into(),
        steps,
        target,
        score_input,
        score_baseline,
    })
}

/// The standard baseline: every cell set to its channel's minimum.
pub fn default_baseline(x: &MelTensor) -> MelTensor {
    x.channel_minimum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_scorer_attribution_is_exact() {
        let x = MelTensor::from_vec((0..24).map(|i| i as f32 * 0.25 - 2.0).collect(), 3, 2, 4).unwrap();
        let zero = MelTensor::zeros(3, 2, 4);
        let w: Vec<f64> = (0..24).map(|i| (i as f64 * 0.7).cos()).collect();
        let lin = LinearScorer { weights: vec![w.clone()], bias: vec![0.3] };
        for steps in [1, 7, 50] {
            let a = integrated_gradients(&lin, &x, &zero, "zero", steps, 0).unwrap();
            for (i, v) in a.values.iter().enumerate() {
                let expected = w[i] * x.data()[i] as f64;
                assert!((v - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            }
            assert!(a.residual < 1e-12);
        }
    }

    #[test]
    fn zero_path_gives_zero_map() {
        let x = MelTensor::from_vec(vec![0.5; 12], 3, 2, 2).unwrap();
        let lin = LinearScorer { weights: vec![vec![1.0; 12]], bias: vec![0.0] };
        let a = integrated_gradients(&lin, &x, &x, "self", 10, 0).unwrap();
        assert!(a.values.iter().all(|&v| v == 0.0));
        assert_eq!(a.residual, 0.0);
    }

    #[test]
    fn shape_mismatch_is_domain_error() {
        let lin = LinearScorer { weights: vec![vec![1.0; 12]], bias: vec![0.0] };
        let r = integrated_gradients(&lin, &MelTensor::zeros(3, 2, 2), &MelTensor::zeros(3, 2, 3), "z", 4, 0);
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
