use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default fraction of squared-singular-value mass kept per side.
pub const DEFAULT_VARIANCE_KEEP: f64 = 0.99;

/// N x D activations (N examples, D neurons) at one probe point.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMatrix {
    pub values: DMatrix<f64>,
    pub probe: String,
    pub source: String,
}

impl ActivationMatrix {
    pub fn new(values: DMatrix<f64>, probe: impl Into<String>, source: impl Into<String>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("activation matrix contains non-finite values".into()));
        }
        Ok(Self {
            values,
            probe: probe.into(),
            source: source.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], probe: impl Into<String>, source: impl Into<String>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Domain("ragged activation rows".into()));
        }
        Self::new(DMatrix::from_fn(n, d, |i, j| rows[i][j]), probe, source)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CcaReport {
    pub probe: String,
    pub rank_a: usize,
    pub rank_b: usize,
    /// Descending, clamped to [0, 1].
    pub correlations: Vec<f64>,
    pub mean: f64,
}

fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = m.clone();
    for mut col in c.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    c
}

/// Orthonormal basis (N x k) of the smallest SVD truncation that keeps at
/// least `keep` of the squared singular-value mass.
fn truncated_basis(x: &DMatrix<f64>, keep: f64, side: &str) -> Result<DMatrix<f64>> {
    let svd = x.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let smax = s.first().copied().unwrap_or(0.0);
    let tol = smax * (x.nrows().max(x.ncols()) as f64) * f64::EPSILON;
    let s: Vec<f64> = s.into_iter().take_while(|&v| v > tol && v > 0.0).collect();
    if s.is_empty() {
        return Err(Error::Degenerate(format!("{side} activations have rank 0 after centering")));
    }
    let total: f64 = s.iter().map(|v| v * v).sum();
    let mut acc = 0.0;
    let mut k = s.len();
    for (i, v) in s.iter().enumerate() {
        acc += v * v;
        if acc / total >= keep - 1e-12 {
            k = i + 1;
            break;
        }
    }
    Ok(DMatrix::from_fn(x.nrows(), k, |r, c| u[(r, order[c])]))
}

/// SVCCA: centre columns, SVD-truncate each side to `variance_keep` of its
/// spectral mass, then take the canonical correlations between the two
/// retained subspaces (the singular values of `Ua^T Ub`).
pub fn svcca_similarity(a: &ActivationMatrix, b: &ActivationMatrix, variance_keep: f64) -> Result<CcaReport> {
    if !(variance_keep > 0.0 && variance_keep <= 1.0) {
        return Err(Error::Config(format!("variance_keep must lie in (0, 1], got {variance_keep}")));
    }
    if a.n() != b.n() {
        return Err(Error::Domain(format!("row counts differ: {} vs {}", a.n(), b.n())));
    }
    if a.d() == 0 || b.d() == 0 {
        return Err(Error::Degenerate("activation matrix has no columns".into()));
    }
    let ua = truncated_basis(&centered(&a.values), variance_keep, "first")?;
    let ub = truncated_basis(&centered(&b.values), variance_keep, "second")?;
    // Centering removes one degree of freedom, so the retained subspaces
    // only carry information while N - 1 exceeds their rank.
    let rank = ua.ncols().max(ub.ncols());
    if a.n() <= rank + 1 {
        return Err(Error::InsufficientSamples { samples: a.n(), rank });
    }
    let m = ua.transpose() * &ub;
    let mut correlations: Vec<f64> = m
        .svd(false, false)
        .singular_values
        .iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    correlations.sort_by(|x, y| y.total_cmp(x));
    correlations.truncate(ua.ncols().min(ub.ncols()));
    let mean = correlations.iter().sum::<f64>() / correlations.len() as f64;
    Ok(CcaReport {
        probe: a.probe.clone(),
        rank_a: ua.ncols(),
        rank_b: ub.ncols(),
        correlations,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(n: usize, d: usize, f: impl Fn(usize, usize) -> f64) -> ActivationMatrix {
        ActivationMatrix::new(DMatrix::from_fn(n, d, f), "p", "t").unwrap()
    }

    #[test]
    fn self_similarity_is_one() {
        let a = mat(50, 4, |i, j| ((i * 7 + j * 13) % 11) as f64 + (i as f64 * 0.1).sin() * j as f64);
        let r = svcca_similarity(&a, &a, 1.0).unwrap();
        assert!((r.mean - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_side_is_degenerate() {
        let a = mat(20, 3, |_, _| 2.0);
        let b = mat(20, 3, |i, j| (i * j) as f64);
        assert!(matches!(svcca_similarity(&a, &b, 0.99), Err(Error::Degenerate(_))));
    }

    #[test]
    fn too_few_rows_is_rejected() {
        let a = mat(3, 5, |i, j| ((i + 1) * (j + 2)) as f64 + (i * j * j) as f64);
        let b = mat(3, 5, |i, j| ((i * 3 + j) % 4) as f64);
        assert!(matches!(
            svcca_similarity(&a, &b, 1.0),
            Err(Error::InsufficientSamples { .. })
        ));
    }
}
