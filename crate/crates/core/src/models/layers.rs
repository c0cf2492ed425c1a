//! Layer primitives over candle tensors.
//!
//! Strided convolutions and pools are normalised to shapes whose backward
//! passes are exact: inputs are padded explicitly and cropped to the extent
//! the kernel actually visits, and overlapping pools are assembled from
//! shifted slices.

use candle_core::{Tensor, Var, D};

use crate::Result;

pub(crate) trait Layer: Send + Sync {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor>;
    /// Output spatial size for an input of `hw`, or `None` when the input is
    /// too small for some kernel.
    fn out_hw(&self, hw: (usize, usize)) -> Option<(usize, usize)>;
}

pub(crate) type BoxLayer = Box<dyn Layer>;

fn window_out(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = n + 2 * p;
    (padded >= k).then(|| (padded - k) / s + 1)
}

/// Pad by `(ph, pw)` and crop trailing rows/columns the kernel never visits.
fn pad_crop(x: &Tensor, k: (usize, usize), s: usize, p: (usize, usize)) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let mut x = x.clone();
    if p.0 > 0 {
        x = x.pad_with_zeros(2, p.0, p.0)?;
    }
    if p.1 > 0 {
        x = x.pad_with_zeros(3, p.1, p.1)?;
    }
    let oh = window_out(h, k.0, s, p.0).ok_or_else(|| candle_core::Error::Msg("input too small".into()))?;
    let ow = window_out(w, k.1, s, p.1).ok_or_else(|| candle_core::Error::Msg("input too small".into()))?;
    let eh = (oh - 1) * s + k.0;
    let ew = (ow - 1) * s + k.1;
    if eh < h + 2 * p.0 {
        x = x.narrow(2, 0, eh)?;
    }
    if ew < w + 2 * p.1 {
        x = x.narrow(3, 0, ew)?;
    }
    Ok(x)
}

pub(crate) struct Conv2d {
    pub weight: Var,
    pub bias: Option<Var>,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: (usize, usize),
}

impl Layer for Conv2d {
    fn forward(&self, x: &Tensor, _train: bool) -> Result<Tensor> {
        let w = self.weight.as_tensor();
        let y = if self.stride == 1 && self.padding.0 == self.padding.1 {
            x.conv2d(w, self.padding.0, 1, 1, 1)?
        } else {
            pad_crop(x, self.kernel, self.stride, self.padding)?.conv2d(w, 0, self.stride, 1, 1)?
        };
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?,
            None => y,
        })
    }

    fn out_hw(&self, (h, w): (usize, usize)) -> Option<(usize, usize)> {
        Some((
            window_out(h, self.kernel.0, self.stride, self.padding.0)?,
            window_out(w, self.kernel.1, self.stride, self.padding.1)?,
        ))
    }
}

/// Batch normalisation over (N, H, W). Training mode normalises with batch
/// statistics and updates the running buffers; evaluation mode uses the
/// buffers and leaves them untouched.
pub(crate) struct BatchNorm2d {
    pub weight: Var,
    pub bias: Var,
    pub running_mean: Var,
    pub running_var: Var,
    pub eps: f64,
    pub momentum: f64,
}

impl Layer for BatchNorm2d {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let (mean, var) = if train {
            let count = n * h * w;
            let flat = x.transpose(0, 1)?.reshape((c, count))?;
            let mean = flat.mean_keepdim(1)?;
            let centred = flat.broadcast_sub(&mean)?;
            let var = centred.sqr()?.mean_keepdim(1)?;
            let mean = mean.reshape(c)?;
            let var = var.reshape(c)?;
            let unbiased = if count > 1 {
                var.detach().affine(count as f64 / (count - 1) as f64, 0.0)?
            } else {
                var.detach()
            };
            let m = self.momentum;
            let rm = (self.running_mean.as_tensor().affine(1.0 - m, 0.0)? + mean.detach().affine(m, 0.0)?)?;
            let rv = (self.running_var.as_tensor().affine(1.0 - m, 0.0)? + unbiased.affine(m, 0.0)?)?;
            self.running_mean.set(&rm)?;
            self.running_var.set(&rv)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().clone(),
                self.running_var.as_tensor().clone(),
            )
        };
        let scale = self.weight.as_tensor().div(&(var + self.eps)?.sqrt()?)?;
        let shift = self.bias.as_tensor().sub(&mean.mul(&scale)?)?;
        Ok(x
            .broadcast_mul(&scale.reshape((1, c, 1, 1))?)?
            .broadcast_add(&shift.reshape((1, c, 1, 1))?)?)
    }

    fn out_hw(&self, hw: (usize, usize)) -> Option<(usize, usize)> {
        Some(hw)
    }
}

pub(crate) struct Relu;

impl Layer for Relu {
    fn forward(&self, x: &Tensor, _train: bool) -> Result<Tensor> {
        Ok(x.relu()?)
    }

    fn out_hw(&self, hw: (usize, usize)) -> Option<(usize, usize)> {
        Some(hw)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum PoolKind {
    Max,
    /// Zero padding counts towards the average.
    Avg,
}

pub(crate) struct Pool {
    pub kind: PoolKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Pool {
    pub fn max(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kind: PoolKind::Max, kernel, stride, padding }
    }

    pub fn avg(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kind: PoolKind::Avg, kernel, stride, padding }
    }
}

/// Keep every `s`-th row and column starting at 0, producing `(oh, ow)`.
fn subsample(x: &Tensor, s: usize, oh: usize, ow: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let x = x.pad_with_zeros(2, 0, (oh * s).saturating_sub(h))?;
    let x = x.pad_with_zeros(3, 0, (ow * s).saturating_sub(w))?;
    let x = x.narrow(2, 0, oh * s)?.narrow(3, 0, ow * s)?;
    Ok(x.reshape((n, c, oh, s, ow, s))?
        .narrow(3, 0, 1)?
        .narrow(5, 0, 1)?
        .reshape((n, c, oh, ow))?)
}

impl Layer for Pool {
    fn forward(&self, x: &Tensor, _train: bool) -> Result<Tensor> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let x = pad_crop(x, (k, k), s, (p, p))?;
        let (_, _, h, w) = x.dims4()?;
        let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
        if k == s {
            // Non-overlapping windows as reduced axes; candle's own pooling
            // backward mis-scales max gradients.
            let (b, c, _, _) = x.dims4()?;
            let win = x.reshape((b, c, oh, k, ow, k))?;
            return Ok(match self.kind {
                PoolKind::Max => win.max(5)?.max(3)?,
                PoolKind::Avg => win.mean(5)?.mean(3)?,
            });
        }
        let (dh, dw) = (h - k + 1, w - k + 1);
        let mut acc: Option<Tensor> = None;
        for i in 0..k {
            for j in 0..k {
                let shifted = x.narrow(2, i, dh)?.narrow(3, j, dw)?;
                acc = Some(match (acc, self.kind) {
                    (None, _) => shifted,
                    (Some(a), PoolKind::Max) => a.maximum(&shifted)?,
                    (Some(a), PoolKind::Avg) => (a + shifted)?,
                });
            }
        }
        let mut dense = acc.expect("kernel is non-empty");
        if self.kind == PoolKind::Avg {
            dense = dense.affine(1.0 / (k * k) as f64, 0.0)?;
        }
        if s == 1 {
            Ok(dense)
        } else {
            subsample(&dense, s, oh, ow)
        }
    }

    fn out_hw(&self, (h, w): (usize, usize)) -> Option<(usize, usize)> {
        Some((
            window_out(h, self.kernel, self.stride, self.padding)?,
            window_out(w, self.kernel, self.stride, self.padding)?,
        ))
    }
}

pub(crate) struct Seq(pub Vec<BoxLayer>);

impl Layer for Seq {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut y = x.clone();
        for l in &self.0 {
            y = l.forward(&y, train)?;
        }
        Ok(y)
    }

    fn out_hw(&self, hw: (usize, usize)) -> Option<(usize, usize)> {
        self.0.iter().try_fold(hw, |hw, l| l.out_hw(hw))
    }
}

/// Parallel branches over the same input, concatenated on channels.
pub(crate) struct Branches(pub Vec<BoxLayer>);

impl Layer for Branches {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let outs = self
            .0
            .iter()
            .map(|b| b.forward(x, train))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&outs, 1)?)
    }

    fn out_hw(&self, hw: (usize, usize)) -> Option<(usize, usize)> {
        let first = self.0.first()?.out_hw(hw)?;
        self.0.iter().all(|b| b.out_hw(hw) == Some(first)).then_some(first)
    }
}

/// `cat(x, f(x))` on channels.
pub(crate) struct DenseConcat(pub BoxLayer);

impl Layer for DenseConcat {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.0.forward(x, train)?;
        Ok(Tensor::cat(&[x, &y], 1)?)
    }

    fn out_hw(&self, hw: (usize, usize)) -> Option<(usize, usize)> {
        (self.0.out_hw(hw)? == hw).then_some(hw)
    }
}

/// `relu(body(x) + shortcut(x))`.
pub(crate) struct Residual {
    pub body: BoxLayer,
    pub shortcut: Option<BoxLayer>,
}

impl Layer for Residual {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.body.forward(x, train)?;
        let s = match &self.shortcut {
            Some(sc) => sc.forward(x, train)?,
            None => x.clone(),
        };
        Ok((y + s)?.relu()?)
    }

    fn out_hw(&self, hw: (usize, usize)) -> Option<(usize, usize)> {
        let out = self.body.out_hw(hw)?;
        match &self.shortcut {
            Some(sc) => (sc.out_hw(hw)? == out).then_some(out),
            None => (out == hw).then_some(out),
        }
    }
}

pub(crate) struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.as_tensor().t()?)?.broadcast_add(self.bias.as_tensor())?)
    }
}

/// Channel-wise spatial mean: (N, C, H, W) -> (N, C).
pub(crate) fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.flatten_from(2)?.mean(D::Minus1)?)
}


#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t(v: Vec<f64>, shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn overlapping_max_pool_matches_direct_scan() {
        let (h, w) = (7, 9);
        let v: Vec<f64> = (0..h * w).map(|i| ((i * 37) % 23) as f64).collect();
        let x = t(v.clone(), (1, 1, h, w));
        let y = Pool::max(3, 2, 1).forward(&x, false).unwrap();
        let (oh, ow) = (4, 5);
        assert_eq!(y.dims4().unwrap(), (1, 1, oh, ow));
        let got = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for i in 0..oh {
            for j in 0..ow {
                let mut m = 0.0f64;
                for a in 0..3 {
                    for b in 0..3 {
                        let (r, c) = ((i * 2 + a) as isize - 1, (j * 2 + b) as isize - 1);
                        if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                            m = m.max(v[r as usize * w + c as usize]);
                        }
                    }
                }
                assert_eq!(got[i * ow + j], m);
            }
        }
    }

    #[test]
    fn avg_pool_counts_padding() {
        let x = t(vec![1.0; 9], (1, 1, 3, 3));
        let y = Pool::avg(3, 1, 1).forward(&x, false).unwrap();
        let got = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!((got[0] - 4.0 / 9.0).abs() < 1e-12);
        assert!((got[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn odd_sized_pool_gradient_is_routed_to_the_argmax() {
        let v: Vec<f64> = (0..15).map(|i| ((i * 7) % 11) as f64).collect();
        let x = Var::from_tensor(&t(v, (1, 1, 3, 5))).unwrap();
        let y = Pool::max(2, 2, 0).forward(x.as_tensor(), true).unwrap();
        let g = y.sum_all().unwrap().backward().unwrap();
        let gx = g.get(x.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(gx.iter().sum::<f64>(), 2.0, "{gx:?}");
        assert!(gx[10..].iter().all(|&v| v == 0.0));
        assert_eq!(gx[4], 0.0);
    }
}
