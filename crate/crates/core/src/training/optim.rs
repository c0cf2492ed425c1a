use candle_core::{Tensor, Var};

use super::WeightDecay;
use crate::Result;

/// Adam with either coupled (L2-in-gradient) or decoupled weight decay.
pub struct Adam {
    vars: Vec<Var>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub mode: WeightDecay,
}

impl Adam {
    pub fn new(vars: Vec<Var>, weight_decay: f64, mode: WeightDecay) -> Result<Self> {
        let m = vars.iter().map(|v| v.as_tensor().zeros_like()).collect::<candle_core::Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Self {
            vars,
            m,
            v,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            mode,
        })
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    /// One update at learning rate `lr`. Parameters without a gradient are
    /// treated as having a zero gradient.
    pub fn step(&mut self, grads: &candle_core::backprop::GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, var) in self.vars.iter().enumerate() {
            let w = var.as_tensor();
            let mut g = match grads.get(w) {
                Some(g) => g.clone(),
                None => w.zeros_like()?,
            };
            if self.mode == WeightDecay::Coupled && self.weight_decay > 0.0 {
                g = (g + w.affine(self.weight_decay, 0.0)?)?;
            }
            let m = (self.m[i].affine(self.beta1, 0.0)? + g.affine(1.0 - self.beta1, 0.0)?)?;
            let v = (self.v[i].affine(self.beta2, 0.0)? + g.sqr()?.affine(1.0 - self.beta2, 0.0)?)?;
            let denom = v.affine(1.0 / c2, 0.0)?.sqrt()?.affine(1.0, self.eps)?;
            let mut update = m.affine(1.0 / c1, 0.0)?.div(&denom)?;
            if self.mode == WeightDecay::Decoupled && self.weight_decay > 0.0 {
                update = (update + w.affine(self.weight_decay, 0.0)?)?;
            }
            let next = (w - update.affine(lr, 0.0)?)?;
            var.set(&next.detach())?;
            self.m[i] = m.detach();
            self.v[i] = v.detach();
        }
        Ok(())
    }
}
