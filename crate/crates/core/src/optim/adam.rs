use serde::{Deserialize, Serialize};

use super::{check_inputs, Slot};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, adam_epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.lr, self.beta1, self.beta2, self.adam_epsilon].iter().all(|v| v.is_finite())
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("AdamConfig", format!("{self:?}")))
        }
    }
}

/// Bias-corrected Adam. `t` is the 1-based step number.
pub fn adam_step(w: &Tensor, g: &Tensor, slot: &Slot, cfg: &AdamConfig, lr: f64, t: u64) -> Result<(Tensor, Slot)> {
    check_inputs("adam_step", w, g, slot)?;
    let second = slot.second.as_ref().ok_or_else(|| Error::invalid("adam_step", "slot has no second moment"))?;
    if t == 0 {
        return Err(Error::invalid("adam_step", "step numbers start at 1"));
    }
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let c1 = (1.0 - cfg.beta1.powf(t as f64)) as f32;
    let c2 = (1.0 - cfg.beta2.powf(t as f64)) as f32;
    let (lr, eps) = (lr as f32, cfg.adam_epsilon as f32);
    let n = w.len();
    let (mut wn, mut mn, mut vn) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let gi = g.data()[i];
        let m = b1 * slot.first.data()[i] + (1.0 - b1) * gi;
        let v = b2 * second.data()[i] + (1.0 - b2) * gi * gi;
        let mhat = m / c1;
        let vhat = v / c2;
        wn.push(w.data()[i] - lr * mhat / (vhat.sqrt() + eps));
        mn.push(m);
        vn.push(v);
    }
    let shape = w.shape().to_vec();
    Ok((Tensor::new(shape.clone(), wn)?, Slot { first: Tensor::new(shape.clone(), mn)?, second: Some(Tensor::new(shape, vn)?) }))
}
