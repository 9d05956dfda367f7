use serde::{Deserialize, Serialize};

use super::schedule::{scheduled_rate, ScheduleKind};
use super::{check_inputs, Slot};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LarsVariant {
    /// `v = m v + (g + β w)`, `w -= η λ v`.
    Scaled,
    /// `v = m v + η λ (g + β w)`, `w -= v`.
    Unscaled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LarsConfig {
    /// Trust coefficient ε.
    pub epsilon: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub base_lr: f64,
    pub warmup_epochs: f64,
    pub total_epochs: f64,
    #[serde(default)]
    pub schedule: ScheduleKind,
}

impl LarsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::invalid("LarsConfig", d));
        let all = [self.epsilon, self.weight_decay, self.momentum, self.base_lr, self.warmup_epochs, self.total_epochs];
        if all.iter().any(|v| !v.is_finite()) {
            return bad(format!("non-finite field in {self:?}"));
        }
        if self.epsilon <= 0.0 {
            return bad(format!("epsilon {} must be positive", self.epsilon));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.weight_decay < 0.0 || self.base_lr < 0.0 {
            return bad("weight decay and base lr must be non-negative".into());
        }
        if self.warmup_epochs < 0.0 || self.warmup_epochs > self.total_epochs {
            return bad(format!("warmup {} must lie in [0, total {}]", self.warmup_epochs, self.total_epochs));
        }
        Ok(())
    }
}

/// Global rate at `epoch`.
pub fn lr_schedule(epoch: f64, cfg: &LarsConfig) -> f64 {
    scheduled_rate(epoch, cfg.base_lr, cfg.warmup_epochs, cfg.total_epochs, cfg.schedule)
}

fn norm(x: &[f32]) -> f64 {
    x.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
}

/// Layer-wise trust ratio `ε‖w‖ / (‖g‖ + β‖w‖)`, zero when either norm term vanishes.
pub fn trust_ratio(w: &Tensor, g: &Tensor, epsilon: f64, weight_decay: f64) -> f64 {
    let wn = norm(w.data());
    let denom = norm(g.data()) + weight_decay * wn;
    if wn == 0.0 || denom == 0.0 {
        0.0
    } else {
        epsilon * wn / denom
    }
}

/// `m·v + x`. With `m = 0` the old velocity is dropped outright, so neither
/// its sign (`0·v` can be `-0`) nor a non-finite value leaks into `x`.
fn accumulate(m: f32, v: f32, x: f32) -> f32 {
    if m == 0.0 {
        x
    } else {
        m * v + x
    }
}

pub(super) fn step(w: &Tensor, g: &Tensor, slot: &Slot, cfg: &LarsConfig, eta: f64, variant: LarsVariant) -> Result<(Tensor, Slot)> {
    check_inputs("lars", w, g, slot)?;
    let scale = (eta * trust_ratio(w, g, cfg.epsilon, cfg.weight_decay)) as f32;
    let (m, beta) = (cfg.momentum as f32, cfg.weight_decay as f32);
    let mut wn = Vec::with_capacity(w.len());
    let mut vn = Vec::with_capacity(w.len());
    for ((&wi, &gi), &vi) in w.data().iter().zip(g.data()).zip(slot.first.data()) {
        let u = gi + beta * wi;
        let (v, w) = match variant {
            LarsVariant::Scaled => {
                let v = accumulate(m, vi, u);
                (v, wi - scale * v)
            }
            LarsVariant::Unscaled => {
                let v = accumulate(m, vi, scale * u);
                (v, wi - v)
            }
        };
        vn.push(v);
        wn.push(w);
    }
    let shape = w.shape().to_vec();
    Ok((Tensor::new(shape.clone(), wn)?, Slot { first: Tensor::new(shape, vn)?, second: None }))
}

pub fn lars_scaled_step(w: &Tensor, g: &Tensor, slot: &Slot, cfg: &LarsConfig, eta: f64) -> Result<(Tensor, Slot)> {
    step(w, g, slot, cfg, eta, LarsVariant::Scaled)
}

pub fn lars_unscaled_step(w: &Tensor, g: &Tensor, slot: &Slot, cfg: &LarsConfig, eta: f64) -> Result<(Tensor, Slot)> {
    step(w, g, slot, cfg, eta, LarsVariant::Unscaled)
}
