//! LARS (scaled and unscaled momentum), Adam, learning-rate schedules and
//! sharded weight updates.

mod adam;
mod lars;
mod schedule;
mod sharding;

pub use adam::{adam_step, AdamConfig};
pub use lars::{lars_scaled_step, lars_unscaled_step, lr_schedule, trust_ratio, LarsConfig, LarsVariant};
pub use schedule::{scheduled_rate, ScheduleKind};
pub use sharding::{sharded_weight_update, WeightShardLayout};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::torus::{GradientSet, WeightSet};

/// Optimizer slots for one weight tensor: LARS velocity, or Adam first and
/// second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Slot {
    pub first: Tensor,
    pub second: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    /// Number of completed steps.
    pub step: u64,
    /// Indexed like the weight set. `None` for tensors another core owns.
    pub slots: Vec<Option<Slot>>,
}

impl OptimizerState {
    pub fn new(opt: &Optimizer, weights: &WeightSet) -> Self {
        Self { step: 0, slots: weights.tensors().map(|w| Some(opt.init_slot(w))).collect() }
    }

    /// State holding only the slots of the tensors `core` owns under `layout`.
    pub fn for_core(opt: &Optimizer, weights: &WeightSet, layout: &WeightShardLayout, core: usize) -> Self {
        Self { step: 0, slots: weights.tensors().enumerate().map(|(i, w)| (layout.owner(i) == core).then(|| opt.init_slot(w))).collect() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Optimizer {
    Lars { variant: LarsVariant, config: LarsConfig },
    Adam { config: AdamConfig },
}

/// Names accepted by [`Optimizer::preset`].
pub const PRESET_NAMES: [&str; 3] = ["scaled-31.2", "unscaled-31.2", "unscaled-29.0-m0.929"];

impl Optimizer {
    /// Named LARS configurations (base rate, warmup, momentum, epochs).
    /// All use trust coefficient 0.001 and weight decay 5e-5.
    pub fn preset(name: &str) -> Option<Self> {
        let (variant, base_lr, warmup_epochs, momentum, total_epochs) = match name {
            "scaled-31.2" => (LarsVariant::Scaled, 31.2, 25.0, 0.9, 72.8),
            "unscaled-31.2" => (LarsVariant::Unscaled, 31.2, 25.0, 0.9, 70.6),
            "unscaled-29.0-m0.929" => (LarsVariant::Unscaled, 29.0, 18.0, 0.929, 64.0),
            _ => return None,
        };
        Some(Self::Lars {
            variant,
            config: LarsConfig {
                epsilon: 0.001,
                weight_decay: 5e-5,
                momentum,
                base_lr,
                warmup_epochs,
                total_epochs,
                schedule: ScheduleKind::WarmupPoly2,
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Lars { config, .. } => config.validate(),
            Self::Adam { config } => config.validate(),
        }
    }

    /// Global learning rate at `epoch`.
    pub fn rate(&self, epoch: f64) -> f64 {
        match self {
            Self::Lars { config, .. } => lr_schedule(epoch, config),
            Self::Adam { config } => config.lr,
        }
    }

    /// Planned training length, if the optimizer's schedule defines one.
    pub fn total_epochs(&self) -> Option<f64> {
        match self {
            Self::Lars { config, .. } if config.schedule == ScheduleKind::WarmupPoly2 => Some(config.total_epochs),
            _ => None,
        }
    }

    pub fn init_slot(&self, w: &Tensor) -> Slot {
        let zeros = Tensor::zeros(w.shape());
        match self {
            Self::Lars { .. } => Slot { first: zeros, second: None },
            Self::Adam { .. } => Slot { first: zeros.clone(), second: Some(zeros) },
        }
    }

    /// Update of one tensor; `t` is the 1-based step number.
    pub fn step_tensor(&self, w: &Tensor, g: &Tensor, slot: &Slot, eta: f64, t: u64) -> Result<(Tensor, Slot)> {
        match self {
            Self::Lars { variant, config } => lars::step(w, g, slot, config, eta, *variant),
            Self::Adam { config } => adam_step(w, g, slot, config, eta, t),
        }
    }

    /// Replicated update of every tensor.
    pub fn step(&self, weights: &WeightSet, grads: &GradientSet, state: &OptimizerState, eta: f64) -> Result<(WeightSet, OptimizerState)> {
        if !weights.same_structure(grads) || state.slots.len() != weights.len() {
            return Err(Error::Layout("weights, gradients and optimizer state disagree".into()));
        }
        let t = state.step + 1;
        let mut slots = Vec::with_capacity(weights.len());
        let mut out = Vec::with_capacity(weights.len());
        for (i, ((name, w), g)) in weights.entries().iter().zip(grads.tensors()).enumerate() {
            let slot = state.slots[i].as_ref().ok_or_else(|| Error::Layout(format!("no optimizer slot for {name}")))?;
            let (w2, s2) = self.step_tensor(w, g, slot, eta, t)?;
            out.push((name.clone(), w2));
            slots.push(Some(s2));
        }
        Ok((WeightSet::new(out)?, OptimizerState { step: t, slots }))
    }
}

pub(crate) fn check_inputs(op: &'static str, w: &Tensor, g: &Tensor, slot: &Slot) -> Result<()> {
    if w.shape() != g.shape() || slot.first.shape() != w.shape() || slot.second.as_ref().is_some_and(|s| s.shape() != w.shape()) {
        return Err(Error::shape(op, format!("weight {:?}, gradient {:?}, slot {:?}", w.shape(), g.shape(), slot.first.shape())));
    }
    for (what, t) in [("weight", w), ("gradient", g), ("slot", &slot.first)] {
        if !t.all_finite() {
            return Err(Error::NonFinite { op, what });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(momentum: f64, weight_decay: f64) -> LarsConfig {
        LarsConfig { epsilon: 0.001, weight_decay, momentum, base_lr: 1.0, warmup_epochs: 0.0, total_epochs: 1.0, schedule: ScheduleKind::Constant }
    }

    fn zero_slot(n: usize) -> Slot {
        Slot { first: Tensor::zeros(&[n]), second: None }
    }

    fn close(a: &[f32], b: &[f32]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-6 * y.abs().max(1.0))
    }

    #[test]
    fn schedule_points() {
        let c = LarsConfig { base_lr: 29.0, warmup_epochs: 18.0, total_epochs: 64.0, schedule: ScheduleKind::WarmupPoly2, ..cfg(0.9, 0.0) };
        assert_eq!(lr_schedule(0.0, &c), 0.0);
        assert_eq!(lr_schedule(18.0, &c), 29.0);
        assert!((lr_schedule(41.0, &c) - 7.25).abs() < 1e-12);
        assert_eq!(lr_schedule(64.0, &c), 0.0);
        let left = lr_schedule(18.0 - 1e-9, &c);
        let right = lr_schedule(18.0 + 1e-9, &c);
        assert!((left - 29.0).abs() < 1e-6 && (right - 29.0).abs() < 1e-6);
    }

    #[test]
    fn scaled_hand_example() {
        let w = Tensor::vector(vec![3.0, 4.0]);
        let g = Tensor::vector(vec![0.3, 0.4]);
        assert!((trust_ratio(&w, &g, 0.001, 0.0) - 0.01).abs() < 1e-9);
        let (w2, s) = lars_scaled_step(&w, &g, &zero_slot(2), &cfg(0.9, 0.0), 1.0).unwrap();
        assert!(close(s.first.data(), &[0.3, 0.4]));
        assert!(close(w2.data(), &[2.997, 3.996]));
    }

    #[test]
    fn unscaled_hand_example() {
        let w = Tensor::vector(vec![3.0, 4.0]);
        let g = Tensor::vector(vec![0.3, 0.4]);
        let (w2, s) = lars_unscaled_step(&w, &g, &zero_slot(2), &cfg(0.9, 0.0), 1.0).unwrap();
        assert!(close(s.first.data(), &[0.003, 0.004]));
        assert!(close(w2.data(), &[2.997, 3.996]));
    }

    #[test]
    fn zero_weights_stay_put() {
        let w = Tensor::zeros(&[3]);
        let g = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let (w2, s) = lars_scaled_step(&w, &g, &zero_slot(3), &cfg(0.9, 0.1), 1.0).unwrap();
        assert!(w2.bitwise_eq(&w));
        assert_eq!(s.first.data(), g.data());
    }

    #[test]
    fn variants_diverge_when_trust_ratio_changes() {
        let c = cfg(0.9, 0.0);
        let g = Tensor::vector(vec![0.3, 0.4]);
        let mut ws = (Tensor::vector(vec![3.0, 4.0]), zero_slot(2));
        let mut wu = ws.clone();
        for _ in 0..2 {
            ws = lars_scaled_step(&ws.0, &g, &ws.1, &c, 1.0).unwrap();
            wu = lars_unscaled_step(&wu.0, &g, &wu.1, &c, 1.0).unwrap();
        }
        // Step 1 equal; step 2 has λ2 ≠ λ1 and the momentum terms differ.
        let l1 = 0.01f64;
        let w1: [f64; 2] = [3.0 - 0.003, 4.0 - 0.004];
        let l2 = 0.001 * (w1[0] * w1[0] + w1[1] * w1[1]).sqrt() / 0.5;
        let scaled = [w1[0] - l2 * (0.9 * 0.3 + 0.3), w1[1] - l2 * (0.9 * 0.4 + 0.4)];
        let unscaled = [w1[0] - (0.9 * l1 * 0.3 + l2 * 0.3), w1[1] - (0.9 * l1 * 0.4 + l2 * 0.4)];
        for i in 0..2 {
            assert!((ws.0.data()[i] as f64 - scaled[i]).abs() < 1e-6);
            assert!((wu.0.data()[i] as f64 - unscaled[i]).abs() < 1e-6);
        }
        assert_ne!(ws.0.data(), wu.0.data());
    }

    #[test]
    fn trust_ratio_is_scale_free_without_decay() {
        let w = Tensor::vector(vec![1.5, -2.0, 0.25]);
        let g = Tensor::vector(vec![0.1, 0.3, -0.2]);
        let base = trust_ratio(&w, &g, 0.001, 0.0);
        for k in [0.5f32, 2.0, 8.0] {
            let r = trust_ratio(&w.map(|v| v * k), &g.map(|v| v * k), 0.001, 0.0);
            assert!((r - base).abs() <= 1e-12 * base);
        }
    }

    fn adam() -> Optimizer {
        Optimizer::Adam { config: AdamConfig { lr: 0.1, ..AdamConfig::default() } }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let opt = adam();
        let w = Tensor::vector(vec![1.0, -3.0]);
        let (w2, _) = opt.step_tensor(&w, &Tensor::zeros(&[2]), &opt.init_slot(&w), 0.1, 1).unwrap();
        assert!(w2.bitwise_eq(&w));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let opt = adam();
        let w = Tensor::vector(vec![1.0]);
        let g = Tensor::vector(vec![1.0]);
        let (w1, s1) = opt.step_tensor(&w, &g, &opt.init_slot(&w), 0.1, 1).unwrap();
        assert!((w1.data()[0] - 0.9).abs() < 1e-6);
        let (w2, _) = opt.step_tensor(&w1, &g, &s1, 0.1, 2).unwrap();
        assert!(w2.data()[0] < w1.data()[0]);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let w = Tensor::vector(vec![1.0]);
        let g = Tensor::vector(vec![f32::NAN]);
        let err = lars_scaled_step(&w, &g, &zero_slot(1), &cfg(0.9, 0.0), 1.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite { what: "gradient", .. }));
        assert!(adam().step_tensor(&g, &w, &adam().init_slot(&w), 0.1, 1).is_err());
    }

    #[test]
    fn presets_parse_and_validate() {
        for name in PRESET_NAMES {
            let opt = Optimizer::preset(name).unwrap();
            opt.validate().unwrap();
        }
        assert!(Optimizer::preset("sgd").is_none());
        let Some(Optimizer::Lars { config, variant }) = Optimizer::preset("unscaled-29.0-m0.929") else { panic!() };
        assert_eq!((variant, config.momentum, config.warmup_epochs, config.total_epochs), (LarsVariant::Unscaled, 0.929, 18.0, 64.0));
    }

    #[test]
    fn config_validation() {
        assert!(LarsConfig { momentum: 1.0, ..cfg(0.0, 0.0) }.validate().is_err());
        assert!(LarsConfig { epsilon: 0.0, ..cfg(0.0, 0.0) }.validate().is_err());
        assert!(LarsConfig { warmup_epochs: 2.0, ..cfg(0.0, 0.0) }.validate().is_err());
        assert!(AdamConfig { beta2: 1.0, ..AdamConfig::default() }.validate().is_err());
    }

    #[test]
    fn optimizer_json_roundtrip() {
        let opt = Optimizer::preset("scaled-31.2").unwrap();
        let json = serde_json::to_string(&opt).unwrap();
        assert!(json.contains("\"kind\":\"lars\""));
        assert_eq!(serde_json::from_str::<Optimizer>(&json).unwrap(), opt);
    }
}
