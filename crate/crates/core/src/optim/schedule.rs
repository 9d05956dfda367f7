use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Linear warmup to the base rate, then quadratic decay to zero.
    #[default]
    WarmupPoly2,
    Constant,
}

/// Learning rate at (fractional) `epoch`. Epochs outside `[0, total]` are clamped.
pub fn scheduled_rate(epoch: f64, base_lr: f64, warmup_epochs: f64, total_epochs: f64, kind: ScheduleKind) -> f64 {
    match kind {
        ScheduleKind::Constant => base_lr,
        ScheduleKind::WarmupPoly2 => {
            let t = epoch.clamp(0.0, total_epochs);
            if t < warmup_epochs {
                base_lr * t / warmup_epochs
            } else if total_epochs > warmup_epochs {
                let r = (total_epochs - t) / (total_epochs - warmup_epochs);
                base_lr * r * r
            } else {
                base_lr
            }
        }
    }
}
