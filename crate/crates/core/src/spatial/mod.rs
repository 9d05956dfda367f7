//! Spatial partitioning of convolutions over a core grid, and batch
//! normalisation across core groups.

mod batch_norm;
mod halo;
mod plan;

pub use batch_norm::{
    batch_norm_apply, batch_norm_backward, batch_norm_train, distributed_batch_norm, BnBackward, BnCache, BnForward, BnPartials, BN_EPSILON,
};
pub use halo::{assemble_output, crop, halo_exchange, scatter_input, sharded_conv2d};
pub use plan::{plan_partition, AxisMode, CorePlan, HaloSpec, PartitionPlan, ShardSpec};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoadImbalanceReport {
    /// Relative work per core id; sums to 1.
    pub per_core: Vec<f64>,
    pub max_over_mean: f64,
}

/// Work estimate when a fraction of the layer's ops is not partitioned and
/// runs on core 0 only. The partitioned part is split in proportion to each
/// core's share of computed output elements.
pub fn load_imbalance_report(plan: &PartitionPlan, unsharded_op_fraction: f64) -> Result<LoadImbalanceReport> {
    if !(0.0..=1.0).contains(&unsharded_op_fraction) {
        return Err(Error::invalid("load_imbalance_report", format!("fraction {unsharded_op_fraction} outside [0, 1]")));
    }
    // Replicated cores compute their whole tile, so shares are taken over
    // the elements actually computed rather than the output size.
    let raw: Vec<f64> = plan.cores.iter().map(|c| (c.batch.len() * c.out_rows.len() * c.out_cols.len()) as f64).collect();
    let total: f64 = raw.iter().sum();
    let even = 1.0 / raw.len() as f64;
    let mut per_core: Vec<f64> = raw.iter().map(|&r| (1.0 - unsharded_op_fraction) * if total == 0.0 { even } else { r / total }).collect();
    per_core[0] += unsharded_op_fraction;
    let mean = per_core.iter().sum::<f64>() / per_core.len() as f64;
    let max = per_core.iter().cloned().fold(f64::MIN, f64::max);
    Ok(LoadImbalanceReport { per_core, max_over_mean: max / mean })
}
