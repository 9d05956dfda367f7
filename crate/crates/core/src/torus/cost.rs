//! Analytic time model for 2-D gradient summation.
//!
//! For `B` gradient bytes on an `R × C` torus:
//!
//! ```text
//! T_gather  = B / mem_bandwidth                 (gather from non-contiguous tensors)
//! T_scatter = B / mem_bandwidth                 (scatter results back)
//! T_net     = 2 (C-1) (hop_latency + B / (C link_bandwidth))       row reduce-scatter + all-gather
//!           + 2 (R-1) (hop_latency + B / (R C link_bandwidth))     column all-reduce of one shard
//!
//! unpipelined = T_gather + T_net + T_scatter
//! pipelined   = max + (T_gather + T_net + T_scatter - max) / chunks + chunks * chunk_overhead
//!               where max = max(T_gather, T_net, T_scatter)
//! ```
//!
//! Pipelining splits the buffer into `chunks` pieces so the memory gather of
//! one chunk overlaps the network reduction of the previous one; the slowest
//! stage dominates and each chunk pays a fixed setup cost.

use serde::{Deserialize, Serialize};

use super::{GradientSet, TorusTopology};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkCostParams {
    /// Bytes per second on one torus link.
    pub link_bandwidth: f64,
    /// Seconds per ring step.
    pub hop_latency: f64,
    /// Bytes per second for gathers/scatters between HBM and the on-chip staging buffer.
    pub mem_bandwidth: f64,
    /// Fixed seconds per pipeline chunk.
    pub chunk_overhead: f64,
}

impl Default for LinkCostParams {
    /// 100 GB/s links and 100 GB/s gather bandwidth, 1 µs per hop and per chunk.
    /// With these, 64 MiB on a 4×4 torus sums about 1.8x faster with 8 chunks.
    fn default() -> Self {
        Self { link_bandwidth: 100e9, hop_latency: 1e-6, mem_bandwidth: 100e9, chunk_overhead: 1e-6 }
    }
}

impl LinkCostParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.link_bandwidth, self.hop_latency, self.mem_bandwidth, self.chunk_overhead];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::invalid("LinkCostParams", format!("all parameters must be finite and positive: {self:?}")))
        }
    }
}

/// Stage times of one unpipelined 2-D summation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageTimes {
    pub gather: f64,
    pub network: f64,
    pub scatter: f64,
}

impl StageTimes {
    pub fn for_bytes(bytes: u64, topo: &TorusTopology, cost: &LinkCostParams) -> Self {
        let b = bytes as f64;
        let (r, c) = (topo.rows() as f64, topo.cols() as f64);
        let row = 2.0 * (c - 1.0) * (cost.hop_latency + b / (c * cost.link_bandwidth));
        let col = 2.0 * (r - 1.0) * (cost.hop_latency + b / (r * c * cost.link_bandwidth));
        let mem = b / cost.mem_bandwidth;
        Self { gather: mem, network: row + col, scatter: mem }
    }

    pub fn total(&self) -> f64 {
        self.gather + self.network + self.scatter
    }

    pub fn bottleneck(&self) -> f64 {
        self.gather.max(self.network).max(self.scatter)
    }

    /// Time with the three stages overlapped over `chunks` pieces.
    ///
    /// # Panics
    /// If `chunks == 0`.
    pub fn pipelined(&self, chunks: usize, chunk_overhead: f64) -> f64 {
        assert!(chunks >= 1, "pipelining needs at least one chunk");
        let max = self.bottleneck();
        max + (self.total() - max) / chunks as f64 + chunks as f64 * chunk_overhead
    }
}

/// Estimated seconds to sum `grads` across the torus.
///
/// # Panics
/// If `chunks == 0`.
pub fn estimate_summation_time(grads: &GradientSet, topo: &TorusTopology, cost: &LinkCostParams, chunks: usize, pipelined: bool) -> f64 {
    estimate_for_bytes(grads.total_bytes(), topo, cost, chunks, pipelined)
}

pub fn estimate_for_bytes(bytes: u64, topo: &TorusTopology, cost: &LinkCostParams, chunks: usize, pipelined: bool) -> f64 {
    assert!(chunks >= 1, "pipelining needs at least one chunk");
    let stages = StageTimes::for_bytes(bytes, topo, cost);
    if pipelined {
        stages.pipelined(chunks, cost.chunk_overhead)
    } else {
        stages.total()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn one_chunk_costs_one_overhead_more() {
        let topo = TorusTopology::new(4, 4).unwrap();
        let cost = LinkCostParams::default();
        let g = GradientSet::new(vec![("w".into(), Tensor::zeros(&[1 << 16]))]).unwrap();
        let un = estimate_summation_time(&g, &topo, &cost, 1, false);
        let pi = estimate_summation_time(&g, &topo, &cost, 1, true);
        assert!((pi - (un + cost.chunk_overhead)).abs() <= 1e-12 * un.max(1.0));
    }

    #[test]
    fn three_equal_stages() {
        let s = StageTimes { gather: 0.010, network: 0.010, scatter: 0.010 };
        assert!((s.total() - 0.030).abs() < 1e-15);
        let p = s.pipelined(10, 0.0);
        assert!((p - 0.012).abs() < 1e-15);
        assert!((s.total() / p - 2.5).abs() < 1e-12);
    }

    #[test]
    fn default_params_reach_the_speedup_regime() {
        let topo = TorusTopology::new(4, 4).unwrap();
        let cost = LinkCostParams::default();
        cost.validate().unwrap();
        let bytes = 64 << 20;
        let speedup = estimate_for_bytes(bytes, &topo, &cost, 1, false) / estimate_for_bytes(bytes, &topo, &cost, 8, true);
        assert!(speedup >= 1.5, "{speedup}");
    }

    #[test]
    fn single_core_has_no_network_time() {
        let s = StageTimes::for_bytes(1000, &TorusTopology::single(), &LinkCostParams::default());
        assert_eq!(s.network, 0.0);
    }

    #[test]
    fn rejects_nonpositive_params() {
        let bad = LinkCostParams { hop_latency: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
