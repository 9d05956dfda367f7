//! Deterministic simulation of a 2-D torus of cores: collectives that move
//! real values plus an analytic model of how long they take.

mod collectives;
mod cost;
mod gradients;
mod topology;

pub use collectives::{all_reduce_2d, ring_all_gather, ring_all_reduce, ring_reduce_scatter, shard_ranges};
pub use cost::{estimate_for_bytes, estimate_summation_time, LinkCostParams, StageTimes};
pub use gradients::{GradientSet, WeightSet};
pub use topology::{CoreId, Direction, TorusTopology, MAX_CORES};
