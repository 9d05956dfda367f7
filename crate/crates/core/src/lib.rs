//! Desk-scale implementations of the techniques used to scale training on
//! large accelerator pods.
//!
//! Every distributed routine here runs as a deterministic, value-level
//! simulation over per-core state and is checked against a monolithic
//! single-core computation:
//!
//! - [`tensor`]: dense NHWC tensors, bf16 emulation, conv/matmul kernels.
//! - [`torus`]: 2-D torus topology, ring and 2-D all-reduce, summation cost model.
//! - [`spatial`]: spatially partitioned convolution with halo exchange and
//!   distributed batch normalization.
//! - [`optim`]: LARS (scaled and unscaled momentum), Adam, learning-rate
//!   schedule, and weight-update sharding.
//! - [`train`]: the nested train-and-eval loop with padded, masked evaluation.
//! - [`input`]: windowed bucketization and round-robin input distribution.
//! - [`rnn`]: LSTM with hoisted input projection and deferred weight gradients.

pub mod error;
pub mod input;
pub mod optim;
pub mod rnn;
pub mod spatial;
pub mod tensor;
pub mod torus;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DType, Tensor};
