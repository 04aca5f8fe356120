//! Hybrid precoding for mmWave multiuser massive MIMO downlinks with a
//! complex-valued two-layer BP network.
//!
//! The crate is a small simulation testbench:
//!
//! - [`numerics`]: dense complex matrices, seeded random streams and the
//!   Gram solve used by zero-forcing.
//! - [`channel`]: geometric multipath channel with a uniform planar array.
//! - [`precoders`]: full-digital zero-forcing and phased-ZF baselines.
//! - [`cxnet`]: the split-complex network, its analytic gradients and the
//!   momentum update.
//! - [`trainer`]: dataset generation from the ZF target and the training loop.
//! - [`eval`]: SINR, spectral efficiency and Monte-Carlo QPSK bit error rate.

pub mod channel;
pub mod cxnet;
mod error;
pub mod eval;
pub mod numerics;
pub mod precoders;
pub mod trainer;

pub use channel::{ChannelConfig, ChannelMatrix, PathComponent};
pub use cxnet::{ForwardTrace, Gradients, NetConfig, NetworkWeights, Velocity};
pub use error::{Error, Result};
pub use eval::{BerCounts, EvalResult};
pub use numerics::{CMat, SeededRng, Stream, C64};
pub use precoders::{HybridPrecoder, Precoder};
pub use trainer::{Dataset, StopReason, TrainConfig, TrainHistory};
