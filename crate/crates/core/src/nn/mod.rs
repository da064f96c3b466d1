//! Minimal neural-network engine used by the denoisers.
//!
//! Hand-written forward/backward passes over flat buffers, generic over the
//! element type so training runs in `f32` while gradient checks run in `f64`.
//! No graph machinery: each layer's `forward` returns the context its
//! `backward` needs, and gradients accumulate into the layer's own buffers in
//! a fixed traversal order, which keeps runs bit-deterministic.

pub mod layers;
pub mod optim;
pub mod tensor;

pub use layers::{Conv2d, CrossAttention, GroupNorm, Linear};
pub use optim::{Adafactor, Adam, Ema, Optimizer};
pub use tensor::{Real, Tensor};
