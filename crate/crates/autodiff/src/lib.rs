//! Reverse-mode differentiation for a fixed convolutional layer set.
//!
//! No general graph: the crate provides exactly the layers the mapping
//! networks use (1x1 convolutions, depthwise separable 3x3
//! convolutions, residual blocks, two-way softmax, height injection),
//! their hand-written backward passes, two masked losses, Adam, a
//! finite-difference checker, and a binary checkpoint format. All math
//! is generic over f32/f64; f64 backs the gradient checks.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod kernel;
pub mod layers;
pub mod loss;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use error::{Error, Result};
pub use gradcheck::grad_check;
pub use kernel::Scalar;
pub use layers::{BlockKind, BlockTrace, Conv1x1, ResidualBlock, SepConv3x3};
pub use loss::{dice_loss, masked_l1_loss};
pub use optim::{AdamConfig, AdamState};
pub use tensor::{he_uniform, Param, Tensor};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
