//! A small convolutional-network engine for classifying photovoltaic panel
//! images as normal/faulty or as normal/cracked/dusty/shadowed.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches the
//! filesystem, image codecs or the command line lives in the `pvcnn` crate.
//!
//! Layout is `N, C, H, W` row-major throughout. Storage is generic over
//! [`Real`] (`f32` for training, `f64` for gradient checking); all dot
//! products accumulate in `f64`.
//!
//! Convolution is implemented as cross-correlation (the kernel is not
//! flipped). Kernels are learned, so the two differ only in the orientation
//! of the learned weights.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod preprocess;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use kernels::{ConvGeometry, PoolIndex};
pub use model::{ArchId, LayerSpec, Mode, Model};
pub use scalar::Real;
pub use tensor::{Tensor, TensorError};
