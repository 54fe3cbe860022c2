//! Stateful layers with hand-derived backward passes.
//!
//! A layer caches what its backward pass needs only when it runs in
//! [`Mode::Train`]. The cache is consumed by the next `backward` call, so a
//! backward pass without a fresh training forward is an error.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod pool;

use alloc::vec::Vec;

use thiserror::Error;

use crate::scalar::Real;
use crate::tensor::{Tensor, TensorError};

pub use activation::{
    cross_entropy, relu, relu_backward, softmax, softmax_cross_entropy_grad, Relu, PROB_FLOOR,
};
pub use batchnorm::{BatchNorm2d, BN_EPSILON, BN_MOMENTUM};
pub use conv::Conv2d;
pub use dense::Dense;
pub use pool::{Flatten, MaxPool2d};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Inference,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{layer}: backward called without a preceding training-mode forward")]
    MissingCache { layer: &'static str },
    #[error("batch norm needs at least 2 values per channel in train mode, got {count}")]
    BatchStatistics { count: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

/// One trainable tensor and its gradient.
pub struct ParamSlot<'a, T> {
    pub name: &'static str,
    pub value: &'a mut Tensor<T>,
    pub grad: &'a mut Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T: Real = f32> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    Relu(Relu),
    MaxPool(MaxPool2d),
    Flatten(Flatten),
    Dense(Dense<T>),
}

impl<T: Real> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "bn",
            Layer::Relu(_) => "relu",
            Layer::MaxPool(_) => "pool",
            Layer::Flatten(_) => "flatten",
            Layer::Dense(_) => "fc",
        }
    }

    /// Forward pass. Train mode caches activations for [`Layer::backward`]
    /// and updates batch-norm running statistics.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, LayerError> {
        if mode == Mode::Inference {
            self.clear_cache();
            return self.infer(x);
        }
        match self {
            Layer::Conv(l) => l.forward_train(x),
            Layer::BatchNorm(l) => l.forward_train(x),
            Layer::Relu(l) => Ok(l.forward_train(x)),
            Layer::MaxPool(l) => l.forward_train(x),
            Layer::Flatten(l) => l.forward_train(x),
            Layer::Dense(l) => l.forward_train(x),
        }
    }

    /// Inference-mode forward pass; touches no state.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        match self {
            Layer::Conv(l) => l.infer(x),
            Layer::BatchNorm(l) => l.infer(x),
            Layer::Relu(_) => Ok(relu(x)),
            Layer::MaxPool(l) => l.infer(x),
            Layer::Flatten(_) => Flatten::infer(x),
            Layer::Dense(l) => l.infer(x),
        }
    }

    /// Stores parameter gradients in the layer and returns the gradient with
    /// respect to the layer input.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        match self {
            Layer::Conv(l) => l.backward(grad),
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::Relu(l) => l.backward(grad),
            Layer::MaxPool(l) => l.backward(grad),
            Layer::Flatten(l) => l.backward(grad),
            Layer::Dense(l) => l.backward(grad),
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv(l) => l.cache = None,
            Layer::BatchNorm(l) => l.cache = None,
            Layer::Relu(l) => l.mask = None,
            Layer::MaxPool(l) => l.cache = None,
            Layer::Flatten(l) => l.input_shape = None,
            Layer::Dense(l) => l.cache = None,
        }
    }

    /// Output shape for a single sample (no batch axis).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, LayerError> {
        match self {
            Layer::Conv(l) => l.output_shape(input),
            Layer::BatchNorm(l) => l.output_shape(input),
            Layer::Relu(_) => Ok(input.to_vec()),
            Layer::MaxPool(l) => l.output_shape(input),
            Layer::Flatten(_) => Ok(alloc::vec![input.iter().product()]),
            Layer::Dense(l) => l.output_shape(input),
        }
    }

    pub fn param_slots(&mut self) -> Vec<ParamSlot<'_, T>> {
        match self {
            Layer::Conv(l) => l.param_slots(),
            Layer::BatchNorm(l) => l.param_slots(),
            Layer::Dense(l) => l.param_slots(),
            _ => Vec::new(),
        }
    }

    /// Parameters followed by buffers, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::Conv(l) => l.tensors(),
            Layer::BatchNorm(l) => l.tensors(),
            Layer::Dense(l) => l.tensors(),
            _ => Vec::new(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            Layer::Conv(l) => l.tensors_mut(),
            Layer::BatchNorm(l) => l.tensors_mut(),
            Layer::Dense(l) => l.tensors_mut(),
            _ => Vec::new(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Conv(l) => l.parameter_count(),
            Layer::BatchNorm(l) => l.parameter_count(),
            Layer::Dense(l) => l.parameter_count(),
            _ => 0,
        }
    }

    pub fn cast<U: Real>(&self) -> Layer<U> {
        match self {
            Layer::Conv(l) => Layer::Conv(l.cast()),
            Layer::BatchNorm(l) => Layer::BatchNorm(l.cast()),
            Layer::Relu(_) => Layer::Relu(Relu::default()),
            Layer::MaxPool(l) => Layer::MaxPool(MaxPool2d::new(l.window, l.stride)),
            Layer::Flatten(_) => Layer::Flatten(Flatten::default()),
            Layer::Dense(l) => Layer::Dense(l.cast()),
        }
    }
}
