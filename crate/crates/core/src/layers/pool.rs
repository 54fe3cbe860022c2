use alloc::vec;
use alloc::vec::Vec;

use super::LayerError;
use crate::kernels::{maxpool2d, maxpool2d_backward, PoolIndex};
use crate::scalar::Real;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool2d {
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub(crate) cache: Option<PoolIndex>,
}

impl MaxPool2d {
    pub fn new(window: (usize, usize), stride: (usize, usize)) -> Self {
        Self {
            window,
            stride,
            cache: None,
        }
    }

    pub(crate) fn infer<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        Ok(maxpool2d(x, self.window, self.stride)?.0)
    }

    pub(crate) fn forward_train<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let (y, index) = maxpool2d(x, self.window, self.stride)?;
        self.cache = Some(index);
        Ok(y)
    }

    pub(crate) fn backward<T: Real>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let index = self
            .cache
            .take()
            .ok_or(LayerError::MissingCache { layer: "pool" })?;
        let shape = index.input_shape().to_vec();
        Ok(maxpool2d_backward(&index, grad, &shape)?)
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, LayerError> {
        if input.len() != 3 {
            return Err(TensorError::Rank {
                op: "pool input",
                expected: 3,
                found: input.to_vec(),
            }
            .into());
        }
        let (h, w) = (input[1], input[2]);
        if self.window.0 > h || self.window.1 > w {
            return Err(TensorError::WindowTooLarge {
                window: self.window,
                input: (h, w),
            }
            .into());
        }
        Ok(vec![
            input[0],
            (h - self.window.0) / self.stride.0 + 1,
            (w - self.window.1) / self.stride.1 + 1,
        ])
    }
}

/// `[N, C, H, W] -> [N, C*H*W]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Flatten {
    pub(crate) input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub(crate) fn infer<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let n = x.shape()[0];
        let rest = x.len() / n;
        Ok(x.clone().reshape(&[n, rest])?)
    }

    pub(crate) fn forward_train<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        self.input_shape = Some(x.shape().to_vec());
        Self::infer(x)
    }

    pub(crate) fn backward<T: Real>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let shape = self
            .input_shape
            .take()
            .ok_or(LayerError::MissingCache { layer: "flatten" })?;
        Ok(grad.clone().reshape(&shape)?)
    }
}
