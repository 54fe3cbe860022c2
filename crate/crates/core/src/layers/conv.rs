use alloc::vec;
use alloc::vec::Vec;

use super::{LayerError, ParamSlot};
use crate::kernels::{conv2d, conv2d_backward, ConvGeometry};
use crate::scalar::Real;
use crate::tensor::{Tensor, TensorError};

/// Convolution layer. `bias` is `None` when the layer feeds a batch norm,
/// which would cancel any per-channel shift anyway.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T: Real = f32> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub geometry: ConvGeometry,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Option<Tensor<T>>,
    pub(crate) cache: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Tensor<T>>, geometry: ConvGeometry) -> Self {
        let grad_weight = Tensor::zeros(weight.shape());
        let grad_bias = bias.as_ref().map(|b| Tensor::zeros(b.shape()));
        Self {
            weight,
            bias,
            geometry,
            grad_weight,
            grad_bias,
            cache: None,
        }
    }

    pub fn filters(&self) -> usize {
        self.weight.shape()[0]
    }

    fn effective_bias(&self) -> Tensor<T> {
        self.bias
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&[self.filters()]))
    }

    pub(crate) fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        Ok(conv2d(x, &self.weight, &self.effective_bias(), &self.geometry)?)
    }

    pub(crate) fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub(crate) fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let input = self
            .cache
            .take()
            .ok_or(LayerError::MissingCache { layer: "conv" })?;
        let grads = conv2d_backward(&input, &self.weight, &self.geometry, grad)?;
        self.grad_weight = grads.kernels;
        if let Some(gb) = self.grad_bias.as_mut() {
            *gb = grads.bias;
        }
        Ok(grads.input)
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, LayerError> {
        let channels = self.weight.shape()[1];
        if input.len() != 3 || input[0] != channels {
            return Err(TensorError::ShapeMismatch {
                op: "conv layer input",
                left: input.to_vec(),
                right: vec![channels],
            }
            .into());
        }
        let (h, w) = self.geometry.output_extent(input[1], input[2])?;
        Ok(vec![self.filters(), h, w])
    }

    pub(crate) fn param_slots(&mut self) -> Vec<ParamSlot<'_, T>> {
        let mut slots = vec![ParamSlot {
            name: "weight",
            value: &mut self.weight,
            grad: &mut self.grad_weight,
        }];
        if let (Some(value), Some(grad)) = (self.bias.as_mut(), self.grad_bias.as_mut()) {
            slots.push(ParamSlot {
                name: "bias",
                value,
                grad,
            });
        }
        slots
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut out = vec![("weight", &self.weight)];
        if let Some(b) = &self.bias {
            out.push(("bias", b));
        }
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        let mut out = vec![("weight", &mut self.weight)];
        if let Some(b) = self.bias.as_mut() {
            out.push(("bias", b));
        }
        out
    }

    pub(crate) fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }

    pub(crate) fn cast<U: Real>(&self) -> Conv2d<U> {
        Conv2d::new(
            self.weight.cast(),
            self.bias.as_ref().map(|b| b.cast()),
            self.geometry,
        )
    }
}
