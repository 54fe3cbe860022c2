use alloc::vec;
use alloc::vec::Vec;

use super::{LayerError, ParamSlot};
use crate::kernels::{matmul, matmul_a_bt, matmul_at_b};
use crate::scalar::Real;
use crate::tensor::{Tensor, TensorError};

/// Fully connected layer, `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: Real = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    pub(crate) cache: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        Self {
            grad_weight: Tensor::zeros(weight.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weight,
            bias,
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn units(&self) -> usize {
        self.weight.shape()[1]
    }

    pub(crate) fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let mut y = matmul(x, &self.weight)?;
        let units = self.units();
        for row in y.data_mut().chunks_mut(units) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v = T::from_f64(v.to_f64() + b.to_f64());
            }
        }
        Ok(y)
    }

    pub(crate) fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub(crate) fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let x = self
            .cache
            .take()
            .ok_or(LayerError::MissingCache { layer: "fc" })?;
        self.grad_weight = matmul_at_b(&x, grad)?;
        let units = self.units();
        let mut gb = vec![0.0f64; units];
        for row in grad.data().chunks(units) {
            for (acc, g) in gb.iter_mut().zip(row) {
                *acc += g.to_f64();
            }
        }
        self.grad_bias = Tensor::new(&[units], gb.into_iter().map(T::from_f64).collect())?;
        Ok(matmul_a_bt(grad, &self.weight)?)
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, LayerError> {
        if input != [self.inputs()] {
            return Err(TensorError::ShapeMismatch {
                op: "dense input",
                left: input.to_vec(),
                right: vec![self.inputs()],
            }
            .into());
        }
        Ok(vec![self.units()])
    }

    pub(crate) fn param_slots(&mut self) -> Vec<ParamSlot<'_, T>> {
        vec![
            ParamSlot {
                name: "weight",
                value: &mut self.weight,
                grad: &mut self.grad_weight,
            },
            ParamSlot {
                name: "bias",
                value: &mut self.bias,
                grad: &mut self.grad_bias,
            },
        ]
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }

    pub(crate) fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub(crate) fn cast<U: Real>(&self) -> Dense<U> {
        Dense::new(self.weight.cast(), self.bias.cast())
    }
}
