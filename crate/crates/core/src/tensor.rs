use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("shape {shape:?} has a zero extent")]
    ZeroExtent { shape: Vec<usize> },
    #[error("{op}: expected rank {expected}, got shape {found:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        found: Vec<usize>,
    },
    #[error("channel mismatch: input has {input} channels, kernels expect {kernel}")]
    ChannelMismatch { input: usize, kernel: usize },
    #[error(
        "degenerate output extent on {axis} axis (input {input}, kernel {kernel}, padding {padding}, stride {stride})"
    )]
    DegenerateExtent {
        axis: &'static str,
        input: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
    },
    #[error("pooling window {window:?} larger than input {input:?}")]
    WindowTooLarge {
        window: (usize, usize),
        input: (usize, usize),
    },
    #[error("pool index was produced for input {expected_input:?} / output {expected_output:?}, got {input:?} / {output:?}")]
    StaleIndex {
        expected_input: Vec<usize>,
        expected_output: Vec<usize>,
        input: Vec<usize>,
        output: Vec<usize>,
    },
    #[error("zero stride")]
    ZeroStride,
}

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.contains(&0) {
        return Err(TensorError::ZeroExtent {
            shape: shape.to_vec(),
        });
    }
    Ok(shape.iter().product())
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panics if any extent is zero.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::ZERO)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = check_shape(shape).expect("tensor extents must be positive");
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len = check_shape(shape).expect("tensor extents must be positive");
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, TensorError> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                len: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub(crate) fn expect_rank(&self, op: &'static str, rank: usize) -> Result<(), TensorError> {
        if self.shape.len() != rank {
            return Err(TensorError::Rank {
                op,
                expected: rank,
                found: self.shape.clone(),
            });
        }
        Ok(())
    }

    pub(crate) fn dims4(&self, op: &'static str) -> Result<[usize; 4], TensorError> {
        self.expect_rank(op, 4)?;
        Ok([self.shape[0], self.shape[1], self.shape[2], self.shape[3]])
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self, TensorError> {
        let first = items.first().ok_or(TensorError::ZeroExtent { shape: vec![0] })?;
        let mut shape = Vec::with_capacity(first.rank() + 1);
        shape.push(items.len());
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(first.len() * items.len());
        for item in items {
            if item.shape() != first.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    left: first.shape.clone(),
                    right: item.shape.clone(),
                });
            }
            data.extend_from_slice(item.data());
        }
        Ok(Self { shape, data })
    }

    /// Copies out the `index`-th slice along the leading axis.
    pub fn slice_outer(&self, index: usize) -> Tensor<T> {
        let inner: usize = self.shape[1..].iter().product();
        let shape = if self.shape.len() == 1 {
            vec![1]
        } else {
            self.shape[1..].to_vec()
        };
        Tensor {
            shape,
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length_and_extents() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::<f32>::new(&[2, 3], vec![0.0; 5]),
            Err(TensorError::LengthMismatch { .. })
        ));
        assert!(matches!(
            Tensor::<f32>::new(&[2, 0], vec![]),
            Err(TensorError::ZeroExtent { .. })
        ));
    }

    #[test]
    fn stack_and_slice() {
        let a = Tensor::<f64>::new(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::new(&[2], vec![3.0, 4.0]).unwrap();
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.slice_outer(1).data(), &[3.0, 4.0]);
    }
}
