use alloc::vec::Vec;

use super::LayerError;
use crate::scalar::Real;
use crate::tensor::{Tensor, TensorError};

/// Probabilities are clamped to this before taking the log in
/// [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// Passes `grad` where the forward input was strictly positive. The
/// subgradient at exactly zero is taken as 0.
pub fn relu_backward<T: Real>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if x.shape() != grad.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "relu_backward",
            left: x.shape().to_vec(),
            right: grad.shape().to_vec(),
        });
    }
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| if v > T::ZERO { g } else { T::ZERO })
        .collect();
    Tensor::new(x.shape(), data)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Relu {
    pub(crate) mask: Option<(Vec<usize>, Vec<bool>)>,
}

impl Relu {
    pub(crate) fn forward_train<T: Real>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.mask = Some((
            x.shape().to_vec(),
            x.data().iter().map(|&v| v > T::ZERO).collect(),
        ));
        relu(x)
    }

    pub(crate) fn backward<T: Real>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let (shape, mask) = self
            .mask
            .take()
            .ok_or(LayerError::MissingCache { layer: "relu" })?;
        if grad.shape() != shape.as_slice() {
            return Err(TensorError::ShapeMismatch {
                op: "relu backward",
                left: grad.shape().to_vec(),
                right: shape,
            }
            .into());
        }
        let data = grad
            .data()
            .iter()
            .zip(&mask)
            .map(|(&g, &on)| if on { g } else { T::ZERO })
            .collect();
        Ok(Tensor::new(&shape, data)?)
    }
}

/// Row-wise softmax of `[N, K]` logits, computed in `f64` after
/// subtracting each row's maximum.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    logits.expect_rank("softmax", 2)?;
    let k = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    let mut exps = alloc::vec![0.0f64; k];
    for row in logits.data().chunks(k) {
        let max = row
            .iter()
            .map(|v| v.to_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (e, v) in exps.iter_mut().zip(row) {
            *e = libm::exp(v.to_f64() - max);
            total += *e;
        }
        out.extend(exps.iter().map(|&e| T::from_f64(e / total)));
    }
    Tensor::new(logits.shape(), out)
}

fn check_labels<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<usize, LayerError> {
    probs.expect_rank("cross_entropy", 2)?;
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    if labels.len() != n {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy labels",
            left: probs.shape().to_vec(),
            right: alloc::vec![labels.len()],
        }
        .into());
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(LayerError::LabelOutOfRange { label, classes: k });
    }
    Ok(k)
}

/// Mean over the batch of `-ln(max(p[i, label_i], PROB_FLOOR))`.
pub fn cross_entropy<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<f64, LayerError> {
    let k = check_labels(probs, labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -libm::log(probs.data()[i * k + l].to_f64().max(PROB_FLOOR)))
        .sum();
    Ok(total / labels.len() as f64)
}

/// Gradient of `cross_entropy(softmax(z))` with respect to the logits `z`:
/// `(probs - onehot) / N`.
pub fn softmax_cross_entropy_grad<T: Real>(
    probs: &Tensor<T>,
    labels: &[usize],
) -> Result<Tensor<T>, LayerError> {
    let k = check_labels(probs, labels)?;
    let n = labels.len() as f64;
    let mut grad: Vec<T> = probs
        .data()
        .iter()
        .map(|p| T::from_f64(p.to_f64() / n))
        .collect();
    for (i, &l) in labels.iter().enumerate() {
        let g = &mut grad[i * k + l];
        *g = T::from_f64((probs.data()[i * k + l].to_f64() - 1.0) / n);
    }
    Ok(Tensor::new(probs.shape(), grad)?)
}
