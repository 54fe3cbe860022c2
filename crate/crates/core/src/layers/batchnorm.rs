use alloc::vec;
use alloc::vec::Vec;

use super::{LayerError, ParamSlot};
use crate::scalar::Real;
use crate::tensor::{Tensor, TensorError};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the old running statistic: `running = m * running + (1 - m) * batch`.
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel batch normalization over `[N, C, H, W]`.
///
/// Train mode normalizes with the biased batch variance and folds the
/// unbiased variance into `running_var`. Inference mode uses the running
/// statistics only.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T: Real = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub grad_gamma: Tensor<T>,
    pub grad_beta: Tensor<T>,
    pub momentum: f64,
    pub epsilon: f64,
    pub(crate) cache: Option<BnCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BnCache {
    shape: [usize; 4],
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::ONE),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::ONE),
            grad_gamma: Tensor::zeros(&[channels]),
            grad_beta: Tensor::zeros(&[channels]),
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<[usize; 4], LayerError> {
        let dims = x.dims4("batchnorm")?;
        if dims[1] != self.channels() {
            return Err(TensorError::ChannelMismatch {
                input: dims[1],
                kernel: self.channels(),
            }
            .into());
        }
        Ok(dims)
    }

    pub(crate) fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let [n, c, h, w] = self.check_input(x)?;
        let plane = h * w;
        let mut out = Vec::with_capacity(x.len());
        let data = x.data();
        for s in 0..n {
            for ch in 0..c {
                let mean = self.running_mean.data()[ch].to_f64();
                let inv_std =
                    1.0 / libm::sqrt(self.running_var.data()[ch].to_f64() + self.epsilon);
                let g = self.gamma.data()[ch].to_f64();
                let b = self.beta.data()[ch].to_f64();
                let base = (s * c + ch) * plane;
                out.extend(
                    data[base..base + plane]
                        .iter()
                        .map(|v| T::from_f64(g * (v.to_f64() - mean) * inv_std + b)),
                );
            }
        }
        Ok(Tensor::new(x.shape(), out)?)
    }

    pub(crate) fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let [n, c, h, w] = self.check_input(x)?;
        let plane = h * w;
        let count = n * plane;
        if count < 2 {
            return Err(LayerError::BatchStatistics { count });
        }
        let data = x.data();
        let mut x_hat = vec![0.0f64; x.len()];
        let mut inv_stds = Vec::with_capacity(c);
        let mut out = vec![T::ZERO; x.len()];
        for ch in 0..c {
            let values = || (0..n).flat_map(move |s| (s * c + ch) * plane..(s * c + ch + 1) * plane);
            let mean = values().map(|i| data[i].to_f64()).sum::<f64>() / count as f64;
            let sq = values()
                .map(|i| {
                    let d = data[i].to_f64() - mean;
                    d * d
                })
                .sum::<f64>();
            let var = sq / count as f64;
            let inv_std = 1.0 / libm::sqrt(var + self.epsilon);
            let g = self.gamma.data()[ch].to_f64();
            let b = self.beta.data()[ch].to_f64();
            for i in values() {
                let xh = (data[i].to_f64() - mean) * inv_std;
                x_hat[i] = xh;
                out[i] = T::from_f64(g * xh + b);
            }
            inv_stds.push(inv_std);

            let m = self.momentum;
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = T::from_f64(m * rm.to_f64() + (1.0 - m) * mean);
            let unbiased = sq / (count - 1) as f64;
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = T::from_f64(m * rv.to_f64() + (1.0 - m) * unbiased);
        }
        self.cache = Some(BnCache {
            shape: [n, c, h, w],
            x_hat,
            inv_std: inv_stds,
        });
        Ok(Tensor::new(x.shape(), out)?)
    }

    pub(crate) fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        let cache = self
            .cache
            .take()
            .ok_or(LayerError::MissingCache { layer: "bn" })?;
        let [n, c, h, w] = cache.shape;
        if grad.shape() != cache.shape {
            return Err(TensorError::ShapeMismatch {
                op: "batchnorm backward",
                left: grad.shape().to_vec(),
                right: cache.shape.to_vec(),
            }
            .into());
        }
        let plane = h * w;
        let count = (n * plane) as f64;
        let g = grad.data();
        let mut dx = vec![T::ZERO; grad.len()];
        let mut dgamma = Vec::with_capacity(c);
        let mut dbeta = Vec::with_capacity(c);
        for ch in 0..c {
            let values = || (0..n).flat_map(move |s| (s * c + ch) * plane..(s * c + ch + 1) * plane);
            let mut sum_g = 0.0;
            let mut sum_g_xhat = 0.0;
            for i in values() {
                let gv = g[i].to_f64();
                sum_g += gv;
                sum_g_xhat += gv * cache.x_hat[i];
            }
            dgamma.push(T::from_f64(sum_g_xhat));
            dbeta.push(T::from_f64(sum_g));
            let gamma = self.gamma.data()[ch].to_f64();
            let scale = gamma * cache.inv_std[ch] / count;
            for i in values() {
                let v = count * g[i].to_f64() - sum_g - cache.x_hat[i] * sum_g_xhat;
                dx[i] = T::from_f64(scale * v);
            }
        }
        self.grad_gamma = Tensor::new(&[c], dgamma)?;
        self.grad_beta = Tensor::new(&[c], dbeta)?;
        Ok(Tensor::new(&cache.shape, dx)?)
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, LayerError> {
        if input.len() != 3 || input[0] != self.channels() {
            return Err(TensorError::ShapeMismatch {
                op: "batchnorm input",
                left: input.to_vec(),
                right: vec![self.channels()],
            }
            .into());
        }
        Ok(input.to_vec())
    }

    pub(crate) fn param_slots(&mut self) -> Vec<ParamSlot<'_, T>> {
        vec![
            ParamSlot {
                name: "gamma",
                value: &mut self.gamma,
                grad: &mut self.grad_gamma,
            },
            ParamSlot {
                name: "beta",
                value: &mut self.beta,
                grad: &mut self.grad_beta,
            },
        ]
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![
            ("gamma", &mut self.gamma),
            ("beta", &mut self.beta),
            ("running_mean", &mut self.running_mean),
            ("running_var", &mut self.running_var),
        ]
    }

    pub(crate) fn parameter_count(&self) -> usize {
        2 * self.channels()
    }

    pub(crate) fn cast<U: Real>(&self) -> BatchNorm2d<U> {
        BatchNorm2d {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            grad_gamma: self.grad_gamma.cast(),
            grad_beta: self.grad_beta.cast(),
            momentum: self.momentum,
            epsilon: self.epsilon,
            cache: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel_values(y: &Tensor<f64>, ch: usize) -> Vec<f64> {
        let [n, c, h, w] = y.dims4("test").unwrap();
        (0..n)
            .flat_map(|s| y.data()[(s * c + ch) * h * w..(s * c + ch + 1) * h * w].to_vec())
            .collect()
    }

    #[test]
    fn train_mode_standardizes_channels() {
        let x = Tensor::<f64>::from_fn(&[3, 2, 2, 3], |i| libm::sin(i as f64 * 1.7) * 4.0 + 2.0);
        let mut bn = BatchNorm2d::<f64>::new(2);
        let y = bn.forward_train(&x).unwrap();
        for ch in 0..2 {
            let v = channel_values(&y, ch);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / v.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4, "{var}");
        }
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let x = Tensor::<f64>::full(&[2, 1, 2, 2], 3.25);
        let mut bn = BatchNorm2d::<f64>::new(1);
        let y = bn.forward_train(&x).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::<f64>::new(&[2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        let mut bn = BatchNorm2d::<f64>::new(1);
        bn.forward_train(&x).unwrap();
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-12);
        // unbiased variance of {1, 3} is 2
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
        assert!(bn.running_var.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn undefined_batch_statistic_is_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 1, 1, 1]);
        let mut bn = BatchNorm2d::<f64>::new(1);
        assert!(matches!(
            bn.forward_train(&x),
            Err(LayerError::BatchStatistics { count: 1 })
        ));
    }

    #[test]
    fn inference_is_repeatable() {
        let x = Tensor::<f32>::from_fn(&[2, 3, 4, 4], |i| (i as f32 * 0.31).sin());
        let mut bn = BatchNorm2d::<f32>::new(3);
        bn.forward_train(&x).unwrap();
        let a = bn.infer(&x).unwrap();
        let b = bn.infer(&x).unwrap();
        assert_eq!(a, b);
    }
}
