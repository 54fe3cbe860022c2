//! Finite-difference verification of the analytical gradients of a whole
//! model.
//!
//! The loss is the training-mode cross-entropy of a fixed batch. Each
//! checked entry compares the back-propagated gradient `a` with the central
//! difference `n = (L(p + eps) - L(p - eps)) / (2 eps)` through
//! `|a - n| / max(|a|, |n|, REL_FLOOR)`.

use alloc::string::String;
use alloc::vec::Vec;

use crate::model::{Model, ModelError};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Denominator floor of the relative error; keeps entries whose true
/// gradient is zero from dividing rounding noise by zero.
pub const REL_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub epsilon: f64,
    /// Entries checked per tensor; `None` checks every entry.
    pub samples_per_tensor: Option<usize>,
    /// Seeds the choice of sampled entries.
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            samples_per_tensor: Some(24),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    pub checked: usize,
    pub worst_rel_error: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub loss: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    /// True iff every tensor's worst relative error is strictly below the
    /// tolerance.
    pub fn passed(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.worst_rel_error < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.worst_rel_error)
            .fold(0.0, f64::max)
    }
}

fn pick_indices(len: usize, samples: Option<usize>, rng: &mut SplitMix64) -> Vec<usize> {
    match samples {
        Some(k) if k < len => {
            let mut all: Vec<usize> = (0..len).collect();
            for i in 0..k {
                let j = i + rng.below((len - i) as u64) as usize;
                all.swap(i, j);
            }
            all.truncate(k);
            all.sort_unstable();
            all
        }
        _ => (0..len).collect(),
    }
}

/// Checks every trainable tensor of `model` on `(batch, labels)`.
pub fn gradcheck(
    model: &Model<f64>,
    batch: &Tensor<f64>,
    labels: &[usize],
    tolerance: f64,
    options: GradcheckOptions,
) -> Result<GradcheckReport, ModelError> {
    gradcheck_with(model, batch, labels, tolerance, options, |_, _| {})
}

/// Like [`gradcheck`], but passes each analytical gradient through
/// `tamper(name, grad)` before comparison. Used to confirm the check
/// catches a broken backward pass.
pub fn gradcheck_with(
    model: &Model<f64>,
    batch: &Tensor<f64>,
    labels: &[usize],
    tolerance: f64,
    options: GradcheckOptions,
    mut tamper: impl FnMut(&str, &mut Tensor<f64>),
) -> Result<GradcheckReport, ModelError> {
    let mut work = model.clone();
    let (loss, _) = work.loss_and_gradients(batch, labels)?;
    let mut analytic: Vec<(String, Tensor<f64>)> = work
        .param_slots()
        .into_iter()
        .map(|(name, slot)| (name, slot.grad.clone()))
        .collect();
    for (name, grad) in &mut analytic {
        tamper(name, grad);
    }

    let mut rng = SplitMix64::new(options.seed);
    let eps = options.epsilon;
    let mut tensors = Vec::with_capacity(analytic.len());
    for (slot_index, (name, grad)) in analytic.iter().enumerate() {
        let indices = pick_indices(grad.len(), options.samples_per_tensor, &mut rng);
        let mut check = TensorCheck {
            name: name.clone(),
            len: grad.len(),
            checked: indices.len(),
            worst_rel_error: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for &idx in &indices {
            let original = param_value(&mut work, slot_index, idx);
            set_param(&mut work, slot_index, idx, original + eps);
            let plus = work.loss(batch, labels)?;
            set_param(&mut work, slot_index, idx, original - eps);
            let minus = work.loss(batch, labels)?;
            set_param(&mut work, slot_index, idx, original);
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[idx];
            let err = relative_error(a, numeric);
            if err > check.worst_rel_error || !err.is_finite() {
                check.worst_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                check.worst_index = idx;
                check.worst_analytic = a;
                check.worst_numeric = numeric;
            }
        }
        tensors.push(check);
    }
    Ok(GradcheckReport {
        tolerance,
        loss,
        tensors,
    })
}

fn param_value(model: &mut Model<f64>, slot: usize, idx: usize) -> f64 {
    model.param_slots()[slot].1.value.data()[idx]
}

fn set_param(model: &mut Model<f64>, slot: usize, idx: usize, value: f64) {
    model.param_slots()[slot].1.value.data_mut()[idx] = value;
}

/// Random batch for gradient checks: values uniform in `[0, 1)` and labels
/// cycling through the classes.
pub fn random_batch(n: usize, input_shape: [usize; 3], num_classes: usize, seed: u64) -> (Tensor<f64>, Vec<usize>) {
    let mut rng = SplitMix64::new(seed);
    let shape = [n, input_shape[0], input_shape[1], input_shape[2]];
    let batch = Tensor::from_fn(&shape, |_| rng.next_f64());
    let labels = (0..n).map(|i| i % num_classes).collect();
    (batch, labels)
}
