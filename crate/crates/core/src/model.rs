//! The four architectures and the sequential model that runs them.
//!
//! | arch              | blocks                                   | kernel | BN  |
//! |-------------------|------------------------------------------|--------|-----|
//! | `proposed-3conv`  | 16, 32, 64 filters                       | 3x3 p1 | yes |
//! | `ablated-2conv`   | 16, 32 filters                           | 3x3 p1 | yes |
//! | `espinosa-binary` | 8, 16, 32, 64 filters                    | 3x3 p1 | no  |
//! | `espinosa-multi`  | 8, 16, 32, 64, 64 filters                | 5x5 p2 | yes |
//!
//! Each block is conv (stride 1) -> [batch norm] -> ReLU -> 2x2/2 max pool.
//! All architectures end in flatten -> dense(num_classes) -> softmax.
//! Convolutions feeding a batch norm carry no bias.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::kernels::ConvGeometry;
use crate::layers::{
    cross_entropy, softmax, softmax_cross_entropy_grad, BatchNorm2d, Conv2d, Dense, Flatten, Layer,
    LayerError, MaxPool2d, ParamSlot, Relu,
};
use crate::preprocess::ChannelStats;
use crate::rng::SplitMix64;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub use crate::layers::Mode;

/// Default input: 3 x 128 x 128 RGB.
pub const DEFAULT_INPUT_SHAPE: [usize; 3] = [3, 128, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArchId {
    Proposed3Conv,
    Ablated2Conv,
    EspinosaBinary,
    EspinosaMulti,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown architecture `{0}` (expected one of proposed-3conv, ablated-2conv, espinosa-binary, espinosa-multi)")]
pub struct ParseArchError(pub String);

impl ArchId {
    pub const ALL: [ArchId; 4] = [
        ArchId::Proposed3Conv,
        ArchId::Ablated2Conv,
        ArchId::EspinosaBinary,
        ArchId::EspinosaMulti,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchId::Proposed3Conv => "proposed-3conv",
            ArchId::Ablated2Conv => "ablated-2conv",
            ArchId::EspinosaBinary => "espinosa-binary",
            ArchId::EspinosaMulti => "espinosa-multi",
        }
    }

    /// Declarative layer list for this architecture.
    pub fn layer_specs(self, num_classes: usize) -> Vec<LayerSpec> {
        let (filters, kernel, batch_norm): (&[usize], usize, bool) = match self {
            ArchId::Proposed3Conv => (&[16, 32, 64], 3, true),
            ArchId::Ablated2Conv => (&[16, 32], 3, true),
            ArchId::EspinosaBinary => (&[8, 16, 32, 64], 3, false),
            ArchId::EspinosaMulti => (&[8, 16, 32, 64, 64], 5, true),
        };
        let mut specs = Vec::new();
        for &f in filters {
            specs.push(LayerSpec::Conv {
                filters: f,
                kernel,
                stride: 1,
                padding: kernel / 2,
                bias: !batch_norm,
            });
            if batch_norm {
                specs.push(LayerSpec::BatchNorm);
            }
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::MaxPool {
                window: 2,
                stride: 2,
            });
        }
        specs.push(LayerSpec::Flatten);
        specs.push(LayerSpec::Dense { units: num_classes });
        specs
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchId {
    type Err = ParseArchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ArchId::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| ParseArchError(s.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    BatchNorm,
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        units: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error("class count must be 2 or 4, got {0}")]
    InvalidClassCount(usize),
    #[error("input {input_shape:?} too small for {arch}: {layer} fails ({source})")]
    InputTooSmall {
        arch: ArchId,
        input_shape: [usize; 3],
        layer: String,
        source: alloc::boxed::Box<LayerError>,
    },
    #[error("batch shape {found:?} does not match model input [N, {}, {}, {}]", expected[0], expected[1], expected[2])]
    InputShape {
        expected: [usize; 3],
        found: Vec<usize>,
    },
}

/// Sequential network plus its normalization constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real = f32> {
    arch: ArchId,
    num_classes: usize,
    input_shape: [usize; 3],
    layers: Vec<(String, Layer<T>)>,
    normalization: ChannelStats,
    mode: Mode,
}

fn he_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut SplitMix64) -> Tensor<T> {
    let limit = libm::sqrt(6.0 / fan_in as f64);
    Tensor::from_fn(shape, |_| T::from_f64(rng.uniform(-limit, limit)))
}

impl<T: Real> Model<T> {
    /// Materializes `arch` with He-uniform weights drawn from `seed`.
    pub fn build(
        arch: ArchId,
        num_classes: usize,
        input_shape: [usize; 3],
        seed: u64,
    ) -> Result<Self, ModelError> {
        if num_classes != 2 && num_classes != 4 {
            return Err(ModelError::InvalidClassCount(num_classes));
        }
        let mut rng = SplitMix64::new(seed);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::new();
        let mut counters = [0usize; 4];
        for spec in arch.layer_specs(num_classes) {
            let (name, layer) = match spec {
                LayerSpec::Conv {
                    filters,
                    kernel,
                    stride,
                    padding,
                    bias,
                } => {
                    counters[0] += 1;
                    let channels = shape[0];
                    let fan_in = channels * kernel * kernel;
                    let weight = he_uniform(&[filters, channels, kernel, kernel], fan_in, &mut rng);
                    let bias = bias.then(|| Tensor::zeros(&[filters]));
                    let geom = ConvGeometry::square(kernel, stride, padding)
                        .map_err(LayerError::from)?;
                    (
                        format!("conv{}", counters[0]),
                        Layer::Conv(Conv2d::new(weight, bias, geom)),
                    )
                }
                LayerSpec::BatchNorm => (
                    format!("bn{}", counters[0]),
                    Layer::BatchNorm(BatchNorm2d::new(shape[0])),
                ),
                LayerSpec::Relu => {
                    counters[1] += 1;
                    (format!("relu{}", counters[1]), Layer::Relu(Relu::default()))
                }
                LayerSpec::MaxPool { window, stride } => {
                    counters[2] += 1;
                    (
                        format!("pool{}", counters[2]),
                        Layer::MaxPool(MaxPool2d::new((window, window), (stride, stride))),
                    )
                }
                LayerSpec::Flatten => ("flatten".into(), Layer::Flatten(Flatten::default())),
                LayerSpec::Dense { units } => {
                    counters[3] += 1;
                    let inputs = shape.iter().product();
                    let name = if counters[3] == 1 {
                        "fc".into()
                    } else {
                        format!("fc{}", counters[3])
                    };
                    let weight = he_uniform(&[inputs, units], inputs, &mut rng);
                    (name, Layer::Dense(Dense::new(weight, Tensor::zeros(&[units]))))
                }
            };
            shape = layer
                .output_shape(&shape)
                .map_err(|source| ModelError::InputTooSmall {
                    arch,
                    input_shape,
                    layer: name.clone(),
                    source: source.into(),
                })?;
            layers.push((name, layer));
        }
        debug_assert_eq!(shape, vec![num_classes]);
        Ok(Self {
            arch,
            num_classes,
            input_shape,
            layers,
            normalization: ChannelStats::identity(input_shape[0]),
            mode: Mode::Inference,
        })
    }

    pub fn arch(&self) -> ArchId {
        self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        if mode == Mode::Inference {
            self.layers.iter_mut().for_each(|(_, l)| l.clear_cache());
        }
    }

    pub fn normalization(&self) -> &ChannelStats {
        &self.normalization
    }

    pub fn set_normalization(&mut self, stats: ChannelStats) {
        self.normalization = stats;
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &Layer<T>)> {
        self.layers.iter().map(|(n, l)| (n.as_str(), l))
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut Layer<T>> {
        self.layers
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, l)| l)
    }

    /// Per-sample shape after each layer, starting with the input.
    pub fn shape_trace(&self) -> Result<Vec<Vec<usize>>, LayerError> {
        let mut shapes = vec![self.input_shape.to_vec()];
        for (_, layer) in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn count_parameters(&self) -> usize {
        self.layers.iter().map(|(_, l)| l.parameter_count()).sum()
    }

    /// Trainable parameters of the convolutional feature extractor, i.e.
    /// everything before the classifier head.
    pub fn count_feature_parameters(&self) -> usize {
        self.layers
            .iter()
            .take_while(|(_, l)| !matches!(l, Layer::Flatten(_)))
            .map(|(_, l)| l.parameter_count())
            .sum()
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<(), ModelError> {
        let s = batch.shape();
        if s.len() != 4 || s[1..] != self.input_shape {
            return Err(ModelError::InputShape {
                expected: self.input_shape,
                found: s.to_vec(),
            });
        }
        Ok(())
    }

    /// Raw scores before the softmax.
    pub fn logits(&mut self, batch: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, ModelError> {
        self.check_batch(batch)?;
        self.mode = mode;
        let mut x = batch.clone();
        for (_, layer) in &mut self.layers {
            x = layer.forward(&x, mode)?;
        }
        Ok(x)
    }

    /// Class probabilities `[N, num_classes]`.
    pub fn forward(&mut self, batch: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, ModelError> {
        let logits = self.logits(batch, mode)?;
        Ok(softmax(&logits).map_err(LayerError::from)?)
    }

    /// Inference-mode probabilities without touching any state.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        for (_, layer) in &self.layers {
            x = layer.infer(&x)?;
        }
        Ok(softmax(&x).map_err(LayerError::from)?)
    }

    /// Back-propagates the softmax cross-entropy gradient from the last
    /// training forward. Parameter gradients are stored in the layers; the
    /// gradient with respect to the batch is returned.
    pub fn backward(&mut self, probs: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>, ModelError> {
        let mut grad = softmax_cross_entropy_grad(probs, labels)?;
        for (_, layer) in self.layers.iter_mut().rev() {
            grad = layer.backward(&grad)?;
        }
        Ok(grad)
    }

    /// Training forward, cross-entropy loss and backward in one call.
    /// Returns the loss and the probabilities.
    pub fn loss_and_gradients(
        &mut self,
        batch: &Tensor<T>,
        labels: &[usize],
    ) -> Result<(f64, Tensor<T>), ModelError> {
        let probs = self.forward(batch, Mode::Train)?;
        let loss = cross_entropy(&probs, labels)?;
        self.backward(&probs, labels)?;
        Ok((loss, probs))
    }

    /// Training-mode loss without a backward pass.
    pub fn loss(&mut self, batch: &Tensor<T>, labels: &[usize]) -> Result<f64, ModelError> {
        let probs = self.forward(batch, Mode::Train)?;
        Ok(cross_entropy(&probs, labels)?)
    }

    /// Trainable tensors with their gradients, named `layer.param`.
    pub fn param_slots(&mut self) -> Vec<(String, ParamSlot<'_, T>)> {
        let mut out = Vec::new();
        for (layer_name, layer) in &mut self.layers {
            for slot in layer.param_slots() {
                out.push((format!("{layer_name}.{}", slot.name), slot));
            }
        }
        out
    }

    /// Every parameter and buffer, named `layer.tensor`, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (layer_name, layer) in &self.layers {
            for (name, t) in layer.tensors() {
                out.push((format!("{layer_name}.{name}"), t));
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (layer_name, layer) in &mut self.layers {
            for (name, t) in layer.tensors_mut() {
                out.push((format!("{layer_name}.{name}"), t));
            }
        }
        out
    }

    /// Same network at another storage precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            arch: self.arch,
            num_classes: self.num_classes,
            input_shape: self.input_shape,
            layers: self
                .layers
                .iter()
                .map(|(n, l)| (n.clone(), l.cast()))
                .collect(),
            normalization: self.normalization.clone(),
            mode: self.mode,
        }
    }
}

/// Builds an `f32` model; see [`Model::build`].
pub fn build_model(
    arch: ArchId,
    num_classes: usize,
    input_shape: [usize; 3],
    seed: u64,
) -> Result<Model<f32>, ModelError> {
    Model::build(arch, num_classes, input_shape, seed)
}
