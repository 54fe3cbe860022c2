//! Mini-batch training loop and evaluation.
//!
//! One epoch is a full pass over the training set in an order shuffled by
//! `SplitMix64::derive(seed, [1, epoch])`; the last partial batch is kept.
//! Sample `i` in epoch `e` is augmented with
//! `SplitMix64::derive(seed, [2, e, i])`, so a run is reproducible from its
//! seed alone. Test metrics are computed after every epoch in inference
//! mode.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::layers::cross_entropy;
use crate::metrics::{argmax, EpochRecord, EvalReport, MetricsError, MetricsLog};
use crate::model::{Mode, Model, ModelError};
use crate::optim::{OptimError, Optimizer, OptimizerConfig};
use crate::preprocess::{augment, normalize, ChannelStats, PreprocessError};
use crate::rng::SplitMix64;
use crate::tensor::{Tensor, TensorError};

const SHUFFLE_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            optimizer: OptimizerConfig::adam(),
            seed: 0,
            augment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("model predicts {model} classes but the data has {data}")]
    ClassCount { model: usize, data: usize },
    #[error("{images} images but {labels} labels")]
    LabelCount { images: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("image {index} has shape {found:?}, expected {expected:?}")]
    ImageShape {
        index: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite loss in epoch {epoch}")]
    NonFinite { epoch: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        let o = &self.optimizer;
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if o.epsilon.is_nan() || o.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

/// Decoded images (`[C, H, W]`, values in `[0, 1]`, not normalized) with
/// class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    images: Vec<Tensor<f32>>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl ImageSet {
    pub fn new(images: Vec<Tensor<f32>>, labels: Vec<usize>, num_classes: usize) -> Result<Self, TrainError> {
        if images.len() != labels.len() {
            return Err(TrainError::LabelCount {
                images: images.len(),
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(TrainError::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        if let Some(first) = images.first() {
            for (index, img) in images.iter().enumerate() {
                if img.shape() != first.shape() || img.rank() != 3 {
                    return Err(TrainError::ImageShape {
                        index,
                        expected: first.shape().to_vec(),
                        found: img.shape().to_vec(),
                    });
                }
            }
        }
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }

    pub fn images(&self) -> &[Tensor<f32>] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn check_against(&self, model: &Model<f32>, which: &'static str) -> Result<(), TrainError> {
        if self.is_empty() {
            return Err(TrainError::EmptyDataset(which));
        }
        if self.num_classes != model.num_classes() {
            return Err(TrainError::ClassCount {
                model: model.num_classes(),
                data: self.num_classes,
            });
        }
        let expected = model.input_shape();
        if self.images[0].shape() != expected {
            return Err(TrainError::ImageShape {
                index: 0,
                expected: expected.to_vec(),
                found: self.images[0].shape().to_vec(),
            });
        }
        Ok(())
    }
}

fn normalized_batch<'a>(
    images: impl Iterator<Item = Tensor<f32>> + 'a,
    stats: &ChannelStats,
) -> Result<Tensor<f32>, TrainError> {
    let normed = images
        .map(|img| normalize(&img, stats))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&Tensor<f32>> = normed.iter().collect();
    Ok(Tensor::stack(&refs)?)
}

/// Linearly separable toy set: class `c` of `k` lights up the `c`-th of `k`
/// vertical bands of an otherwise noisy `[3, size, size]` image. Labels
/// cycle through the classes.
pub fn synthetic_set(n: usize, num_classes: usize, size: usize, seed: u64) -> Result<ImageSet, TrainError> {
    let mut rng = SplitMix64::new(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes.max(1);
        let band = (class * size / num_classes.max(1), (class + 1) * size / num_classes.max(1));
        let img = Tensor::from_fn(&[3, size, size], |j| {
            let x = j % size;
            let base = if x >= band.0 && x < band.1 { 0.8 } else { 0.2 };
            (base + rng.uniform(-0.1, 0.1)) as f32
        });
        images.push(img);
        labels.push(class);
    }
    ImageSet::new(images, labels, num_classes)
}

/// Evaluation result: confusion-based report plus mean cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub loss: f64,
}

/// Inference-mode evaluation. Predictions are the argmax of the
/// probabilities, lowest class index on ties.
pub fn evaluate(model: &Model<f32>, set: &ImageSet, batch_size: usize) -> Result<Evaluation, TrainError> {
    set.check_against(model, "test")?;
    let batch_size = batch_size.max(1);
    let k = model.num_classes();
    let mut predictions = Vec::with_capacity(set.len());
    let mut loss_sum = 0.0;
    for (images, labels) in set.images.chunks(batch_size).zip(set.labels.chunks(batch_size)) {
        let batch = normalized_batch(images.iter().cloned(), model.normalization())?;
        let probs = model.predict(&batch)?;
        loss_sum += cross_entropy(&probs, labels).map_err(ModelError::from)? * labels.len() as f64;
        predictions.extend(probs.data().chunks(k).map(argmax));
    }
    Ok(Evaluation {
        report: EvalReport::from_predictions(k, &set.labels, &predictions)?,
        loss: loss_sum / set.len() as f64,
    })
}

/// Trains `model` in place for `config.epochs` epochs and returns the
/// per-epoch metrics. Normalization constants are computed from the
/// training images and stored on the model. `on_epoch` sees each record as
/// it is produced. The model is left in inference mode.
pub fn train(
    model: &mut Model<f32>,
    train_set: &ImageSet,
    test_set: &ImageSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<MetricsLog, TrainError> {
    config.validate()?;
    train_set.check_against(model, "train")?;
    test_set.check_against(model, "test")?;

    model.set_normalization(ChannelStats::compute(&train_set.images));
    let stats = model.normalization().clone();
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut log = MetricsLog::new();
    let k = model.num_classes();
    let n = train_set.len();

    for epoch in 1..=config.epochs as u32 {
        let mut order: Vec<usize> = (0..n).collect();
        SplitMix64::derive(config.seed, &[SHUFFLE_STREAM, epoch as u64]).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let images = chunk.iter().map(|&i| {
                let img = &train_set.images[i];
                if config.augment {
                    let mut rng = SplitMix64::derive(config.seed, &[AUGMENT_STREAM, epoch as u64, i as u64]);
                    augment(img, (), &mut rng).0
                } else {
                    img.clone()
                }
            });
            let batch = normalized_batch(images, &stats)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let (loss, probs) = model.loss_and_gradients(&batch, &labels)?;
            if !loss.is_finite() {
                model.set_mode(Mode::Inference);
                return Err(TrainError::NonFinite { epoch });
            }
            optimizer.step_model(model)?;
            loss_sum += loss * labels.len() as f64;
            correct += probs
                .data()
                .chunks(k)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
        }
        model.set_mode(Mode::Inference);

        let eval = evaluate(model, test_set, config.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
            test_loss: eval.loss,
            test_accuracy: eval.report.overall_accuracy,
        };
        log.push(record)?;
        on_epoch(&record);
    }
    model.set_mode(Mode::Inference);
    Ok(log)
}
