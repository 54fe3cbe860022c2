//! Classification metrics and per-epoch training traces.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("cannot evaluate an empty set")]
    Empty,
    #[error("{truths} labels but {predictions} predictions")]
    LengthMismatch { truths: usize, predictions: usize },
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("epoch {epoch} does not follow epoch {previous}")]
    EpochOrder { previous: u32, epoch: u32 },
    #[error("accuracy {0} outside [0, 1]")]
    Accuracy(f64),
}

/// Index of the largest entry; exact ties go to the lowest index.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Confusion matrix (rows = true class, columns = predicted class) and the
/// accuracies derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub confusion: Vec<Vec<u64>>,
    pub overall_accuracy: f64,
    /// `None` for classes with no test samples.
    pub per_class_accuracy: Vec<Option<f64>>,
}

impl EvalReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(MetricsError::Empty);
        }
        let trace: u64 = (0..confusion.len()).map(|k| confusion[k][k]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[k] as f64 / n as f64)
            })
            .collect();
        Ok(Self {
            overall_accuracy: trace as f64 / total as f64,
            per_class_accuracy,
            confusion,
        })
    }

    pub fn from_predictions(
        num_classes: usize,
        truths: &[usize],
        predictions: &[usize],
    ) -> Result<Self, MetricsError> {
        if truths.len() != predictions.len() {
            return Err(MetricsError::LengthMismatch {
                truths: truths.len(),
                predictions: predictions.len(),
            });
        }
        let mut confusion = vec![vec![0u64; num_classes]; num_classes];
        for (&t, &p) in truths.iter().zip(predictions) {
            for class in [t, p] {
                if class >= num_classes {
                    return Err(MetricsError::ClassOutOfRange {
                        class,
                        classes: num_classes,
                    });
                }
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.confusion.len()).map(|k| self.confusion[k][k]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

/// Per-epoch records with strictly increasing epoch numbers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    records: Vec<EpochRecord>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: EpochRecord) -> Result<(), MetricsError> {
        if let Some(last) = self.records.last() {
            if record.epoch <= last.epoch {
                return Err(MetricsError::EpochOrder {
                    previous: last.epoch,
                    epoch: record.epoch,
                });
            }
        }
        for acc in [record.train_accuracy, record.test_accuracy] {
            if !(0.0..=1.0).contains(&acc) {
                return Err(MetricsError::Accuracy(acc));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}
