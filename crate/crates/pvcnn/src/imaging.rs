//! PNG/JPEG decoding into model-ready tensors.

use std::path::{Path, PathBuf};

use pvcnn_core::data::Dataset;
use pvcnn_core::preprocess::{resize_bilinear, rgb8_to_tensor, PreprocessError};
use pvcnn_core::train::{ImageSet, TrainError};
use pvcnn_core::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: cannot decode image: {source}")]
    Decode {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Preprocess {
        path: PathBuf,
        source: PreprocessError,
    },
    #[error(transparent)]
    Set(#[from] TrainError),
}

/// Decodes `path` to RGB and resizes it bilinearly to `height x width`.
/// Output is `[3, height, width]` in `[0, 1]`.
pub fn decode_and_resize(path: &Path, height: usize, width: usize) -> Result<Tensor<f32>, ImageError> {
    let decode = |source| ImageError::Decode {
        path: path.to_path_buf(),
        source,
    };
    let img = image::ImageReader::open(path)
        .map_err(|e| decode(image::ImageError::IoError(e)))?
        .with_guessed_format()
        .map_err(|e| decode(image::ImageError::IoError(e)))?
        .decode()
        .map_err(decode)?
        .to_rgb8();
    let pre = |source| ImageError::Preprocess {
        path: path.to_path_buf(),
        source,
    };
    let t = rgb8_to_tensor(img.width() as usize, img.height() as usize, img.as_raw()).map_err(pre)?;
    resize_bilinear(&t, height, width).map_err(pre)
}

/// Decodes every sample of `dataset`, resolving paths against `root`.
pub fn load_image_set(dataset: &Dataset, root: &Path, height: usize, width: usize) -> Result<ImageSet, ImageError> {
    let images = dataset
        .samples()
        .iter()
        .map(|s| decode_and_resize(&root.join(&s.image_path), height, width))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ImageSet::new(
        images,
        dataset.class_indices(),
        dataset.taxonomy().num_classes(),
    )?)
}
