//! Image tensor preprocessing: raster conversion, bilinear resize,
//! per-channel normalization and training-time augmentation.
//!
//! Images are `[C, H, W]` tensors with values in `[0, 1]` before
//! normalization.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::rng::SplitMix64;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreprocessError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("image has zero area ({width}x{height})")]
    ZeroArea { width: usize, height: usize },
    #[error("standard deviation of channel {channel} must be positive, got {value}")]
    NonPositiveStd { channel: usize, value: f32 },
    #[error("expected {expected} channel statistics, image has {found} channels")]
    ChannelCount { expected: usize, found: usize },
    #[error("raster of {len} bytes does not hold {width}x{height} RGB pixels")]
    RasterLength {
        width: usize,
        height: usize,
        len: usize,
    },
}

/// Interleaved 8-bit RGB pixels to a `[3, H, W]` tensor scaled to `[0, 1]`.
pub fn rgb8_to_tensor(width: usize, height: usize, pixels: &[u8]) -> Result<Tensor<f32>, PreprocessError> {
    if width == 0 || height == 0 {
        return Err(PreprocessError::ZeroArea { width, height });
    }
    if pixels.len() != width * height * 3 {
        return Err(PreprocessError::RasterLength {
            width,
            height,
            len: pixels.len(),
        });
    }
    let plane = width * height;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    Ok(Tensor::new(&[3, height, width], data)?)
}

/// Source coordinate for output index `o` under half-pixel-center mapping,
/// clamped to the valid range.
fn source_coord(o: usize, in_len: usize, out_len: usize) -> f64 {
    let s = (o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
    s.clamp(0.0, (in_len - 1) as f64)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Bilinear sample of one `[H, W]` plane at a clamped real coordinate.
fn sample_plane(plane: &[f32], height: usize, width: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (height - 1) as f64);
    let x = x.clamp(0.0, (width - 1) as f64);
    let y0 = libm::floor(y) as usize;
    let x0 = libm::floor(x) as usize;
    let y1 = (y0 + 1).min(height - 1);
    let x1 = (x0 + 1).min(width - 1);
    let (ty, tx) = (y - y0 as f64, x - x0 as f64);
    let p = |r: usize, c: usize| plane[r * width + c] as f64;
    let (a, b, c, d) = (p(y0, x0), p(y0, x1), p(y1, x0), p(y1, x1));
    let v = lerp(lerp(a, b, tx), lerp(c, d, tx), ty);
    let lo = a.min(b).min(c).min(d);
    let hi = a.max(b).max(c).max(d);
    v.clamp(lo, hi)
}

/// Bilinear resize of a `[C, H, W]` tensor with half-pixel centers and edge
/// clamping. Resizing to the same extent returns the input unchanged.
pub fn resize_bilinear(
    image: &Tensor<f32>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<f32>, PreprocessError> {
    image.expect_rank("resize_bilinear", 3)?;
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    if out_h == 0 || out_w == 0 {
        return Err(PreprocessError::ZeroArea {
            width: out_w,
            height: out_h,
        });
    }
    let ys: Vec<f64> = (0..out_h).map(|o| source_coord(o, h, out_h)).collect();
    let xs: Vec<f64> = (0..out_w).map(|o| source_coord(o, w, out_w)).collect();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for plane in image.data().chunks(h * w) {
        for &y in &ys {
            for &x in &xs {
                out.push(sample_plane(plane, h, w, y, x) as f32);
            }
        }
    }
    Ok(Tensor::new(&[c, out_h, out_w], out)?)
}

/// Per-channel normalization constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

/// Channels whose dataset std falls below this are left unscaled.
pub const MIN_STD: f64 = 1e-6;

impl ChannelStats {
    /// Mean 0, std 1: normalization is the identity.
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Population mean and std per channel over every pixel of `images`.
    /// A channel with std below [`MIN_STD`] gets std 1.
    pub fn compute(images: &[Tensor<f32>]) -> Self {
        let Some(first) = images.first() else {
            return Self::identity(3);
        };
        let channels = first.shape()[0];
        let mut sum = vec![0.0f64; channels];
        let mut count = vec![0usize; channels];
        for img in images {
            let plane = img.len() / channels;
            for (c, chunk) in img.data().chunks(plane).enumerate() {
                sum[c] += chunk.iter().map(|&v| v as f64).sum::<f64>();
                count[c] += chunk.len();
            }
        }
        let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
        let mut sq = vec![0.0f64; channels];
        for img in images {
            let plane = img.len() / channels;
            for (c, chunk) in img.data().chunks(plane).enumerate() {
                sq[c] += chunk
                    .iter()
                    .map(|&v| (v as f64 - mean[c]) * (v as f64 - mean[c]))
                    .sum::<f64>();
            }
        }
        let std = sq
            .iter()
            .zip(&count)
            .map(|(s, &n)| {
                let sd = libm::sqrt(s / n as f64);
                if sd < MIN_STD {
                    1.0
                } else {
                    sd as f32
                }
            })
            .collect();
        Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    fn check(&self, image: &Tensor<f32>) -> Result<usize, PreprocessError> {
        image.expect_rank("normalize", 3)?;
        let channels = image.shape()[0];
        if channels != self.mean.len() || channels != self.std.len() {
            return Err(PreprocessError::ChannelCount {
                expected: self.mean.len(),
                found: channels,
            });
        }
        if let Some((channel, &value)) = self.std.iter().enumerate().find(|(_, &s)| s.is_nan() || s <= 0.0) {
            return Err(PreprocessError::NonPositiveStd { channel, value });
        }
        Ok(image.len() / channels)
    }
}

/// `(x - mean) / std` per channel.
pub fn normalize(image: &Tensor<f32>, stats: &ChannelStats) -> Result<Tensor<f32>, PreprocessError> {
    let plane = stats.check(image)?;
    let mut out = image.clone();
    for (c, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let (m, s) = (stats.mean[c], stats.std[c]);
        chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
    }
    Ok(out)
}

/// Inverse of [`normalize`].
pub fn denormalize(image: &Tensor<f32>, stats: &ChannelStats) -> Result<Tensor<f32>, PreprocessError> {
    let plane = stats.check(image)?;
    let mut out = image.clone();
    for (c, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let (m, s) = (stats.mean[c], stats.std[c]);
        chunk.iter_mut().for_each(|v| *v = *v * s + m);
    }
    Ok(out)
}

/// Mirrors a `[C, H, W]` image left to right.
pub fn hflip(image: &Tensor<f32>) -> Tensor<f32> {
    let w = image.shape()[image.rank() - 1];
    let mut out = image.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}

/// Largest rotation applied by [`augment`], in degrees.
pub const MAX_ROTATION_DEG: f64 = 10.0;
/// Largest translation applied by [`augment`], as a fraction of each axis.
pub const MAX_TRANSLATION: f64 = 0.05;

/// Random parameters of one augmentation draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub rotation_deg: f64,
    pub shift_x: f64,
    pub shift_y: f64,
}

impl AugmentParams {
    /// Draws flip, rotation, x shift and y shift, in that order.
    pub fn draw(rng: &mut SplitMix64) -> Self {
        Self {
            flip: rng.next_f64() < 0.5,
            rotation_deg: rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG),
            shift_x: rng.uniform(-MAX_TRANSLATION, MAX_TRANSLATION),
            shift_y: rng.uniform(-MAX_TRANSLATION, MAX_TRANSLATION),
        }
    }
}

/// Rotates about the image center and translates by
/// `(shift_x * W, shift_y * H)`, sampling bilinearly with edge replication.
pub fn rotate_translate(image: &Tensor<f32>, rotation_deg: f64, shift_x: f64, shift_y: f64) -> Tensor<f32> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let theta = rotation_deg.to_radians();
    let (sin, cos) = (libm::sin(theta), libm::cos(theta));
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (ty, tx) = (shift_y * h as f64, shift_x * w as f64);
    let mut out = Vec::with_capacity(image.len());
    for plane in image.data().chunks(h * w) {
        for y in 0..h {
            for x in 0..w {
                // inverse map: undo the shift, then rotate by -theta
                let dy = y as f64 - cy - ty;
                let dx = x as f64 - cx - tx;
                let sx = cos * dx + sin * dy + cx;
                let sy = -sin * dx + cos * dy + cy;
                out.push(sample_plane(plane, h, w, sy, sx) as f32);
            }
        }
    }
    Tensor::new(image.shape(), out).expect("shape preserved")
}

/// Random flip (p = 0.5), rotation in ±10° and translation in ±5% per axis.
/// The label passes through untouched.
pub fn augment<L>(image: &Tensor<f32>, label: L, rng: &mut SplitMix64) -> (Tensor<f32>, L) {
    let p = AugmentParams::draw(rng);
    let flipped;
    let src = if p.flip {
        flipped = hflip(image);
        &flipped
    } else {
        image
    };
    (rotate_translate(src, p.rotation_deg, p.shift_x, p.shift_y), label)
}
