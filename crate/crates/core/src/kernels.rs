//! Raw numerical kernels: matrix multiply, 2-D convolution and max pooling,
//! forward and backward. Every function is pure.
//!
//! Dot products accumulate in `f64` regardless of the storage type, and the
//! summation order is fixed (channel, kernel row, kernel column), so results
//! do not depend on how a caller batches its work.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Real;
use crate::tensor::{Tensor, TensorError};

/// Kernel extent, stride and zero padding of a convolution, each as
/// `(rows, cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeometry {
    pub fn new(
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self, TensorError> {
        if kernel.0 == 0 || kernel.1 == 0 {
            return Err(TensorError::ZeroExtent {
                shape: vec![kernel.0, kernel.1],
            });
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(TensorError::ZeroStride);
        }
        Ok(Self {
            kernel,
            stride,
            padding,
        })
    }

    /// Square kernel with equal stride and padding on both axes.
    pub fn square(kernel: usize, stride: usize, padding: usize) -> Result<Self, TensorError> {
        Self::new((kernel, kernel), (stride, stride), (padding, padding))
    }

    /// `floor((in + 2*pad - k) / stride) + 1` on each axis.
    pub fn output_extent(&self, height: usize, width: usize) -> Result<(usize, usize), TensorError> {
        Ok((
            axis_extent("row", height, self.kernel.0, self.padding.0, self.stride.0)?,
            axis_extent("column", width, self.kernel.1, self.padding.1, self.stride.1)?,
        ))
    }
}

fn axis_extent(
    axis: &'static str,
    input: usize,
    kernel: usize,
    padding: usize,
    stride: usize,
) -> Result<usize, TensorError> {
    let padded = input + 2 * padding;
    if stride == 0 {
        return Err(TensorError::ZeroStride);
    }
    if padded < kernel {
        return Err(TensorError::DegenerateExtent {
            axis,
            input,
            kernel,
            padding,
            stride,
        });
    }
    Ok((padded - kernel) / stride + 1)
}

/// `c[i, j] = sum_p a[i, p] * b[p, j]`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    a.expect_rank("matmul", 2)?;
    b.expect_rank("matmul", 2)?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(m * n);
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.fill(0.0);
        for p in 0..k {
            let av = ad[i * k + p].to_f64();
            let row = &bd[p * n..(p + 1) * n];
            for (slot, bv) in acc.iter_mut().zip(row) {
                *slot += av * bv.to_f64();
            }
        }
        out.extend(acc.iter().map(|&v| T::from_f64(v)));
    }
    Tensor::new(&[m, n], out)
}

/// `c = aᵀ b` for `a: [k, m]`, `b: [k, n]`.
pub fn matmul_at_b<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    a.expect_rank("matmul_at_b", 2)?;
    b.expect_rank("matmul_at_b", 2)?;
    let (k, m) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul_at_b",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (ad, bd) = (a.data(), b.data());
    let mut acc = vec![0.0f64; m * n];
    for p in 0..k {
        let brow = &bd[p * n..(p + 1) * n];
        for i in 0..m {
            let av = ad[p * m + i].to_f64();
            let out = &mut acc[i * n..(i + 1) * n];
            for (slot, bv) in out.iter_mut().zip(brow) {
                *slot += av * bv.to_f64();
            }
        }
    }
    Tensor::new(&[m, n], acc.into_iter().map(T::from_f64).collect())
}

/// `c = a bᵀ` for `a: [m, k]`, `b: [n, k]`.
pub fn matmul_a_bt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    a.expect_rank("matmul_a_bt", 2)?;
    b.expect_rank("matmul_a_bt", 2)?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (n, k2) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul_a_bt",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            let dot: f64 = arow
                .iter()
                .zip(brow)
                .map(|(x, y)| x.to_f64() * y.to_f64())
                .sum();
            out.push(T::from_f64(dot));
        }
    }
    Tensor::new(&[m, n], out)
}

struct ConvDims {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvDims {
    fn patch(&self, geom: &ConvGeometry) -> usize {
        self.channels * geom.kernel.0 * geom.kernel.1
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn conv_dims<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    geom: &ConvGeometry,
) -> Result<ConvDims, TensorError> {
    let [batch, channels, height, width] = input.dims4("conv2d input")?;
    let [filters, kc, kh, kw] = kernels.dims4("conv2d kernels")?;
    if kc != channels {
        return Err(TensorError::ChannelMismatch {
            input: channels,
            kernel: kc,
        });
    }
    if (kh, kw) != geom.kernel {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d kernel extent",
            left: vec![kh, kw],
            right: vec![geom.kernel.0, geom.kernel.1],
        });
    }
    let (out_h, out_w) = geom.output_extent(height, width)?;
    Ok(ConvDims {
        batch,
        channels,
        height,
        width,
        filters,
        out_h,
        out_w,
    })
}

/// Unfolds one sample (`[C, H, W]` slice) into a `[C*kh*kw, H'*W']` matrix,
/// rows ordered (channel, kernel row, kernel column). Padding reads as zero.
fn im2col<T: Real>(sample: &[T], dims: &ConvDims, geom: &ConvGeometry, cols: &mut [f64]) {
    let (kh, kw) = geom.kernel;
    let (sh, sw) = geom.stride;
    let (ph, pw) = (geom.padding.0 as isize, geom.padding.1 as isize);
    let positions = dims.positions();
    let mut row = 0;
    for c in 0..dims.channels {
        let plane = &sample[c * dims.height * dims.width..(c + 1) * dims.height * dims.width];
        for i in 0..kh {
            for j in 0..kw {
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..dims.out_h {
                    let iy = (oy * sh + i) as isize - ph;
                    let line = &mut dst[oy * dims.out_w..(oy + 1) * dims.out_w];
                    if iy < 0 || iy >= dims.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * dims.width..(iy as usize + 1) * dims.width];
                    for (ox, slot) in line.iter_mut().enumerate() {
                        let ix = (ox * sw + j) as isize - pw;
                        *slot = if ix < 0 || ix >= dims.width as isize {
                            0.0
                        } else {
                            src[ix as usize].to_f64()
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds a `[C*kh*kw, H'*W']` gradient matrix back onto a `[C, H, W]`
/// sample. Inverse bookkeeping of [`im2col`].
fn col2im(cols: &[f64], dims: &ConvDims, geom: &ConvGeometry, sample: &mut [f64]) {
    let (kh, kw) = geom.kernel;
    let (sh, sw) = geom.stride;
    let (ph, pw) = (geom.padding.0 as isize, geom.padding.1 as isize);
    let positions = dims.positions();
    let mut row = 0;
    for c in 0..dims.channels {
        let plane = &mut sample[c * dims.height * dims.width..(c + 1) * dims.height * dims.width];
        for i in 0..kh {
            for j in 0..kw {
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..dims.out_h {
                    let iy = (oy * sh + i) as isize - ph;
                    if iy < 0 || iy >= dims.height as isize {
                        continue;
                    }
                    let base = iy as usize * dims.width;
                    for ox in 0..dims.out_w {
                        let ix = (ox * sw + j) as isize - pw;
                        if ix >= 0 && ix < dims.width as isize {
                            plane[base + ix as usize] += src[oy * dims.out_w + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// 2-D cross-correlation: `out[n, f, y, x] = bias[f] + sum_{c,i,j}
/// input[n, c, y*s + i - p, x*s + j - p] * kernels[f, c, i, j]`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    geom: &ConvGeometry,
) -> Result<Tensor<T>, TensorError> {
    let dims = conv_dims(input, kernels, geom)?;
    if bias.shape() != [dims.filters] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d bias",
            left: bias.shape().to_vec(),
            right: vec![dims.filters],
        });
    }
    let patch = dims.patch(geom);
    let positions = dims.positions();
    let sample_len = dims.channels * dims.height * dims.width;
    let mut cols = vec![0.0f64; patch * positions];
    let mut acc = vec![0.0f64; positions];
    let mut out = Vec::with_capacity(dims.batch * dims.filters * positions);
    let (x, w, b) = (input.data(), kernels.data(), bias.data());
    for n in 0..dims.batch {
        im2col(&x[n * sample_len..(n + 1) * sample_len], &dims, geom, &mut cols);
        for f in 0..dims.filters {
            acc.fill(0.0);
            for k in 0..patch {
                let wv = w[f * patch + k].to_f64();
                let row = &cols[k * positions..(k + 1) * positions];
                for (slot, xv) in acc.iter_mut().zip(row) {
                    *slot += wv * xv;
                }
            }
            let bv = b[f].to_f64();
            out.extend(acc.iter().map(|&v| T::from_f64(v + bv)));
        }
    }
    Tensor::new(&[dims.batch, dims.filters, dims.out_h, dims.out_w], out)
}

/// Gradients of a [`conv2d`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGradients<T = f32> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    geom: &ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<ConvGradients<T>, TensorError> {
    let dims = conv_dims(input, kernels, geom)?;
    let expected = [dims.batch, dims.filters, dims.out_h, dims.out_w];
    if grad_out.shape() != expected {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_backward grad_out",
            left: grad_out.shape().to_vec(),
            right: expected.to_vec(),
        });
    }
    let patch = dims.patch(geom);
    let positions = dims.positions();
    let sample_len = dims.channels * dims.height * dims.width;
    let (x, w, g) = (input.data(), kernels.data(), grad_out.data());

    let mut cols = vec![0.0f64; patch * positions];
    let mut grad_cols = vec![0.0f64; patch * positions];
    let mut grad_sample = vec![0.0f64; sample_len];
    let mut grad_w = vec![0.0f64; dims.filters * patch];
    let mut grad_b = vec![0.0f64; dims.filters];
    let mut grad_x = Vec::with_capacity(input.len());
    let mut g_row = vec![0.0f64; positions];

    for n in 0..dims.batch {
        im2col(&x[n * sample_len..(n + 1) * sample_len], &dims, geom, &mut cols);
        grad_cols.fill(0.0);
        for f in 0..dims.filters {
            let base = (n * dims.filters + f) * positions;
            for (slot, gv) in g_row.iter_mut().zip(&g[base..base + positions]) {
                *slot = gv.to_f64();
            }
            grad_b[f] += g_row.iter().sum::<f64>();
            for k in 0..patch {
                let row = &cols[k * positions..(k + 1) * positions];
                grad_w[f * patch + k] += row.iter().zip(&g_row).map(|(a, b)| a * b).sum::<f64>();
                let wv = w[f * patch + k].to_f64();
                let dst = &mut grad_cols[k * positions..(k + 1) * positions];
                for (slot, gv) in dst.iter_mut().zip(&g_row) {
                    *slot += wv * gv;
                }
            }
        }
        grad_sample.fill(0.0);
        col2im(&grad_cols, &dims, geom, &mut grad_sample);
        grad_x.extend(grad_sample.iter().map(|&v| T::from_f64(v)));
    }

    Ok(ConvGradients {
        input: Tensor::new(input.shape(), grad_x)?,
        kernels: Tensor::new(kernels.shape(), grad_w.into_iter().map(T::from_f64).collect())?,
        bias: Tensor::new(&[dims.filters], grad_b.into_iter().map(T::from_f64).collect())?,
    })
}

/// Flat source indices of each pooling maximum, plus the shapes of the
/// forward call that produced them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndex {
    input_shape: [usize; 4],
    output_shape: [usize; 4],
    argmax: Vec<usize>,
}

impl PoolIndex {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    /// Flat index into the input tensor for each output element.
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// Max pooling without padding. Ties resolve to the first maximum in
/// row-major window order.
pub fn maxpool2d<T: Real>(
    input: &Tensor<T>,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<(Tensor<T>, PoolIndex), TensorError> {
    let [batch, channels, height, width] = input.dims4("maxpool2d")?;
    if stride.0 == 0 || stride.1 == 0 {
        return Err(TensorError::ZeroStride);
    }
    if window.0 == 0 || window.1 == 0 {
        return Err(TensorError::ZeroExtent {
            shape: vec![window.0, window.1],
        });
    }
    if window.0 > height || window.1 > width {
        return Err(TensorError::WindowTooLarge {
            window,
            input: (height, width),
        });
    }
    let out_h = (height - window.0) / stride.0 + 1;
    let out_w = (width - window.1) / stride.1 + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(batch * channels * out_h * out_w);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..batch * channels {
        let base = plane * height * width;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let top = oy * stride.0;
                let left = ox * stride.1;
                let mut best_idx = base + top * width + left;
                let mut best = x[best_idx];
                for i in 0..window.0 {
                    let row = base + (top + i) * width + left;
                    for j in 0..window.1 {
                        if x[row + j] > best {
                            best = x[row + j];
                            best_idx = row + j;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    let output_shape = [batch, channels, out_h, out_w];
    Ok((
        Tensor::new(&output_shape, out)?,
        PoolIndex {
            input_shape: [batch, channels, height, width],
            output_shape,
            argmax,
        },
    ))
}

/// Routes each output gradient to the input position recorded in `index`.
pub fn maxpool2d_backward<T: Real>(
    index: &PoolIndex,
    grad_out: &Tensor<T>,
    input_shape: &[usize],
) -> Result<Tensor<T>, TensorError> {
    if grad_out.shape() != index.output_shape || input_shape != index.input_shape {
        return Err(TensorError::StaleIndex {
            expected_input: index.input_shape.to_vec(),
            expected_output: index.output_shape.to_vec(),
            input: input_shape.to_vec(),
            output: grad_out.shape().to_vec(),
        });
    }
    let mut grad = Tensor::zeros(input_shape);
    let dst = grad.data_mut();
    for (&src, &g) in index.argmax.iter().zip(grad_out.data()) {
        dst[src] += g;
    }
    Ok(grad)
}
