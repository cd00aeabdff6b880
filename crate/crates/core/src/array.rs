//! Dense row-major arrays and the numeric kernels behind every layer.
//!
//! Feature maps use the `(batch, channels, height, width)` layout. Kernels
//! here are plain functions on [`DenseArray`]; the [`crate::tape`] module
//! records them for reverse-mode differentiation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Splits a rank-4 shape into `(batch, channels, height, width)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::InvalidArgument(format!(
                "expected a (batch, channels, height, width) array, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::InvalidArgument(format!(
                "expected a rank-2 array, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn at4(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        let s = &self.shape;
        self.data[((b * s[1] + c) * s[2] + h) * s[3] + w]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn add_assign(&mut self, other: &DenseArray) -> Result<()> {
        self.check_same_shape("add", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &DenseArray) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_same_shape(&self, op: &'static str, other: &DenseArray) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Row-major `c = a·b + beta·c` with explicit strides so transposes are free.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad_h: usize,
    pad_w: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn cols(&self) -> usize {
        self.cin * self.kh * self.kw
    }
}

fn conv_geometry(input: &DenseArray, kernel: &DenseArray, padding: Padding) -> Result<(ConvGeom, usize, usize)> {
    let (b, cin, h, w) = input.dims4()?;
    let (cout, kcin, kh, kw) = kernel.dims4()?;
    if kcin != cin {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: input.shape().to_vec(),
            right: kernel.shape().to_vec(),
        });
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "conv2d kernel spatial size must be odd, got {kh}x{kw}"
        )));
    }
    let (pad_h, pad_w, ho, wo) = match padding {
        Padding::Same => (kh / 2, kw / 2, h, w),
        Padding::Valid => {
            if h < kh || w < kw {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    left: input.shape().to_vec(),
                    right: kernel.shape().to_vec(),
                });
            }
            (0, 0, h - kh + 1, w - kw + 1)
        }
    };
    Ok((
        ConvGeom {
            cin,
            h,
            w,
            kh,
            kw,
            pad_h,
            pad_w,
            ho,
            wo,
        },
        b,
        cout,
    ))
}

fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let plane = g.ho * g.wo;
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = oy as isize + ki as isize - g.pad_h as isize;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = ox as isize + kj as isize - g.pad_w as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let plane = g.ho * g.wo;
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = oy as isize + ki as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.wo {
                        let ix = ox as isize + kj as isize - g.pad_w as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation. `kernel` is `(out_channels, in_channels, kh, kw)`,
/// `bias` has one entry per output channel.
pub fn conv2d(input: &DenseArray, kernel: &DenseArray, bias: &DenseArray, padding: Padding) -> Result<DenseArray> {
    let (g, batch, cout) = conv_geometry(input, kernel, padding)?;
    if bias.len() != cout {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            left: kernel.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let plane = g.ho * g.wo;
    let in_stride = g.cin * g.h * g.w;
    let mut out = DenseArray::zeros(&[batch, cout, g.ho, g.wo]);
    let mut col = vec![0.0; g.cols() * plane];
    for b in 0..batch {
        im2col(&input.data()[b * in_stride..(b + 1) * in_stride], &g, &mut col);
        let dst = &mut out.data_mut()[b * cout * plane..(b + 1) * cout * plane];
        for (o, chunk) in dst.chunks_mut(plane).enumerate() {
            chunk.fill(bias.data()[o]);
        }
        gemm(cout, g.cols(), plane, kernel.data(), (g.cols(), 1), &col, (plane, 1), 1.0, dst);
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward(
    input: &DenseArray,
    kernel: &DenseArray,
    grad_out: &DenseArray,
    padding: Padding,
) -> Result<(DenseArray, DenseArray, DenseArray)> {
    let (g, batch, cout) = conv_geometry(input, kernel, padding)?;
    let plane = g.ho * g.wo;
    let in_stride = g.cin * g.h * g.w;
    let mut d_input = DenseArray::zeros(input.shape());
    let mut d_kernel = DenseArray::zeros(kernel.shape());
    let mut d_bias = DenseArray::zeros(&[cout]);
    let mut col = vec![0.0; g.cols() * plane];
    let mut d_col = vec![0.0; g.cols() * plane];
    for b in 0..batch {
        let x = &input.data()[b * in_stride..(b + 1) * in_stride];
        let dy = &grad_out.data()[b * cout * plane..(b + 1) * cout * plane];
        im2col(x, &g, &mut col);
        // dK += dY · colᵀ
        gemm(cout, plane, g.cols(), dy, (plane, 1), &col, (1, plane), 1.0, d_kernel.data_mut());
        // dcol = Kᵀ · dY
        gemm(g.cols(), cout, plane, kernel.data(), (1, g.cols()), dy, (plane, 1), 0.0, &mut d_col);
        col2im_add(&d_col, &g, &mut d_input.data_mut()[b * in_stride..(b + 1) * in_stride]);
        for (o, chunk) in dy.chunks(plane).enumerate() {
            d_bias.data_mut()[o] += chunk.iter().sum::<f64>();
        }
    }
    Ok((d_input, d_kernel, d_bias))
}

fn upsample_dims(input: &DenseArray, kernel: &DenseArray) -> Result<(usize, usize, usize, usize, usize)> {
    let (b, cin, h, w) = input.dims4()?;
    let (kcin, cout, kh, kw) = kernel.dims4()?;
    if kcin != cin || kh != 2 || kw != 2 {
        return Err(Error::ShapeMismatch {
            op: "upsample_block",
            left: input.shape().to_vec(),
            right: kernel.shape().to_vec(),
        });
    }
    Ok((b, cin, cout, h, w))
}

/// Stride-2 transposed convolution with a 2×2 kernel shaped
/// `(in_channels, out_channels, 2, 2)`; doubles height and width.
pub fn upsample_block(input: &DenseArray, kernel: &DenseArray, bias: &DenseArray) -> Result<DenseArray> {
    let (batch, cin, cout, h, w) = upsample_dims(input, kernel)?;
    if bias.len() != cout {
        return Err(Error::ShapeMismatch {
            op: "upsample_block bias",
            left: kernel.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let plane = h * w;
    let taps = cout * 4;
    let mut y = vec![0.0; taps * plane];
    let mut out = DenseArray::zeros(&[batch, cout, 2 * h, 2 * w]);
    let out_stride = cout * 4 * plane;
    for b in 0..batch {
        let x = &input.data()[b * cin * plane..(b + 1) * cin * plane];
        // y[(co, a, c), p] = Σ_ci K[ci, (co, a, c)] · x[ci, p]
        gemm(taps, cin, plane, kernel.data(), (1, taps), x, (plane, 1), 0.0, &mut y);
        let dst = &mut out.data_mut()[b * out_stride..(b + 1) * out_stride];
        for co in 0..cout {
            for a in 0..2 {
                for c in 0..2 {
                    let src = &y[((co * 2 + a) * 2 + c) * plane..][..plane];
                    for i in 0..h {
                        let row = &mut dst[(co * 2 * h + 2 * i + a) * 2 * w..][..2 * w];
                        for j in 0..w {
                            row[2 * j + c] = src[i * w + j] + bias.data()[co];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn upsample_block_backward(
    input: &DenseArray,
    kernel: &DenseArray,
    grad_out: &DenseArray,
) -> Result<(DenseArray, DenseArray, DenseArray)> {
    let (batch, cin, cout, h, w) = upsample_dims(input, kernel)?;
    let plane = h * w;
    let taps = cout * 4;
    let out_stride = taps * plane;
    let mut dy = vec![0.0; taps * plane];
    let mut d_input = DenseArray::zeros(input.shape());
    let mut d_kernel = DenseArray::zeros(kernel.shape());
    let mut d_bias = DenseArray::zeros(&[cout]);
    for b in 0..batch {
        let go = &grad_out.data()[b * out_stride..(b + 1) * out_stride];
        for co in 0..cout {
            for a in 0..2 {
                for c in 0..2 {
                    let dst = &mut dy[((co * 2 + a) * 2 + c) * plane..][..plane];
                    for i in 0..h {
                        let row = &go[(co * 2 * h + 2 * i + a) * 2 * w..][..2 * w];
                        for j in 0..w {
                            dst[i * w + j] = row[2 * j + c];
                        }
                    }
                }
            }
            d_bias.data_mut()[co] += go[co * 4 * plane..(co + 1) * 4 * plane].iter().sum::<f64>();
        }
        let x = &input.data()[b * cin * plane..(b + 1) * cin * plane];
        // dX = K · dY  (cin × taps)·(taps × plane)
        gemm(
            cin,
            taps,
            plane,
            kernel.data(),
            (taps, 1),
            &dy,
            (plane, 1),
            0.0,
            &mut d_input.data_mut()[b * cin * plane..(b + 1) * cin * plane],
        );
        // dK += X · dYᵀ  (cin × plane)·(plane × taps)
        gemm(cin, plane, taps, x, (plane, 1), &dy, (1, plane), 1.0, d_kernel.data_mut());
    }
    Ok((d_input, d_kernel, d_bias))
}

/// 2×2 max pooling, stride 2. Also returns the flat input index of each
/// window's maximum; ties go to the first position in row-major order.
pub fn max_pool_2x2(input: &DenseArray) -> Result<(DenseArray, Vec<usize>)> {
    let (b, c, h, w) = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "max_pool_2x2 needs even spatial dims, got {h}x{w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = DenseArray::zeros(&[b, c, ho, wo]);
    let mut argmax = Vec::with_capacity(b * c * ho * wo);
    let x = input.data();
    for bc in 0..b * c {
        let base = bc * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + (2 * i) * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.data_mut()[(bc * ho + i) * wo + j] = x[best];
                argmax.push(best);
            }
        }
    }
    Ok((out, argmax))
}

pub fn global_avg_pool(input: &DenseArray) -> Result<DenseArray> {
    let (b, c, h, w) = input.dims4()?;
    let plane = h * w;
    let data = input
        .data()
        .chunks(plane)
        .map(|ch| ch.iter().sum::<f64>() / plane as f64)
        .collect();
    DenseArray::from_vec(&[b, c], data)
}

/// `input (n × k) · weights (k × m)`; no bias.
pub fn dense(input: &DenseArray, weights: &DenseArray) -> Result<DenseArray> {
    let (n, k) = input.dims2()?;
    let (k2, m) = weights.dims2()?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "dense",
            left: input.shape().to_vec(),
            right: weights.shape().to_vec(),
        });
    }
    let mut out = DenseArray::zeros(&[n, m]);
    gemm(n, k, m, input.data(), (k, 1), weights.data(), (m, 1), 0.0, out.data_mut());
    Ok(out)
}

pub fn dense_backward(input: &DenseArray, weights: &DenseArray, grad_out: &DenseArray) -> Result<(DenseArray, DenseArray)> {
    let (n, k) = input.dims2()?;
    let (_, m) = weights.dims2()?;
    let mut d_input = DenseArray::zeros(&[n, k]);
    let mut d_weights = DenseArray::zeros(&[k, m]);
    gemm(n, m, k, grad_out.data(), (m, 1), weights.data(), (1, m), 0.0, d_input.data_mut());
    gemm(k, n, m, input.data(), (1, k), grad_out.data(), (m, 1), 0.0, d_weights.data_mut());
    Ok((d_input, d_weights))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation(input: &DenseArray, kind: Activation) -> DenseArray {
    match kind {
        Activation::Relu => input.map(|v| v.max(0.0)),
        Activation::Sigmoid => input.map(sigmoid),
    }
}

/// Multiplies channel `f` of sample `b` by `scale[b, f]`.
pub fn channel_scale(input: &DenseArray, scale: &DenseArray) -> Result<DenseArray> {
    let (b, c, h, w) = input.dims4()?;
    if scale.shape() != [b, c] {
        return Err(Error::ShapeMismatch {
            op: "channel_scale",
            left: input.shape().to_vec(),
            right: scale.shape().to_vec(),
        });
    }
    let plane = h * w;
    let mut out = input.clone();
    for (chunk, &s) in out.data_mut().chunks_mut(plane).zip(scale.data()) {
        chunk.iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

pub fn concat_channels(a: &DenseArray, b: &DenseArray) -> Result<DenseArray> {
    let (n, ca, h, w) = a.dims4()?;
    let (n2, cb, h2, w2) = b.dims4()?;
    if n != n2 || h != h2 || w != w2 {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let plane = h * w;
    let mut data = Vec::with_capacity((ca + cb) * plane * n);
    for s in 0..n {
        data.extend_from_slice(&a.data()[s * ca * plane..(s + 1) * ca * plane]);
        data.extend_from_slice(&b.data()[s * cb * plane..(s + 1) * cb * plane]);
    }
    DenseArray::from_vec(&[n, ca + cb, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_case() {
        let x = DenseArray::from_vec(&[1, 1, 1, 1], vec![5.0]).unwrap();
        let k = DenseArray::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &k, &DenseArray::zeros(&[1]), Padding::Same).unwrap();
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn conv_counts_overlapping_ones() {
        let x = DenseArray::filled(&[1, 1, 3, 3], 1.0);
        let k = DenseArray::filled(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, &DenseArray::zeros(&[1]), Padding::Same).unwrap();
        assert_eq!(y.at4(0, 0, 1, 1), 9.0);
        assert_eq!(y.at4(0, 0, 0, 0), 4.0);
        assert_eq!(y.at4(0, 0, 0, 1), 6.0);
        let v = conv2d(&x, &k, &DenseArray::zeros(&[1]), Padding::Valid).unwrap();
        assert_eq!(v.shape(), &[1, 1, 1, 1]);
        assert_eq!(v.data(), &[9.0]);
    }

    #[test]
    fn conv_rejects_mismatch_naming_shapes() {
        let x = DenseArray::zeros(&[1, 2, 4, 4]);
        let k = DenseArray::zeros(&[3, 1, 3, 3]);
        let err = conv2d(&x, &k, &DenseArray::zeros(&[3]), Padding::Same).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[3, 1, 3, 3]"), "{msg}");
        let even = DenseArray::zeros(&[1, 2, 2, 2]);
        assert!(conv2d(&x, &even, &DenseArray::zeros(&[1]), Padding::Same).is_err());
    }

    #[test]
    fn pool_small_cases() {
        let x = DenseArray::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = max_pool_2x2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        let c = DenseArray::filled(&[1, 2, 4, 6], 2.5);
        let (y, arg) = max_pool_2x2(&c).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 2.5));
        // ties resolve to the top-left element of each window
        assert_eq!(arg[0], 0);
        assert!(max_pool_2x2(&DenseArray::zeros(&[1, 1, 3, 2])).is_err());
    }

    #[test]
    fn upsample_single_site() {
        let x = DenseArray::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let k = DenseArray::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample_block(&x, &k, &DenseArray::zeros(&[1])).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        let z = upsample_block(&DenseArray::zeros(&[2, 1, 3, 2]), &k, &DenseArray::zeros(&[1])).unwrap();
        assert_eq!(z.shape(), &[2, 1, 6, 4]);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gap_and_dense_small_cases() {
        let x = DenseArray::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
        let c = DenseArray::filled(&[1, 1, 3, 5], -1.25);
        assert_eq!(global_avg_pool(&c).unwrap().data(), &[-1.25]);

        let v = DenseArray::from_vec(&[1, 3], vec![1.0, -2.0, 3.0]).unwrap();
        let mut eye = DenseArray::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(dense(&v, &eye).unwrap(), v);
        assert!(dense(&v, &DenseArray::zeros(&[3, 2])).unwrap().data().iter().all(|&x| x == 0.0));
        assert!(dense(&v, &DenseArray::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn activations() {
        let x = DenseArray::from_vec(&[3], vec![-3.0, 2.0, 0.0]).unwrap();
        assert_eq!(activation(&x, Activation::Relu).data(), &[0.0, 2.0, 0.0]);
        assert_eq!(sigmoid(0.0), 0.5);
        for v in [-20.0, 20.0, -800.0, 800.0] {
            let s = sigmoid(v);
            assert!((0.0..=1.0).contains(&s) && s.is_finite());
        }
        assert!(sigmoid(-20.0) > 0.0 && sigmoid(20.0) < 1.0);
    }
}
