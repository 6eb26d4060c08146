use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ImageTensor;

/// Convolution weights laid out `[out, in, kh, kw]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel4 {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub data: Vec<f64>,
}

impl Kernel4 {
    pub fn new(out_channels: usize, in_channels: usize, kh: usize, kw: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != out_channels * in_channels * kh * kw {
            return Err(Error::shape(
                format!("[{out_channels}, {in_channels}, {kh}, {kw}]"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Kernel4 {
            out_channels,
            in_channels,
            kh,
            kw,
            data,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kh: usize, kw: usize) -> Self {
        Kernel4 {
            out_channels,
            in_channels,
            kh,
            kw,
            data: vec![0.0; out_channels * in_channels * kh * kw],
        }
    }

    #[inline]
    pub fn at(&self, o: usize, i: usize, y: usize, x: usize) -> f64 {
        self.data[((o * self.in_channels + i) * self.kh + y) * self.kw + x]
    }

    /// Number of columns of the `(out, in * kh * kw)` reshaped matrix.
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }
}

/// Output extent of a convolution along one axis.
#[inline]
pub fn conv_out_len(n: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    (n + 2 * padding).checked_sub(k).map(|v| v / stride + 1)
}

/// Cross-correlation with zero padding, `out[o] = bias[o] + sum_i W[o, i] * in[i]`.
pub fn conv2d_forward(
    input: &ImageTensor,
    kernel: &Kernel4,
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> Result<ImageTensor> {
    let (cin, h, w) = input.shape();
    if cin != kernel.in_channels {
        return Err(Error::shape(
            format!("{} input channels", kernel.in_channels),
            cin,
        ));
    }
    if bias.len() != kernel.out_channels {
        return Err(Error::shape(
            format!("{} bias values", kernel.out_channels),
            bias.len(),
        ));
    }
    if stride == 0 {
        return Err(Error::InvalidParam("stride must be >= 1".into()));
    }
    let (oh, ow) = match (
        conv_out_len(h, kernel.kh, stride, padding),
        conv_out_len(w, kernel.kw, stride, padding),
    ) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
        _ => {
            return Err(Error::shape(
                format!("input at least {}x{} after padding", kernel.kh, kernel.kw),
                format!("{h}x{w} with padding {padding}"),
            ))
        }
    };

    let mut out = ImageTensor::zeros(kernel.out_channels, oh, ow);
    let plane_len = oh * ow;
    out.as_mut_slice()
        .par_chunks_mut(plane_len)
        .enumerate()
        .for_each(|(o, dst)| {
            dst.fill(bias[o]);
            for i in 0..cin {
                let src = input.plane(i);
                for ky in 0..kernel.kh {
                    for kx in 0..kernel.kw {
                        let wv = kernel.at(o, i, ky, kx);
                        if wv == 0.0 {
                            continue;
                        }
                        accumulate_tap(dst, src, (h, w), (oh, ow), (ky, kx), stride, padding, wv);
                    }
                }
            }
        });
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate_tap(
    dst: &mut [f64],
    src: &[f64],
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    (ky, kx): (usize, usize),
    stride: usize,
    padding: usize,
    wv: f64,
) {
    // valid output range along x: 0 <= ox*stride + kx - padding < w
    let lo = padding.saturating_sub(kx).div_ceil(stride);
    let hi = if w + padding > kx {
        ((w + padding - kx - 1) / stride + 1).min(ow)
    } else {
        0
    };
    if lo >= hi {
        return;
    }
    for oy in 0..oh {
        let iy = oy * stride + ky;
        if iy < padding || iy - padding >= h {
            continue;
        }
        let row = &src[(iy - padding) * w..(iy - padding + 1) * w];
        let out = &mut dst[oy * ow..(oy + 1) * ow];
        let x0 = lo * stride + kx - padding;
        if stride == 1 {
            let n = hi - lo;
            for (d, s) in out[lo..hi].iter_mut().zip(&row[x0..x0 + n]) {
                *d += wv * s;
            }
        } else {
            for (j, d) in out[lo..hi].iter_mut().enumerate() {
                *d += wv * row[x0 + j * stride];
            }
        }
    }
}
