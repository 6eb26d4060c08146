//! SSIM and multi-scale SSIM with an exact analytic gradient.
//!
//! Per scale, local statistics come from a Gaussian window applied over the
//! valid region only. Scales are linked by 2x2 mean pooling. Every scale
//! contributes its mean contrast-structure term; the coarsest scale
//! contributes the mean of luminance x contrast-structure instead. The
//! per-scale terms are combined as `prod_j P_j^{w_j}`. Color images are
//! scored per channel and averaged.
//!
//! The gradient is the adjoint of exactly this forward computation, so it
//! agrees with finite differences up to rounding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::filter::{filter_valid, filter_valid_adjoint, gaussian_taps, pool2, pool2_adjoint_add};
use crate::error::{Error, Result};
use crate::ImageTensor;

/// Canonical five-scale MS-SSIM exponents as usually tabulated. They sum to
/// 1.0001; [`SsimParams::default`] rescales them to sum to one.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window_size: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    /// Per-scale exponents, finest first.
    pub scale_weights: Vec<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window_size: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            scale_weights: {
                let sum: f64 = MS_SSIM_WEIGHTS.iter().sum();
                MS_SSIM_WEIGHTS.iter().map(|w| w / sum).collect()
            },
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 || self.window_size % 2 == 0 {
            return Err(Error::InvalidParam(format!(
                "window_size must be odd and >= 3, got {}",
                self.window_size
            )));
        }
        if !(self.window_sigma > 0.0) || !(self.dynamic_range > 0.0) {
            return Err(Error::InvalidParam(
                "window_sigma and dynamic_range must be positive".into(),
            ));
        }
        if self.scale_weights.is_empty() || self.scale_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidParam("scale weights must be positive".into()));
        }
        let sum: f64 = self.scale_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParam(format!(
                "scale weights sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

/// MS-SSIM value and its gradient with respect to the first argument.
#[derive(Debug, Clone)]
pub struct MsSsimResult {
    pub value: f64,
    pub grad: ImageTensor,
}

/// Mean SSIM over the valid window positions, averaged over channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor, p: &SsimParams) -> Result<f64> {
    p.validate()?;
    a.ensure_same_shape(b)?;
    let (c, h, w) = a.shape();
    if h < p.window_size || w < p.window_size {
        return Err(Error::TooSmall(format!(
            "{h}x{w} is smaller than the {0}x{0} window",
            p.window_size
        )));
    }
    let taps = gaussian_taps(p.window_size, p.window_sigma);
    let total: f64 = (0..c)
        .into_par_iter()
        .map(|ch| {
            scale_term(a.plane(ch), b.plane(ch), h, w, &taps, p.c1(), p.c2(), true, false).0
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / c as f64)
}

/// MS-SSIM value only.
pub fn ms_ssim(a: &ImageTensor, b: &ImageTensor, p: &SsimParams) -> Result<f64> {
    Ok(ms_ssim_impl(a, b, p, false)?.0)
}

/// MS-SSIM value and exact gradient with respect to `a`.
///
/// Inputs whose shorter side cannot be halved `n - 1` times while staying at
/// least 2 pixels use the leading scales only, with their exponents
/// renormalized to sum to one. At each scale the window shrinks to the
/// largest odd size that fits.
pub fn ms_ssim_with_grad(a: &ImageTensor, b: &ImageTensor, p: &SsimParams) -> Result<MsSsimResult> {
    let (value, grad) = ms_ssim_impl(a, b, p, true)?;
    Ok(MsSsimResult {
        value,
        grad: grad.expect("gradient requested"),
    })
}

/// `1 - ms_ssim(x, y)` and its gradient with respect to `x`.
pub fn fidelity_loss(x: &ImageTensor, y: &ImageTensor, p: &SsimParams) -> Result<(f64, ImageTensor)> {
    let r = ms_ssim_with_grad(x, y, p)?;
    Ok((1.0 - r.value, r.grad.map(|g| -g)))
}

fn scale_count(min_side: usize, max_scales: usize) -> usize {
    if min_side < 2 {
        return 0;
    }
    // largest n with min_side >> (n - 1) >= 2
    let log2 = (usize::BITS - 1 - min_side.leading_zeros()) as usize;
    log2.min(max_scales)
}

fn ms_ssim_impl(
    a: &ImageTensor,
    b: &ImageTensor,
    p: &SsimParams,
    want_grad: bool,
) -> Result<(f64, Option<ImageTensor>)> {
    p.validate()?;
    a.ensure_same_shape(b)?;
    let (c, h, w) = a.shape();
    let n = scale_count(h.min(w), p.scale_weights.len());
    if n == 0 {
        return Err(Error::TooSmall(format!("{h}x{w} admits no MS-SSIM scale")));
    }
    let norm: f64 = p.scale_weights[..n].iter().sum();
    let weights: Vec<f64> = p.scale_weights[..n].iter().map(|w| w / norm).collect();

    let per_channel: Vec<(f64, Option<Vec<f64>>)> = (0..c)
        .into_par_iter()
        .map(|ch| channel_ms_ssim(a.plane(ch), b.plane(ch), h, w, p, &weights, want_grad))
        .collect();

    let value = per_channel.iter().map(|(v, _)| v).sum::<f64>() / c as f64;
    let grad = want_grad.then(|| {
        let mut data = Vec::with_capacity(c * h * w);
        for (_, g) in per_channel {
            data.extend(g.expect("gradient").into_iter().map(|v| v / c as f64));
        }
        ImageTensor::from_vec(c, h, w, data).expect("gradient shape")
    });
    Ok((value, grad))
}

fn channel_ms_ssim(
    a: &[f64],
    b: &[f64],
    h: usize,
    w: usize,
    p: &SsimParams,
    weights: &[f64],
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let n = weights.len();
    let mut dims = Vec::with_capacity(n);
    let mut terms = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    let (mut ca, mut cb) = (a.to_vec(), b.to_vec());
    let (mut hh, mut ww) = (h, w);
    for j in 0..n {
        let mut k = p.window_size.min(hh).min(ww);
        if k % 2 == 0 {
            k -= 1;
        }
        let taps = gaussian_taps(k, p.window_sigma);
        let last = j + 1 == n;
        let (t, g) = scale_term(&ca, &cb, hh, ww, &taps, p.c1(), p.c2(), last, want_grad);
        dims.push((hh, ww));
        terms.push(t);
        grads.push(g);
        if !last {
            let (pa, ph, pw) = pool2(&ca, hh, ww);
            let (pb, _, _) = pool2(&cb, hh, ww);
            ca = pa;
            cb = pb;
            hh = ph;
            ww = pw;
        }
    }

    if terms.iter().any(|&t| t <= 0.0) {
        return (0.0, want_grad.then(|| vec![0.0; h * w]));
    }
    let value: f64 = terms
        .iter()
        .zip(weights)
        .map(|(t, wt)| t.powf(*wt))
        .product();
    if !want_grad {
        return (value, None);
    }

    // Backpropagate from the coarsest scale to the finest.
    let mut acc: Vec<f64> = Vec::new();
    for j in (0..n).rev() {
        let (hh, ww) = dims[j];
        let coef = weights[j] * value / terms[j];
        let mut g: Vec<f64> = grads[j]
            .take()
            .expect("scale gradient")
            .into_iter()
            .map(|v| coef * v)
            .collect();
        if j + 1 < n {
            pool2_adjoint_add(&acc, hh, ww, &mut g);
        }
        acc = g;
    }
    (value, Some(acc))
}

/// Mean over valid window positions of `cs` or, with `luminance`, of `l * cs`.
/// Optionally returns the gradient of that mean with respect to `a`.
#[allow(clippy::too_many_arguments)]
fn scale_term(
    a: &[f64],
    b: &[f64],
    h: usize,
    w: usize,
    taps: &[f64],
    c1: f64,
    c2: f64,
    luminance: bool,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, h, w, taps);
    let mu_b = filter_valid(b, h, w, taps);
    let s_aa = filter_valid(&aa, h, w, taps);
    let s_bb = filter_valid(&bb, h, w, taps);
    let s_ab = filter_valid(&ab, h, w, taps);
    let count = mu_a.len();
    let inv = 1.0 / count as f64;

    let mut sum = 0.0;
    let (mut d_mu, mut d_saa, mut d_sab) = if want_grad {
        (vec![0.0; count], vec![0.0; count], vec![0.0; count])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for i in 0..count {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let mab = ma * mb;
        let var_a = s_aa[i] - ma * ma;
        let var_b = s_bb[i] - mb * mb;
        let cov = s_ab[i] - mab;
        let cs_den = var_a + var_b + c2;
        let cs = (2.0 * cov + c2) / cs_den;
        // partials of the map wrt (mu_a direct, var_a, cov)
        let (m, dm_mu, dm_var, dm_cov) = if luminance {
            let l_den = ma * ma + mb * mb + c1;
            let l = (2.0 * mab + c1) / l_den;
            let dl_mu = (2.0 * mb - 2.0 * ma * l) / l_den;
            (l * cs, cs * dl_mu, -l * cs / cs_den, 2.0 * l / cs_den)
        } else {
            (cs, 0.0, -cs / cs_den, 2.0 / cs_den)
        };
        sum += m;
        if want_grad {
            d_mu[i] = inv * (dm_mu - 2.0 * ma * dm_var - mb * dm_cov);
            d_saa[i] = inv * dm_var;
            d_sab[i] = inv * dm_cov;
        }
    }
    let value = sum * inv;
    if !want_grad {
        return (value, None);
    }
    let g_mu = filter_valid_adjoint(&d_mu, h, w, taps);
    let g_saa = filter_valid_adjoint(&d_saa, h, w, taps);
    let g_sab = filter_valid_adjoint(&d_sab, h, w, taps);
    let grad = (0..h * w)
        .map(|i| g_mu[i] + 2.0 * a[i] * g_saa[i] + b[i] * g_sab[i])
        .collect();
    (value, Some(grad))
}
