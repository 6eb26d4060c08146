//! Image I/O, preprocessing and full-reference similarity metrics.

mod filter;
mod io;
mod ssim;

pub use io::{load_image, preprocess, save_image, to_dynamic_image};
pub use ssim::{fidelity_loss, ms_ssim, ms_ssim_with_grad, ssim, MsSsimResult, SsimParams};

use crate::error::Result;
use crate::ImageTensor;

/// PSNR reported when two images are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Peak signal-to-noise ratio in dB at dynamic range 1.
///
/// MSE is averaged over every channel and pixel; zero MSE yields
/// [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let n = a.len() as f64;
    let mse = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}
