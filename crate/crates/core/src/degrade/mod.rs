//! Seeded synthetic degradation of clean fundus images.
//!
//! Four factors applied in a fixed order: photometric (contrast and
//! brightness), radial shading, Gaussian blur, additive Gaussian noise.
//! Each stage is skipped entirely when its parameters are neutral, so
//! neutral parameters reproduce the input bit for bit.

mod manifest;

pub use manifest::{build_manifest, DatasetManifest, ManifestEntry, Quality};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ImageTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradeParams {
    pub blur_sigma: f64,
    /// Depth of the radial shading mask `1 - s * r^2`.
    pub illum_strength: f64,
    pub brightness_shift: f64,
    pub contrast_scale: f64,
    pub noise_std: f64,
    /// Maximum offset of the shading center, as a fraction of each side.
    pub center_jitter: f64,
    pub seed: u64,
}

impl Default for DegradeParams {
    fn default() -> Self {
        DegradeParams::neutral(0)
    }
}

impl DegradeParams {
    pub fn neutral(seed: u64) -> Self {
        DegradeParams {
            blur_sigma: 0.0,
            illum_strength: 0.0,
            brightness_shift: 0.0,
            contrast_scale: 1.0,
            noise_std: 0.0,
            center_jitter: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParam(what.to_string()))
            }
        };
        check(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite(), "blur_sigma must be >= 0")?;
        check((0.0..=1.0).contains(&self.illum_strength), "illum_strength must be in [0, 1]")?;
        check(
            (-0.5..=0.5).contains(&self.brightness_shift),
            "brightness_shift must be in [-0.5, 0.5]",
        )?;
        check(
            self.contrast_scale > 0.0 && self.contrast_scale <= 2.0,
            "contrast_scale must be in (0, 2]",
        )?;
        check(self.noise_std >= 0.0 && self.noise_std.is_finite(), "noise_std must be >= 0")?;
        check((0.0..=0.5).contains(&self.center_jitter), "center_jitter must be in [0, 0.5]")
    }
}

/// Applies the degradation recipe `p` to `x`.
pub fn degrade(x: &ImageTensor, p: &DegradeParams) -> Result<ImageTensor> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    // Jitter is always drawn first so the noise stream does not depend on
    // whether shading is enabled.
    let jitter: (f64, f64) = (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));

    let mut out = x.clone();
    if p.contrast_scale != 1.0 || p.brightness_shift != 0.0 {
        let (k, b) = (p.contrast_scale, p.brightness_shift);
        out = out.map(|v| (k * (v - 0.5) + 0.5 + b).clamp(0.0, 1.0));
    }
    if p.illum_strength != 0.0 {
        shade(&mut out, p.illum_strength, p.center_jitter, jitter);
    }
    if p.blur_sigma > 0.0 {
        out = gaussian_blur(&out, p.blur_sigma);
    }
    if p.noise_std > 0.0 {
        let normal = Normal::new(0.0, p.noise_std)
            .map_err(|e| Error::InvalidParam(format!("noise_std: {e}")))?;
        for v in out.as_mut_slice() {
            *v += normal.sample(&mut rng);
        }
    }
    out.clamp01_in_place();
    Ok(out)
}

/// Multiplies by `1 - strength * r^2`, `r` the distance to the (jittered)
/// center over the distance from that center to the farthest corner.
fn shade(img: &mut ImageTensor, strength: f64, jitter: f64, draw: (f64, f64)) {
    let (c, h, w) = img.shape();
    let cy = (h as f64 - 1.0) / 2.0 + jitter * draw.0 * h as f64;
    let cx = (w as f64 - 1.0) / 2.0 + jitter * draw.1 * w as f64;
    let r2max = [(0.0, 0.0), (0.0, w as f64 - 1.0), (h as f64 - 1.0, 0.0), (h as f64 - 1.0, w as f64 - 1.0)]
        .iter()
        .map(|&(y, x)| (y - cy).powi(2) + (x - cx).powi(2))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    for ch in 0..c {
        let plane = img.plane_mut(ch);
        for y in 0..h {
            for x in 0..w {
                let r2 = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)) / r2max;
                plane[y * w + x] *= 1.0 - strength * r2;
            }
        }
    }
}

/// Separable Gaussian blur with radius `ceil(3 sigma)` and replicated edges.
pub fn gaussian_blur(img: &ImageTensor, sigma: f64) -> ImageTensor {
    let r = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);

    let (c, h, w) = img.shape();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut out = ImageTensor::zeros(c, h, w);
    let mut tmp = vec![0.0; h * w];
    for ch in 0..c {
        let src = img.plane(ch);
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(j, t)| t * src[y * w + clampi(x as isize + j as isize - r, w)])
                    .sum();
            }
        }
        let dst = out.plane_mut(ch);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(j, t)| t * tmp[clampi(y as isize + j as isize - r, h) * w + x])
                    .sum();
            }
        }
    }
    out
}

/// Seeded smooth test image: per channel a base level plus four random
/// low-frequency plane waves, clamped to `[0.02, 0.98]`.
pub fn smooth_image(channels: usize, height: usize, width: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ImageTensor::zeros(channels, height, width);
    for ch in 0..channels {
        let base: f64 = rng.gen_range(0.25..0.75);
        let waves: Vec<[f64; 4]> = (0..4)
            .map(|_| {
                let amp = rng.gen_range(0.03..0.12);
                let freq = rng.gen_range(0.5..3.0) * std::f64::consts::TAU;
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                [amp, freq * angle.cos(), freq * angle.sin(), phase]
            })
            .collect();
        let plane = out.plane_mut(ch);
        for y in 0..height {
            let v = y as f64 / height as f64;
            for x in 0..width {
                let u = x as f64 / width as f64;
                let s: f64 = waves.iter().map(|w| w[0] * (w[1] * u + w[2] * v + w[3]).cos()).sum();
                plane[y * width + x] = (base + s).clamp(0.02, 0.98);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagekit::psnr;

    fn smooth(c: usize, n: usize) -> ImageTensor {
        ImageTensor::from_fn(c, n, n, |ch, y, x| {
            0.5 + 0.3 * ((x as f64 * 0.3 + ch as f64).sin() * (y as f64 * 0.2).cos())
        })
    }

    #[test]
    fn neutral_is_bitwise_identity() {
        let x = smooth(3, 20).map(|v| v * 0.999 + 1e-7);
        assert_eq!(degrade(&x, &DegradeParams::neutral(42)).unwrap(), x);
    }

    #[test]
    fn full_shading_darkens_corners() {
        let x = ImageTensor::filled(1, 33, 33, 0.8);
        let p = DegradeParams {
            illum_strength: 1.0,
            ..DegradeParams::neutral(1)
        };
        let y = degrade(&x, &p).unwrap();
        assert!(y.get(0, 0, 0).abs() < 1e-12);
        assert!(y.get(0, 32, 32).abs() < 1e-12);
        assert!((y.get(0, 16, 16) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let x = smooth(3, 16);
        let p = DegradeParams {
            blur_sigma: 1.0,
            illum_strength: 0.4,
            brightness_shift: -0.05,
            contrast_scale: 0.8,
            noise_std: 0.03,
            center_jitter: 0.1,
            seed: 9,
        };
        assert_eq!(degrade(&x, &p).unwrap(), degrade(&x, &p).unwrap());
        let q = DegradeParams { seed: 10, ..p.clone() };
        assert_ne!(degrade(&x, &p).unwrap(), degrade(&x, &q).unwrap());
    }

    #[test]
    fn damage_grows_with_noise() {
        let x = smooth(3, 32);
        let mut last = f64::INFINITY;
        for noise_std in [0.0, 0.02, 0.05, 0.1] {
            let p = DegradeParams {
                blur_sigma: 0.8,
                noise_std,
                ..DegradeParams::neutral(3)
            };
            let v = psnr(&x, &degrade(&x, &p).unwrap()).unwrap();
            assert!(v <= last, "{noise_std}: {v} > {last}");
            last = v;
        }
    }

    #[test]
    fn blur_keeps_constants() {
        let x = ImageTensor::filled(1, 9, 7, 0.25);
        let y = gaussian_blur(&x, 1.5);
        assert!(y.as_slice().iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn out_of_range_params() {
        let x = smooth(1, 8);
        for p in [
            DegradeParams { illum_strength: 1.5, ..DegradeParams::neutral(0) },
            DegradeParams { contrast_scale: 0.0, ..DegradeParams::neutral(0) },
            DegradeParams { brightness_shift: 0.7, ..DegradeParams::neutral(0) },
            DegradeParams { noise_std: -0.1, ..DegradeParams::neutral(0) },
        ] {
            assert!(degrade(&x, &p).is_err());
        }
    }
}
