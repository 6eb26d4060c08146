use crate::error::{Error, Result};
use crate::ImageTensor;

/// Adaptive 1-d kernel length for `channels` feature channels.
///
/// `t = |(log2(C) + b) / gamma|`, truncated, then bumped to the next odd
/// value when even, i.e. the odd integer nearest to `t` with ties upward.
pub fn eca_kernel_size(channels: usize, gamma: usize, b: usize) -> usize {
    let t = (((channels as f64).log2() + b as f64) / gamma as f64).abs() as usize;
    if t % 2 == 1 {
        t
    } else {
        t + 1
    }
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Per-channel attention weights: global average pool, zero-padded 1-d
/// convolution across channels, logistic sigmoid.
pub fn eca_weights(input: &ImageTensor, kernel1d: &[f64]) -> Result<Vec<f64>> {
    if kernel1d.len() % 2 == 0 {
        return Err(Error::shape("odd ECA kernel length", kernel1d.len()));
    }
    let c = input.channels();
    let pooled: Vec<f64> = (0..c)
        .map(|ch| {
            let p = input.plane(ch);
            p.iter().sum::<f64>() / p.len() as f64
        })
        .collect();
    let r = kernel1d.len() / 2;
    Ok((0..c)
        .map(|ch| {
            let mut s = 0.0;
            for (j, &k) in kernel1d.iter().enumerate() {
                let src = ch as isize + j as isize - r as isize;
                if src >= 0 && (src as usize) < c {
                    s += k * pooled[src as usize];
                }
            }
            sigmoid(s)
        })
        .collect())
}

/// Efficient channel attention: rescales each channel by its attention weight.
pub fn eca_forward(input: &ImageTensor, kernel1d: &[f64]) -> Result<ImageTensor> {
    let att = eca_weights(input, kernel1d)?;
    let mut out = input.clone();
    for (ch, a) in att.into_iter().enumerate() {
        out.plane_mut(ch).iter_mut().for_each(|v| *v *= a);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_sizes_follow_adaptive_rule() {
        assert_eq!(eca_kernel_size(8, 2, 1), 3);
        assert_eq!(eca_kernel_size(16, 2, 1), 3);
        assert_eq!(eca_kernel_size(32, 2, 1), 3);
        assert_eq!(eca_kernel_size(64, 2, 1), 3);
        assert_eq!(eca_kernel_size(128, 2, 1), 5);
        assert_eq!(eca_kernel_size(256, 2, 1), 5);
        assert_eq!(eca_kernel_size(512, 2, 1), 5);
        assert_eq!(eca_kernel_size(2, 2, 1), 1);
    }

    #[test]
    fn zero_kernel_halves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = ImageTensor::from_fn(5, 4, 4, |_, _, _| rng.gen());
        let y = eca_forward(&x, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(y, x.map(|v| 0.5 * v));
    }

    #[test]
    fn constant_channels_closed_form() {
        let c = 0.3;
        let x = ImageTensor::filled(6, 3, 3, c);
        // length-1 kernel: every channel sees the full kernel sum
        let y = eca_forward(&x, &[0.8]).unwrap();
        let a = sigmoid(c * 0.8);
        assert!(y.as_slice().iter().all(|&v| (v - c * a).abs() < 1e-15));

        // zero padding: interior channels see the full sum s, edge channels
        // lose the out-of-range tap
        let k = [0.5, -1.0, 2.0];
        let att = eca_weights(&x, &k).unwrap();
        let s: f64 = k.iter().sum();
        for &w in &att[1..5] {
            assert!((w - sigmoid(c * s)).abs() < 1e-15);
        }
        assert!((att[0] - sigmoid(c * (s - 0.5))).abs() < 1e-15);
        assert!((att[5] - sigmoid(c * (s - 2.0))).abs() < 1e-15);
    }

    #[test]
    fn matches_naive_per_channel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let c = rng.gen_range(1..12);
            let (h, w) = (rng.gen_range(1..6), rng.gen_range(1..6));
            let klen = 2 * rng.gen_range(0..3) + 1;
            let x = ImageTensor::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0));
            let k: Vec<f64> = (0..klen).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = eca_forward(&x, &k).unwrap();
            for ch in 0..c {
                let mut s = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let src = ch as isize + j as isize - (klen / 2) as isize;
                    if (0..c as isize).contains(&src) {
                        let mut mean = 0.0;
                        for yy in 0..h {
                            for xx in 0..w {
                                mean += x.get(src as usize, yy, xx);
                            }
                        }
                        s += kv * mean / (h * w) as f64;
                    }
                }
                let a = 1.0 / (1.0 + (-s).exp());
                for yy in 0..h {
                    for xx in 0..w {
                        assert!((y.get(ch, yy, xx) - a * x.get(ch, yy, xx)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn even_kernel_rejected() {
        let x = ImageTensor::zeros(3, 2, 2);
        assert!(eca_forward(&x, &[1.0, 1.0]).is_err());
    }
}
