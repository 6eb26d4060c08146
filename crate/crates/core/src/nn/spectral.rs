//! Top singular value of a convolution kernel by power iteration.

use super::conv::Kernel4;

/// Estimates the largest singular value of `kernel` reshaped to
/// `(out, in * kh * kw)`.
///
/// Power iteration on `W^T W` from the normalized all-ones vector. Runs at
/// least `iters` rounds and keeps going (up to `100 * iters`) while
/// successive estimates still differ by more than `tol * 1e-3` relative.
/// A zero matrix yields 0.
pub fn verify_spectral_norm(kernel: &Kernel4, tol: f64, iters: usize) -> f64 {
    spectral_norm(&kernel.data, kernel.out_channels, kernel.fan_in(), tol, iters)
}

/// Same as [`verify_spectral_norm`] for a plain row-major `rows x cols` matrix.
pub fn spectral_norm(w: &[f64], rows: usize, cols: usize, tol: f64, iters: usize) -> f64 {
    debug_assert_eq!(w.len(), rows * cols);
    if rows == 0 || cols == 0 || w.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let mut v = vec![1.0 / (cols as f64).sqrt(); cols];
    let mut u = vec![0.0; rows];
    let mut sigma = 0.0;
    let max_iters = iters.max(1) * 100;
    for it in 0..max_iters {
        // u = W v
        for (r, ur) in u.iter_mut().enumerate() {
            *ur = w[r * cols..(r + 1) * cols]
                .iter()
                .zip(&v)
                .map(|(a, b)| a * b)
                .sum();
        }
        let next = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if next == 0.0 {
            return 0.0;
        }
        // v = W^T u / |W^T u|
        v.iter_mut().for_each(|x| *x = 0.0);
        for (r, &ur) in u.iter().enumerate() {
            for (vc, &wc) in v.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *vc += wc * ur;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return next;
        }
        v.iter_mut().for_each(|x| *x /= n);
        let converged = (next - sigma).abs() <= tol * 1e-3 * next;
        sigma = next;
        if it + 1 >= iters && converged {
            break;
        }
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_1x1_convs() {
        let mut k = Kernel4::zeros(3, 3, 1, 1);
        k.data[0] = 3.0;
        k.data[4] = 1.0;
        k.data[8] = 0.5;
        assert!((verify_spectral_norm(&k, 1e-3, 50) - 3.0).abs() < 1e-3);
    }

    #[test]
    fn zero_kernel_is_zero() {
        assert_eq!(verify_spectral_norm(&Kernel4::zeros(4, 2, 3, 3), 1e-3, 50), 0.0);
    }

    #[test]
    fn rank_one_matrix() {
        // outer product of (1, 2) and (2, 2, 1): sigma = sqrt(5) * 3
        let w = [2.0, 2.0, 1.0, 4.0, 4.0, 2.0];
        assert!((spectral_norm(&w, 2, 3, 1e-3, 50) - 5f64.sqrt() * 3.0).abs() < 1e-9);
    }
}
