//! Separable Gaussian filtering over the valid region, its adjoint, and
//! 2x2 mean pooling with its adjoint.

/// Normalized 1-d Gaussian taps of odd length `size`.
pub(crate) fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    debug_assert!(size % 2 == 1);
    let r = (size / 2) as f64;
    let mut taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Valid-region correlation of an `h x w` plane with `taps ⊗ taps`.
///
/// Output is `(h - k + 1) x (w - k + 1)`.
pub(crate) fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    // rows first: h x ow
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut tmp[y * ow..(y + 1) * ow];
        for (j, &t) in taps.iter().enumerate() {
            for (o, &s) in out.iter_mut().zip(&row[j..j + ow]) {
                *o += t * s;
            }
        }
    }
    let mut dst = vec![0.0; oh * ow];
    for y in 0..oh {
        let out = &mut dst[y * ow..(y + 1) * ow];
        for (i, &t) in taps.iter().enumerate() {
            let row = &tmp[(y + i) * ow..(y + i + 1) * ow];
            for (o, &s) in out.iter_mut().zip(row) {
                *o += t * s;
            }
        }
    }
    dst
}

/// Adjoint of [`filter_valid`]: scatters an `(h-k+1) x (w-k+1)` map back
/// onto an `h x w` plane.
pub(crate) fn filter_valid_adjoint(g: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..oh {
        let src = &g[y * ow..(y + 1) * ow];
        for (i, &t) in taps.iter().enumerate() {
            let row = &mut tmp[(y + i) * ow..(y + i + 1) * ow];
            for (r, &s) in row.iter_mut().zip(src) {
                *r += t * s;
            }
        }
    }
    let mut dst = vec![0.0; h * w];
    for y in 0..h {
        let src = &tmp[y * ow..(y + 1) * ow];
        let row = &mut dst[y * w..(y + 1) * w];
        for (j, &t) in taps.iter().enumerate() {
            for (r, &s) in row[j..j + ow].iter_mut().zip(src) {
                *r += t * s;
            }
        }
    }
    dst
}

/// 2x2 mean pooling; odd trailing rows/columns are dropped.
pub(crate) fn pool2(src: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (ph, pw) = (h / 2, w / 2);
    let mut dst = vec![0.0; ph * pw];
    for y in 0..ph {
        for x in 0..pw {
            let i = 2 * y * w + 2 * x;
            dst[y * pw + x] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
        }
    }
    (dst, ph, pw)
}

/// Adjoint of [`pool2`], accumulated into `dst` (`h x w`).
pub(crate) fn pool2_adjoint_add(g: &[f64], h: usize, w: usize, dst: &mut [f64]) {
    let (ph, pw) = (h / 2, w / 2);
    for y in 0..ph {
        for x in 0..pw {
            let v = 0.25 * g[y * pw + x];
            let i = 2 * y * w + 2 * x;
            dst[i] += v;
            dst[i + 1] += v;
            dst[i + w] += v;
            dst[i + w + 1] += v;
        }
    }
}
