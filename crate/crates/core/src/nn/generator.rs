use std::collections::HashMap;

use super::arch::GeneratorSpec;
use super::conv::{conv2d_forward, Kernel4};
use super::eca::eca_forward;
use super::spectral::verify_spectral_norm;
use super::weights::{validate, LayerKind, LoadOptions, WeightManifest};
use crate::error::{Error, Result};
use crate::ImageTensor;

const LEAKY_SLOPE: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;

struct ConvLayer {
    kernel: Kernel4,
    bias: Vec<f64>,
}

struct NormLayer {
    scale: Vec<f64>,
    shift: Vec<f64>,
}

/// UNet generator ready for inference. Immutable after construction.
pub struct Generator {
    spec: GeneratorSpec,
    convs: HashMap<String, ConvLayer>,
    norms: HashMap<String, NormLayer>,
    ecas: HashMap<String, Vec<f64>>,
}

impl Generator {
    /// Builds a generator from a manifest whose layout matches `spec`.
    ///
    /// Only the structure is checked here; spectral norms are verified by
    /// [`super::load_weights`].
    pub fn new(spec: GeneratorSpec, manifest: &WeightManifest) -> Result<Self> {
        let parsed = validate(
            manifest,
            &LoadOptions {
                check_spectral_norm: false,
                ..LoadOptions::default()
            },
        )?;
        if parsed != spec {
            return Err(Error::UnknownArch(format!(
                "manifest is {}, spec is {}",
                manifest.arch_id, spec
            )));
        }
        let mut convs = HashMap::new();
        let mut norms = HashMap::new();
        let mut ecas = HashMap::new();
        let f64s = |d: &[f32]| d.iter().map(|&v| v as f64).collect::<Vec<f64>>();
        for r in &manifest.records {
            match r.kind {
                LayerKind::Conv2d => {
                    let prefix = r.name.trim_end_matches(".weight").to_string();
                    let bias = manifest
                        .record(&format!("{prefix}.bias"))
                        .map(|b| f64s(&b.data))
                        .ok_or_else(|| Error::LayerShape {
                            layer: r.name.clone(),
                            reason: "missing bias".into(),
                        })?;
                    let kernel = r.kernel().expect("validated conv record");
                    convs.insert(prefix, ConvLayer { kernel, bias });
                }
                LayerKind::Norm => {
                    let c = r.shape[1];
                    let d = f64s(&r.data);
                    norms.insert(
                        r.name.clone(),
                        NormLayer {
                            scale: d[..c].to_vec(),
                            shift: d[c..].to_vec(),
                        },
                    );
                }
                LayerKind::Eca => {
                    ecas.insert(r.name.clone(), f64s(&r.data));
                }
                LayerKind::Bias => {}
            }
        }
        Ok(Generator {
            spec,
            convs,
            norms,
            ecas,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    /// Enhances `x`; the output has the same shape with values in `[0, 1]`.
    pub fn forward(&self, x: &ImageTensor) -> Result<ImageTensor> {
        let (c, h, w) = x.shape();
        let unit = 1usize << self.spec.depth;
        if c != self.spec.image_channels || h % unit != 0 || w % unit != 0 || h == 0 || w == 0 {
            return Err(Error::shape(
                format!(
                    "{} channels, sides divisible by {unit}",
                    self.spec.image_channels
                ),
                format!("{c}x{h}x{w}"),
            ));
        }
        let mut feat = x.clone();
        let mut skips = Vec::with_capacity(self.spec.depth);
        for i in 0..self.spec.depth {
            feat = self.conv_block(&format!("enc{i}"), &feat)?;
            feat = self.residual_block(&format!("enc{i}.rb"), &feat)?;
            skips.push(feat.clone());
            feat = leaky_relu(self.conv(&format!("enc{i}.down"), &feat, 2, 1)?);
        }
        feat = self.conv_block("mid", &feat)?;
        feat = self.residual_block("mid.rb", &feat)?;
        for i in (0..self.spec.depth).rev() {
            feat = upsample2(&feat);
            feat = leaky_relu(self.conv(&format!("dec{i}.up"), &feat, 1, 1)?);
            feat = concat(&feat, &skips[i]);
            feat = self.conv_block(&format!("dec{i}"), &feat)?;
            feat = self.residual_block(&format!("dec{i}.rb"), &feat)?;
        }
        let out = self.conv("out", &feat, 1, 0)?;
        Ok(if self.spec.residual_output {
            x.zip_map(&out, |a, d| (a + d).clamp(0.0, 1.0))
        } else {
            out.clamp01()
        })
    }

    fn conv(&self, prefix: &str, x: &ImageTensor, stride: usize, padding: usize) -> Result<ImageTensor> {
        let layer = &self.convs[prefix];
        conv2d_forward(x, &layer.kernel, &layer.bias, stride, padding)
    }

    fn norm(&self, name: &str, mut x: ImageTensor) -> ImageTensor {
        if !self.spec.normalize {
            return x;
        }
        let layer = &self.norms[name];
        for c in 0..x.channels() {
            let plane = x.plane_mut(c);
            let n = plane.len() as f64;
            let mean = plane.iter().sum::<f64>() / n;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let k = layer.scale[c] / (var + NORM_EPS).sqrt();
            let b = layer.shift[c];
            plane.iter_mut().for_each(|v| *v = (*v - mean) * k + b);
        }
        x
    }

    /// conv 3x3 -> norm -> leaky ReLU
    fn conv_block(&self, prefix: &str, x: &ImageTensor) -> Result<ImageTensor> {
        let y = self.conv(&format!("{prefix}.conv"), x, 1, 1)?;
        Ok(leaky_relu(self.norm(&format!("{prefix}.norm"), y)))
    }

    /// `x + eca(norm(conv(lrelu(norm(conv(x))))))`
    fn residual_block(&self, prefix: &str, x: &ImageTensor) -> Result<ImageTensor> {
        let r = self.conv(&format!("{prefix}.conv1"), x, 1, 1)?;
        let r = leaky_relu(self.norm(&format!("{prefix}.norm1"), r));
        let r = self.conv(&format!("{prefix}.conv2"), &r, 1, 1)?;
        let r = self.norm(&format!("{prefix}.norm2"), r);
        let r = eca_forward(&r, &self.ecas[&format!("{prefix}.eca")])?;
        Ok(x.zip_map(&r, |a, b| a + b))
    }

    /// Analytic upper bound on the Lipschitz constant of the forward map in
    /// the l2 norm, or `None` when instance normalization makes it unbounded.
    ///
    /// A conv with reshaped-matrix norm `s` and a `kh x kw` kernel is bounded
    /// by `s * sqrt(kh * kw)`; nearest upsampling by 2; a concatenation of
    /// branches with bounds `a` and `b` by `sqrt(a^2 + b^2)`; residual blocks
    /// by `1 + branch`. Leaky ReLU, the final clamp, and the ECA rescaling
    /// count as 1.
    pub fn lipschitz_bound(&self) -> Option<f64> {
        if self.spec.normalize {
            return None;
        }
        let conv = |p: &str| {
            let k = &self.convs[p].kernel;
            verify_spectral_norm(k, 1e-6, 200) * ((k.kh * k.kw) as f64).sqrt()
        };
        let rb = |p: &str| 1.0 + conv(&format!("{p}.conv1")) * conv(&format!("{p}.conv2"));
        let mut lip = 1.0;
        let mut skips = Vec::new();
        for i in 0..self.spec.depth {
            lip *= conv(&format!("enc{i}.conv")) * rb(&format!("enc{i}.rb"));
            skips.push(lip);
            lip *= conv(&format!("enc{i}.down"));
        }
        lip *= conv("mid.conv") * rb("mid.rb");
        for i in (0..self.spec.depth).rev() {
            lip *= 2.0 * conv(&format!("dec{i}.up"));
            lip = lip.hypot(skips[i]);
            lip *= conv(&format!("dec{i}.conv")) * rb(&format!("dec{i}.rb"));
        }
        lip *= conv("out");
        Some(if self.spec.residual_output { 1.0 + lip } else { lip })
    }
}

/// Free-function form of [`Generator::forward`].
pub fn generator_forward(spec: &GeneratorSpec, weights: &WeightManifest, x: &ImageTensor) -> Result<ImageTensor> {
    Generator::new(*spec, weights)?.forward(x)
}

fn leaky_relu(mut x: ImageTensor) -> ImageTensor {
    x.as_mut_slice()
        .iter_mut()
        .for_each(|v| {
            if *v < 0.0 {
                *v *= LEAKY_SLOPE
            }
        });
    x
}

fn upsample2(x: &ImageTensor) -> ImageTensor {
    let (c, h, w) = x.shape();
    ImageTensor::from_fn(c, 2 * h, 2 * w, |ch, y, xx| x.get(ch, y / 2, xx / 2))
}

fn concat(a: &ImageTensor, b: &ImageTensor) -> ImageTensor {
    let (ca, h, w) = a.shape();
    let cb = b.channels();
    let mut data = Vec::with_capacity((ca + cb) * h * w);
    data.extend_from_slice(a.as_slice());
    data.extend_from_slice(b.as_slice());
    ImageTensor::from_vec(ca + cb, h, w, data).expect("concat shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(normalize: bool, residual_output: bool) -> GeneratorSpec {
        GeneratorSpec {
            depth: 2,
            base_channels: 4,
            image_channels: 3,
            normalize,
            residual_output,
            ..GeneratorSpec::default()
        }
    }

    fn random_image(seed: u64, c: usize, n: usize) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(c, n, n, |_, _, _| rng.gen())
    }

    #[test]
    fn zero_weights_residual_is_identity() {
        let spec = small(true, true);
        let g = Generator::new(spec, &WeightManifest::zeros(&spec)).unwrap();
        let x = random_image(1, 3, 16);
        assert_eq!(g.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_weights_absolute_is_black() {
        let spec = small(false, false);
        let g = Generator::new(spec, &WeightManifest::zeros(&spec)).unwrap();
        let y = g.forward(&random_image(2, 3, 8)).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_indivisible_side_and_wrong_channels() {
        let spec = small(true, true);
        let g = Generator::new(spec, &WeightManifest::zeros(&spec)).unwrap();
        assert!(g.forward(&random_image(3, 3, 10)).is_err());
        assert!(g.forward(&random_image(3, 1, 8)).is_err());
    }

    #[test]
    fn spec_mismatch_rejected() {
        let spec = small(true, true);
        let other = small(false, true);
        assert!(Generator::new(other, &WeightManifest::zeros(&spec)).is_err());
    }

    #[test]
    fn helpers() {
        let x = ImageTensor::from_fn(1, 2, 2, |_, y, x| (2 * y + x) as f64);
        let up = upsample2(&x);
        assert_eq!(up.shape(), (1, 4, 4));
        assert_eq!(up.get(0, 3, 1), 2.0);
        let cat = concat(&x, &x);
        assert_eq!(cat.channels(), 2);
        let l = leaky_relu(ImageTensor::from_vec(1, 1, 2, vec![-1.0, 2.0]).unwrap());
        assert_eq!(l.as_slice(), &[-0.2, 2.0]);
    }
}
