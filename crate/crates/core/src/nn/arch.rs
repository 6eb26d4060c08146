//! Generator hyperparameters, the architecture id that pins them, and the
//! ordered layer plan every weight file must follow.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::eca::eca_kernel_size;
use super::weights::LayerKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub depth: usize,
    pub base_channels: usize,
    pub image_channels: usize,
    pub eca_gamma: usize,
    pub eca_b: usize,
    /// Instance normalization inside encoder / decoder blocks.
    pub normalize: bool,
    /// Output is `clamp(x + delta)` rather than `clamp(raw)`.
    pub residual_output: bool,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            depth: 4,
            base_channels: 32,
            image_channels: 3,
            eca_gamma: 2,
            eca_b: 1,
            normalize: true,
            residual_output: true,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.base_channels < 1 || self.eca_gamma < 1 {
            return Err(Error::InvalidParam(format!(
                "depth, base_channels and eca_gamma must be >= 1 in {self}"
            )));
        }
        if !matches!(self.image_channels, 1 | 3) {
            return Err(Error::InvalidParam(format!(
                "image_channels must be 1 or 3, got {}",
                self.image_channels
            )));
        }
        Ok(())
    }

    /// Feature channels at encoder stage `i` (`i == depth` is the bottleneck).
    pub fn channels_at(&self, i: usize) -> usize {
        self.base_channels << i
    }

    /// Canonical id, e.g. `unet-eca-d4-c32-i3-g2-b1-in-res`.
    pub fn arch_id(&self) -> String {
        self.to_string()
    }

    pub fn parse_arch_id(id: &str) -> Result<Self> {
        let bad = || Error::UnknownArch(id.to_string());
        let parts: Vec<&str> = id.split('-').collect();
        if parts.len() != 9 || parts[0] != "unet" || parts[1] != "eca" {
            return Err(bad());
        }
        let num = |s: &str, prefix: char| -> Result<usize> {
            s.strip_prefix(prefix)
                .and_then(|v| v.parse().ok())
                .ok_or_else(bad)
        };
        let spec = GeneratorSpec {
            depth: num(parts[2], 'd')?,
            base_channels: num(parts[3], 'c')?,
            image_channels: num(parts[4], 'i')?,
            eca_gamma: num(parts[5], 'g')?,
            eca_b: num(parts[6], 'b')?,
            normalize: match parts[7] {
                "in" => true,
                "nn" => false,
                _ => return Err(bad()),
            },
            residual_output: match parts[8] {
                "res" => true,
                "abs" => false,
                _ => return Err(bad()),
            },
        };
        spec.validate().map_err(|_| bad())?;
        Ok(spec)
    }

    /// Ordered `(name, kind, shape)` of every record the weight file holds.
    pub fn layer_plan(&self) -> Vec<LayerDesc> {
        let mut plan = Vec::new();
        let mut prev = self.image_channels;
        for i in 0..self.depth {
            let c = self.channels_at(i);
            self.conv_block(&mut plan, &format!("enc{i}"), prev, c);
            self.residual_block(&mut plan, &format!("enc{i}.rb"), c);
            conv(&mut plan, &format!("enc{i}.down"), c, c, 3);
            prev = c;
        }
        let c = self.channels_at(self.depth);
        self.conv_block(&mut plan, "mid", prev, c);
        self.residual_block(&mut plan, "mid.rb", c);
        prev = c;
        for i in (0..self.depth).rev() {
            let c = self.channels_at(i);
            conv(&mut plan, &format!("dec{i}.up"), prev, c, 3);
            self.conv_block(&mut plan, &format!("dec{i}"), 2 * c, c);
            self.residual_block(&mut plan, &format!("dec{i}.rb"), c);
            prev = c;
        }
        conv(&mut plan, "out", prev, self.image_channels, 1);
        plan
    }

    fn conv_block(&self, plan: &mut Vec<LayerDesc>, prefix: &str, cin: usize, cout: usize) {
        conv(plan, &format!("{prefix}.conv"), cin, cout, 3);
        if self.normalize {
            plan.push(LayerDesc::new(format!("{prefix}.norm"), LayerKind::Norm, vec![2, cout]));
        }
    }

    fn residual_block(&self, plan: &mut Vec<LayerDesc>, prefix: &str, c: usize) {
        for j in 1..=2 {
            conv(plan, &format!("{prefix}.conv{j}"), c, c, 3);
            if self.normalize {
                plan.push(LayerDesc::new(format!("{prefix}.norm{j}"), LayerKind::Norm, vec![2, c]));
            }
        }
        let k = eca_kernel_size(c, self.eca_gamma, self.eca_b);
        plan.push(LayerDesc::new(format!("{prefix}.eca"), LayerKind::Eca, vec![k]));
    }
}

fn conv(plan: &mut Vec<LayerDesc>, prefix: &str, cin: usize, cout: usize, k: usize) {
    plan.push(LayerDesc::new(
        format!("{prefix}.weight"),
        LayerKind::Conv2d,
        vec![cout, cin, k, k],
    ));
    plan.push(LayerDesc::new(format!("{prefix}.bias"), LayerKind::Bias, vec![cout]));
}

impl fmt::Display for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "unet-eca-d{}-c{}-i{}-g{}-b{}-{}-{}",
            self.depth,
            self.base_channels,
            self.image_channels,
            self.eca_gamma,
            self.eca_b,
            if self.normalize { "in" } else { "nn" },
            if self.residual_output { "res" } else { "abs" }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerDesc {
    pub name: String,
    pub kind: LayerKind,
    pub shape: Vec<usize>,
}

impl LayerDesc {
    fn new(name: String, kind: LayerKind, shape: Vec<usize>) -> Self {
        LayerDesc { name, kind, shape }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arch_id_round_trip() {
        let spec = GeneratorSpec::default();
        assert_eq!(spec.arch_id(), "unet-eca-d4-c32-i3-g2-b1-in-res");
        assert_eq!(GeneratorSpec::parse_arch_id(&spec.arch_id()).unwrap(), spec);
        let other = GeneratorSpec {
            depth: 2,
            base_channels: 4,
            image_channels: 1,
            normalize: false,
            residual_output: false,
            ..spec
        };
        assert_eq!(GeneratorSpec::parse_arch_id(&other.arch_id()).unwrap(), other);
    }

    #[test]
    fn bad_arch_ids() {
        for id in ["", "unet-eca-d4", "resnet-eca-d4-c32-i3-g2-b1-in-res", "unet-eca-d0-c32-i3-g2-b1-in-res", "unet-eca-d4-c32-i2-g2-b1-in-res", "unet-eca-d4-c32-i3-g2-b1-bn-res"] {
            assert!(GeneratorSpec::parse_arch_id(id).is_err(), "{id}");
        }
    }

    #[test]
    fn plan_layout() {
        let spec = GeneratorSpec {
            depth: 1,
            base_channels: 4,
            image_channels: 3,
            ..GeneratorSpec::default()
        };
        let names: Vec<String> = spec.layer_plan().into_iter().map(|l| l.name).collect();
        assert_eq!(names.first().unwrap(), "enc0.conv.weight");
        assert_eq!(names.last().unwrap(), "out.bias");
        // per conv block: 2 + norm; per residual block: 2 * 3 + eca
        // enc: 3 + 7 + 2, mid: 3 + 7, dec: 2 + 3 + 7, out: 2
        assert_eq!(names.len(), 12 + 10 + 12 + 2);
        let plan = spec.layer_plan();
        let dec = plan.iter().find(|l| l.name == "dec0.conv.weight").unwrap();
        assert_eq!(dec.shape, vec![4, 8, 3, 3]);
        let out = plan.iter().find(|l| l.name == "out.weight").unwrap();
        assert_eq!(out.shape, vec![3, 4, 1, 1]);
    }
}
