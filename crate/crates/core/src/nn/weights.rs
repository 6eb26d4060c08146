//! The `OTRE` weight file.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! header   magic  b"OTRE"
//!          u16    version (= 1)
//!          u32    arch id byte length, then UTF-8 arch id
//!          u32    record count
//! record   u32    name byte length, then UTF-8 name
//!          u8     kind: 0 conv2d, 1 eca, 2 norm, 3 bias
//!          u8     rank
//!          u32    x rank dims
//!          u8     sn flag (0 or 1), then f32 sigma when 1
//!          f32    x prod(dims) payload, row-major
//! ```
//!
//! Norm records hold `[2, C]`: per-channel scale then shift.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::GeneratorSpec;
use super::conv::Kernel4;
use super::spectral::verify_spectral_norm;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"OTRE";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2d,
    Eca,
    Norm,
    Bias,
}

impl LayerKind {
    fn to_byte(self) -> u8 {
        match self {
            LayerKind::Conv2d => 0,
            LayerKind::Eca => 1,
            LayerKind::Norm => 2,
            LayerKind::Bias => 3,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => LayerKind::Conv2d,
            1 => LayerKind::Eca,
            2 => LayerKind::Norm,
            3 => LayerKind::Bias,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub name: String,
    pub kind: LayerKind,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    /// Top singular value recorded at export time.
    pub sn_sigma: Option<f32>,
}

impl LayerRecord {
    pub fn new(name: impl Into<String>, kind: LayerKind, shape: Vec<usize>, data: Vec<f32>) -> Self {
        LayerRecord {
            name: name.into(),
            kind,
            shape,
            data,
            sn_sigma: None,
        }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// Conv weights as an f64 kernel; `None` for non-conv records.
    pub fn kernel(&self) -> Option<Kernel4> {
        if self.kind != LayerKind::Conv2d || self.shape.len() != 4 {
            return None;
        }
        let s = &self.shape;
        Kernel4::new(s[0], s[1], s[2], s[3], self.data.iter().map(|&v| v as f64).collect()).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightManifest {
    pub version: u16,
    pub arch_id: String,
    pub records: Vec<LayerRecord>,
}

impl WeightManifest {
    pub fn new(arch_id: impl Into<String>, records: Vec<LayerRecord>) -> Self {
        WeightManifest {
            version: FORMAT_VERSION,
            arch_id: arch_id.into(),
            records,
        }
    }

    /// Manifest for `spec` with every parameter set to zero.
    pub fn zeros(spec: &GeneratorSpec) -> Self {
        let records = spec
            .layer_plan()
            .into_iter()
            .map(|l| {
                let n = l.shape.iter().product();
                LayerRecord::new(l.name, l.kind, l.shape, vec![0.0; n])
            })
            .collect();
        WeightManifest::new(spec.arch_id(), records)
    }

    pub fn record(&self, name: &str) -> Option<&LayerRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn record_mut(&mut self, name: &str) -> Option<&mut LayerRecord> {
        self.records.iter_mut().find(|r| r.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        put_str(&mut out, &self.arch_id);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            put_str(&mut out, &r.name);
            out.push(r.kind.to_byte());
            out.push(r.shape.len() as u8);
            for &d in &r.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match r.sn_sigma {
                Some(s) => {
                    out.push(1);
                    out.extend_from_slice(&s.to_le_bytes());
                }
                None => out.push(0),
            }
            for v in &r.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses the byte layout only; see [`validate`] for semantic checks.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { buf: bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4)?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = cur.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let arch_id = cur.string()?;
        let count = cur.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = cur.string()?;
            let kind_byte = cur.u8()?;
            let kind = LayerKind::from_byte(kind_byte).ok_or_else(|| Error::LayerShape {
                layer: name.clone(),
                reason: format!("unknown kind byte {kind_byte}"),
            })?;
            let rank = cur.u8()? as usize;
            let shape = (0..rank)
                .map(|_| cur.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let sn_sigma = match cur.u8()? {
                0 => None,
                1 => Some(cur.f32()?),
                f => {
                    return Err(Error::CorruptData(format!(
                        "layer {name}: bad sn flag {f}"
                    )))
                }
            };
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::CorruptData(format!("layer {name}: shape overflow")))?;
            let payload = cur.take(n.checked_mul(4).ok_or_else(|| {
                Error::CorruptData(format!("layer {name}: payload overflow"))
            })?)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            records.push(LayerRecord {
                name,
                kind,
                shape,
                data,
                sn_sigma,
            });
        }
        if cur.pos != bytes.len() {
            return Err(Error::CorruptData(format!(
                "{} trailing bytes after last record",
                bytes.len() - cur.pos
            )));
        }
        Ok(WeightManifest {
            version,
            arch_id,
            records,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Reads and parses a file without semantic validation.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptData(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::CorruptData(format!("invalid UTF-8 near byte {}", self.pos)))
    }
}

/// Loader switches.
#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub check_spectral_norm: bool,
    /// Conv layers must satisfy `sigma <= 1 + sn_tol`.
    pub sn_tol: f64,
    pub sn_iters: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            check_spectral_norm: true,
            sn_tol: 1e-3,
            sn_iters: 50,
        }
    }
}

/// Checks a manifest against the layer plan of its architecture id.
pub fn validate(manifest: &WeightManifest, opts: &LoadOptions) -> Result<GeneratorSpec> {
    let spec = GeneratorSpec::parse_arch_id(&manifest.arch_id)?;
    let plan = spec.layer_plan();
    if plan.len() != manifest.records.len() {
        return Err(Error::LayerShape {
            layer: "<manifest>".into(),
            reason: format!(
                "{} records, architecture {} needs {}",
                manifest.records.len(),
                manifest.arch_id,
                plan.len()
            ),
        });
    }
    for (want, got) in plan.iter().zip(&manifest.records) {
        if want.name != got.name || want.kind != got.kind || want.shape != got.shape {
            return Err(Error::LayerShape {
                layer: got.name.clone(),
                reason: format!(
                    "expected {} {:?} {:?}, found {} {:?} {:?}",
                    want.name, want.kind, want.shape, got.name, got.kind, got.shape
                ),
            });
        }
        if got.element_count() != got.data.len() {
            return Err(Error::LayerShape {
                layer: got.name.clone(),
                reason: format!(
                    "shape {:?} needs {} values, found {}",
                    got.shape,
                    got.element_count(),
                    got.data.len()
                ),
            });
        }
        if got.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParam(got.name.clone()));
        }
        if let Some(s) = got.sn_sigma {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::LayerShape {
                    layer: got.name.clone(),
                    reason: format!("stored sn_sigma {s} must be positive"),
                });
            }
        }
        if opts.check_spectral_norm {
            if let Some(k) = got.kernel() {
                let sigma = verify_spectral_norm(&k, opts.sn_tol, opts.sn_iters);
                if sigma > 1.0 + opts.sn_tol {
                    return Err(Error::LipschitzViolation {
                        layer: got.name.clone(),
                        sigma,
                    });
                }
            }
        }
    }
    Ok(spec)
}

/// Reads, parses and validates a weight file.
pub fn load_weights(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<(GeneratorSpec, WeightManifest)> {
    let manifest = WeightManifest::read(path)?;
    let spec = validate(&manifest, opts)?;
    Ok((spec, manifest))
}
