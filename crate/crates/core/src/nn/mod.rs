//! Forward-only generator engine and its weight file.

mod arch;
mod conv;
mod eca;
mod generator;
mod spectral;
mod weights;

pub use arch::{GeneratorSpec, LayerDesc};
pub use conv::{conv2d_forward, conv_out_len, Kernel4};
pub use eca::{eca_forward, eca_kernel_size, eca_weights};
pub use generator::{generator_forward, Generator};
pub use spectral::{spectral_norm, verify_spectral_norm};
pub use weights::{
    load_weights, validate, LayerKind, LayerRecord, LoadOptions, WeightManifest, FORMAT_VERSION, MAGIC,
};
