//! Retinal fundus image enhancement.
//!
//! A trained generator is used as a feed-forward enhancer and, optionally,
//! as the prior of a per-image refinement that minimizes an MS-SSIM data
//! term plus `gamma / 2 * x^T (x - G(x))` with accelerated gradient descent.
//!
//! Modules:
//! - [`imagekit`]: image I/O, preprocessing, PSNR / SSIM / MS-SSIM (with gradient).
//! - [`nn`]: forward-only generator engine and the `OTRE` weight format.
//! - [`reopt`]: the regularization-by-enhancing solver.
//! - [`degrade`]: seeded synthetic degradation and dataset manifests.

pub mod degrade;
pub mod error;
pub mod imagekit;
pub mod nn;
pub mod reopt;
mod tensor;

pub use error::{Error, Result};
pub use tensor::ImageTensor;
