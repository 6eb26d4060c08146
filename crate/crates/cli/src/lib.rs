//! Command implementations behind the `otre` binary.
//!
//! Each command processes its images on a bounded worker pool, writes a
//! [`RunReport`] next to its outputs and returns it; the binary maps a
//! report with failed records to a nonzero exit code.

mod degrade;
mod enhance;
mod evaluate;
pub mod report;

use std::path::{Path, PathBuf};

pub use degrade::{cmd_degrade, DegradeOptions};
pub use enhance::{cmd_enhance, EnhanceOptions, Handle};
pub use evaluate::{cmd_evaluate, parse_metrics, EvaluateOptions, Metric};
pub use report::{Record, RunReport};

/// Env var read when no explicit pool width is given.
pub const THREADS_ENV: &str = "OTRE_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("unknown metric `{0}` (expected psnr, ssim or msssim)")]
    UnknownMetric(String),
    #[error("{}: {source}", path.display())]
    AtPath {
        path: PathBuf,
        #[source]
        source: otre::Error,
    },
    #[error(transparent)]
    Core(#[from] otre::Error),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

pub(crate) fn at(path: &Path) -> impl FnOnce(otre::Error) -> CliError + '_ {
    move |source| CliError::AtPath {
        path: path.to_path_buf(),
        source,
    }
}

/// Pool width: explicit value, else `OTRE_THREADS`, else one per core.
pub fn resolve_threads(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| std::env::var(THREADS_ENV).ok()?.trim().parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub(crate) fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_threads(threads))
        .build()?)
}

pub(crate) fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// A single file, or the images directly inside a directory in name order.
pub fn collect_inputs(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(otre::Error::MissingFile(input.to_path_buf()).into());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    files.sort();
    Ok(files)
}

pub(crate) fn output_name(input: &Path, out_dir: &Path) -> PathBuf {
    let stem = input.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
    out_dir.join(format!("{stem}.png"))
}
