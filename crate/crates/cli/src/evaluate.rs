use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use otre::degrade::DatasetManifest;
use otre::imagekit::{load_image, ms_ssim, psnr, ssim, SsimParams};
use rayon::prelude::*;
use serde::Serialize;

use crate::report::{Record, RunReport};
use crate::{at, pool, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Psnr,
    Ssim,
    MsSsim,
}

impl FromStr for Metric {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "psnr" => Ok(Metric::Psnr),
            "ssim" => Ok(Metric::Ssim),
            "msssim" | "ms-ssim" | "ms_ssim" => Ok(Metric::MsSsim),
            _ => Err(CliError::UnknownMetric(s.trim().to_string())),
        }
    }
}

/// Comma-separated metric list.
pub fn parse_metrics(list: &str) -> Result<Vec<Metric>, CliError> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluateOptions {
    /// Manifest whose entries carry a `clean` counterpart.
    pub pairs: PathBuf,
    pub metrics: Vec<Metric>,
    /// Report directory; defaults to the manifest's directory.
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
}

/// Full-reference metrics of each manifest image against its clean pair.
pub fn cmd_evaluate(opts: &EvaluateOptions) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let manifest = DatasetManifest::read_jsonl(&opts.pairs).map_err(at(&opts.pairs))?;
    let base = opts.pairs.parent().unwrap_or(Path::new(".")).to_path_buf();
    let resolve = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
    let records: Vec<Record> = pool(opts.threads)?.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| {
                let t = Instant::now();
                let path = resolve(&e.path);
                let mut rec = match &e.clean {
                    Some(c) => evaluate_one(&path, &resolve(c), &opts.metrics).unwrap_or_else(|err| Record::failed(&path, err)),
                    None => Record::failed(&path, "manifest entry has no clean counterpart"),
                };
                rec.seconds = t.elapsed().as_secs_f64();
                rec
            })
            .collect()
    });
    let config = serde_json::json!({ "options": opts, "ssim": SsimParams::default() });
    let report = RunReport::new("evaluate", records, config, start.elapsed().as_secs_f64());
    report.write(opts.output.as_deref().unwrap_or(&base))?;
    Ok(report)
}

fn evaluate_one(path: &Path, clean: &Path, metrics: &[Metric]) -> Result<Record, CliError> {
    let x = load_image(path).map_err(at(path))?;
    let c = load_image(clean).map_err(at(clean))?;
    let p = SsimParams::default();
    let mut rec = Record::new(path);
    for m in metrics {
        match m {
            Metric::Psnr => rec.psnr = Some(psnr(&x, &c).map_err(at(path))?),
            Metric::Ssim => rec.ssim = Some(ssim(&x, &c, &p).map_err(at(path))?),
            Metric::MsSsim => rec.ms_ssim = Some(ms_ssim(&x, &c, &p).map_err(at(path))?),
        }
    }
    Ok(rec)
}
