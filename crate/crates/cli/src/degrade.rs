use std::path::PathBuf;
use std::time::Instant;

use otre::degrade::{degrade, DatasetManifest, DegradeParams, ManifestEntry, Quality};
use otre::imagekit::{load_image, psnr, save_image};
use rayon::prelude::*;
use serde::Serialize;

use crate::report::{Record, RunReport};
use crate::{at, collect_inputs, output_name, pool, CliError};

#[derive(Debug, Clone, Serialize)]
pub struct DegradeOptions {
    pub input: PathBuf,
    pub output: PathBuf,
    /// `params.seed` is ignored; image `i` uses `seed + i`.
    pub params: DegradeParams,
    pub seed: u64,
    pub threads: Option<usize>,
}

/// Degrades every image under `opts.input` and writes the degraded PNGs
/// plus `manifest.jsonl` pairing each with its clean source.
pub fn cmd_degrade(opts: &DegradeOptions) -> Result<RunReport, CliError> {
    let start = Instant::now();
    opts.params.validate()?;
    let inputs = collect_inputs(&opts.input)?;
    std::fs::create_dir_all(&opts.output)?;
    let results: Vec<(Record, Option<ManifestEntry>)> = pool(opts.threads)?.install(|| {
        inputs
            .par_iter()
            .enumerate()
            .map(|(i, path)| {
                let t = Instant::now();
                let seed = opts.seed.wrapping_add(i as u64);
                let (mut rec, entry) = match degrade_one(path, opts, seed) {
                    Ok((rec, entry)) => (rec, Some(entry)),
                    Err(e) => (Record::failed(path, e), None),
                };
                rec.seconds = t.elapsed().as_secs_f64();
                (rec, entry)
            })
            .collect()
    });
    let (records, entries): (Vec<Record>, Vec<Option<ManifestEntry>>) = results.into_iter().unzip();
    let manifest = DatasetManifest {
        entries: entries.into_iter().flatten().collect(),
        warnings: Vec::new(),
    };
    manifest.write_jsonl(opts.output.join("manifest.jsonl"))?;
    let config = serde_json::json!({ "options": opts });
    let report = RunReport::new("degrade", records, config, start.elapsed().as_secs_f64());
    report.write(&opts.output)?;
    Ok(report)
}

fn degrade_one(path: &PathBuf, opts: &DegradeOptions, seed: u64) -> Result<(Record, ManifestEntry), CliError> {
    let clean = load_image(path).map_err(at(path))?;
    let params = DegradeParams {
        seed,
        ..opts.params.clone()
    };
    let low = degrade(&clean, &params).map_err(at(path))?;
    let out = output_name(path, &opts.output);
    save_image(&low, &out).map_err(at(&out))?;
    let mut rec = Record::new(path);
    rec.psnr = Some(psnr(&low, &clean).map_err(at(path))?);
    rec.output = Some(out.clone());
    let entry = ManifestEntry {
        quality: Some(Quality::SyntheticLow),
        clean: Some(std::fs::canonicalize(path)?),
        ..ManifestEntry::new(std::fs::canonicalize(&out)?)
    };
    Ok((rec, entry))
}
