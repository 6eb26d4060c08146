use std::path::{Path, PathBuf};
use std::time::Instant;

use otre::imagekit::{load_image, ms_ssim, preprocess, psnr, save_image, ssim, SsimParams};
use otre::nn::{load_weights, Generator, LoadOptions};
use otre::reopt::{gamma_grid_search, log_grid, Enhancer, GridScore, IdentityEnhancer, ReConfig};
use otre::{Error, ImageTensor};
use rayon::prelude::*;
use serde::Serialize;

use crate::report::{Record, RunReport};
use crate::{at, collect_inputs, output_name, pool, CliError};

/// The generator used for enhancement and as the refinement prior.
pub enum Handle {
    Identity,
    Net(Generator),
}

impl Handle {
    pub fn load(weights: &Path, check_sn: bool) -> Result<Self, CliError> {
        let opts = LoadOptions {
            check_spectral_norm: check_sn,
            ..LoadOptions::default()
        };
        let (spec, manifest) = load_weights(weights, &opts).map_err(at(weights))?;
        Ok(Handle::Net(Generator::new(spec, &manifest).map_err(at(weights))?))
    }

    /// Image sides must be multiples of this.
    pub fn unit(&self) -> usize {
        match self {
            Handle::Identity => 1,
            Handle::Net(g) => 1 << g.spec().depth,
        }
    }
}

impl Enhancer for Handle {
    fn enhance(&self, x: &ImageTensor) -> otre::Result<ImageTensor> {
        match self {
            Handle::Identity => IdentityEnhancer.enhance(x),
            Handle::Net(g) => g.forward(x),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnhanceOptions {
    /// `None` selects the identity handle.
    pub weights: Option<PathBuf>,
    pub input: PathBuf,
    pub output: PathBuf,
    pub refine: bool,
    pub gamma: Option<f64>,
    /// `(lo, hi, n)` log-spaced candidates; used when `gamma` is unset.
    pub gamma_grid: (f64, f64, usize),
    pub eta: f64,
    pub iters: usize,
    pub tol: f64,
    pub reference: Option<PathBuf>,
    /// Working resolution; default is the center crop rounded down to a
    /// multiple the generator accepts.
    pub side: Option<usize>,
    pub check_sn: bool,
    pub threads: Option<usize>,
    pub trace_dir: Option<PathBuf>,
}

impl Default for EnhanceOptions {
    fn default() -> Self {
        let re = ReConfig::default();
        EnhanceOptions {
            weights: None,
            input: PathBuf::new(),
            output: PathBuf::new(),
            refine: false,
            gamma: None,
            gamma_grid: (1e-4, 1e-3, 4),
            eta: re.eta,
            iters: re.max_iters,
            tol: re.tol,
            reference: None,
            side: None,
            check_sn: true,
            threads: None,
            trace_dir: None,
        }
    }
}

impl EnhanceOptions {
    pub fn re_config(&self) -> ReConfig {
        ReConfig {
            eta: self.eta,
            gamma: self.gamma.unwrap_or(0.0),
            tol: self.tol,
            max_iters: self.iters,
            ..ReConfig::default()
        }
    }

    fn candidates(&self) -> Vec<f64> {
        match self.gamma {
            Some(g) => vec![g],
            None => log_grid(self.gamma_grid.0, self.gamma_grid.1, self.gamma_grid.2),
        }
    }
}

/// Feed-forward enhancement, optionally followed by refinement, for every
/// image under `opts.input`.
pub fn cmd_enhance(opts: &EnhanceOptions) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let handle = match &opts.weights {
        Some(w) => Handle::load(w, opts.check_sn)?,
        None => Handle::Identity,
    };
    if opts.refine {
        opts.re_config().validate()?;
        if opts.candidates().is_empty() {
            return Err(Error::EmptyGrid.into());
        }
    }
    if let Some(s) = opts.side {
        if s == 0 || s % handle.unit() != 0 {
            return Err(CliError::Usage(format!(
                "--side {s} must be a positive multiple of {}",
                handle.unit()
            )));
        }
    }
    let inputs = collect_inputs(&opts.input)?;
    std::fs::create_dir_all(&opts.output)?;
    if let Some(t) = &opts.trace_dir {
        std::fs::create_dir_all(t)?;
    }
    let records: Vec<Record> = pool(opts.threads)?.install(|| {
        inputs
            .par_iter()
            .map(|p| {
                let t = Instant::now();
                let mut rec = enhance_one(p, opts, &handle).unwrap_or_else(|e| Record::failed(p, e));
                rec.seconds = t.elapsed().as_secs_f64();
                if !rec.ok {
                    log::error!("{}", rec.error.as_deref().unwrap_or("failed"));
                }
                rec
            })
            .collect()
    });
    let config = serde_json::json!({
        "options": opts,
        "refine": opts.refine.then(|| opts.re_config()),
        "gamma_candidates": opts.refine.then(|| opts.candidates()),
        "generator": match &handle {
            Handle::Identity => "identity".to_string(),
            Handle::Net(g) => g.spec().arch_id(),
        },
    });
    let report = RunReport::new("enhance", records, config, start.elapsed().as_secs_f64());
    report.write(&opts.output)?;
    Ok(report)
}

fn working_side(img: &ImageTensor, opts: &EnhanceOptions, unit: usize) -> otre::Result<usize> {
    if let Some(s) = opts.side {
        return Ok(s);
    }
    let crop = img.height().min(img.width());
    let side = crop - crop % unit;
    if side == 0 {
        return Err(Error::TooSmall(format!("{crop} px, generator needs multiples of {unit}")));
    }
    Ok(side)
}

fn reference_for(input: &Path, reference: &Path) -> PathBuf {
    if reference.is_dir() {
        reference.join(input.file_name().unwrap_or_default())
    } else {
        reference.to_path_buf()
    }
}

fn enhance_one(path: &Path, opts: &EnhanceOptions, g: &Handle) -> Result<Record, CliError> {
    let raw = load_image(path).map_err(at(path))?;
    let side = working_side(&raw, opts, g.unit()).map_err(at(path))?;
    let y = preprocess(&raw, side);
    let clean = match &opts.reference {
        Some(r) => {
            let rp = reference_for(path, r);
            Some(preprocess(&load_image(&rp).map_err(at(&rp))?, side))
        }
        None => None,
    };
    let mut rec = Record::new(path);
    let x_hat = if opts.refine {
        let cfg = opts.re_config();
        let score = clean.as_ref().map_or(GridScore::NoReference, GridScore::Reference);
        let (gamma, res) = gamma_grid_search(&y, &opts.candidates(), &cfg, g, score).map_err(at(path))?;
        if res.diverged {
            log::warn!("{}: refinement diverged, keeping last finite iterate", path.display());
        }
        if let Some(dir) = &opts.trace_dir {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy();
            res.write_trace_csv(dir.join(format!("{stem}.trace.csv")))
                .map_err(at(path))?;
        }
        rec.gamma = Some(gamma);
        rec.iterations = Some(res.iters);
        rec.stationarity_residual = Some(res.stationarity_residual);
        res.x_star
    } else {
        g.enhance(&y).map_err(at(path))?
    };
    if let Some(clean) = &clean {
        let p = SsimParams::default();
        rec.psnr = Some(psnr(&x_hat, clean).map_err(at(path))?);
        rec.input_psnr = Some(psnr(&y, clean).map_err(at(path))?);
        rec.ms_ssim = Some(ms_ssim(&x_hat, clean, &p).map_err(at(path))?);
        rec.ssim = match ssim(&x_hat, clean, &p) {
            Ok(v) => Some(v),
            Err(Error::TooSmall(_)) => None,
            Err(e) => return Err(at(path)(e)),
        };
    }
    let out = output_name(path, &opts.output);
    save_image(&x_hat, &out).map_err(at(&out))?;
    rec.output = Some(out);
    Ok(rec)
}
