use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use otre::degrade::{build_manifest, DegradeParams};
use otre_cli::{cmd_degrade, cmd_enhance, cmd_evaluate, parse_metrics, DegradeOptions, EnhanceOptions, EvaluateOptions, RunReport};

#[derive(Parser)]
#[command(name = "otre", version, about = "Retinal fundus image enhancement and evaluation")]
struct Cli {
    /// Worker pool width
    #[arg(long, global = true, env = "OTRE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enhance images with a trained generator, optionally refining each one
    Enhance(EnhanceArgs),
    /// Synthesize low-quality copies of clean images
    Degrade(DegradeArgs),
    /// Full-reference metrics over a paired manifest
    Evaluate(EvaluateArgs),
    /// Scan an image directory into a manifest
    Manifest(ManifestArgs),
}

#[derive(Args)]
struct EnhanceArgs {
    /// Generator weights (.otre)
    #[arg(long, required_unless_present = "identity")]
    weights: Option<PathBuf>,
    /// Use the identity map instead of a trained generator
    #[arg(long, conflicts_with = "weights")]
    identity: bool,
    /// Image file or directory
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Run the refinement after the feed-forward pass
    #[arg(long)]
    refine: bool,
    /// Regularization strength (disables the grid)
    #[arg(long, conflicts_with = "gamma_grid")]
    gamma: Option<f64>,
    /// Log-spaced candidates: LO HI N
    #[arg(long, num_args = 3, value_names = ["LO", "HI", "N"])]
    gamma_grid: Option<Vec<String>>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 400)]
    iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Clean reference file or directory (matched by file name)
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Working resolution
    #[arg(long)]
    side: Option<usize>,
    /// Skip the spectral-norm check when loading weights
    #[arg(long)]
    no_sn_check: bool,
    /// Directory for per-image refinement traces
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Args)]
struct DegradeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// JSON file with degradation parameters; flags override its values
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    blur_sigma: Option<f64>,
    #[arg(long)]
    illum_strength: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    brightness_shift: Option<f64>,
    #[arg(long)]
    contrast_scale: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    center_jitter: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Manifest with clean counterparts
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, default_value = "psnr,ssim,msssim")]
    metrics: String,
    /// Report directory (default: next to the manifest)
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ManifestArgs {
    #[arg(long)]
    root: PathBuf,
    /// CSV with a `filename,grade` header
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn enhance_options(a: EnhanceArgs, threads: Option<usize>) -> Result<EnhanceOptions> {
    let mut o = EnhanceOptions {
        weights: a.weights,
        input: a.input,
        output: a.output,
        refine: a.refine,
        gamma: a.gamma,
        iters: a.iters,
        tol: a.tol,
        reference: a.reference,
        side: a.side,
        check_sn: !a.no_sn_check,
        threads,
        trace_dir: a.trace_dir,
        ..EnhanceOptions::default()
    };
    if a.identity {
        o.weights = None;
    }
    if let Some(eta) = a.eta {
        o.eta = eta;
    }
    if let Some(g) = a.gamma_grid {
        let lo = g[0].parse().context("--gamma-grid LO")?;
        let hi = g[1].parse().context("--gamma-grid HI")?;
        let n = g[2].parse().context("--gamma-grid N")?;
        o.gamma_grid = (lo, hi, n);
    }
    Ok(o)
}

fn degrade_options(a: DegradeArgs, threads: Option<usize>) -> Result<DegradeOptions> {
    let mut p = match &a.params {
        Some(f) => serde_json::from_str(&std::fs::read_to_string(f).with_context(|| f.display().to_string())?)
            .with_context(|| format!("parsing {}", f.display()))?,
        None => DegradeParams::neutral(a.seed),
    };
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut p.blur_sigma, a.blur_sigma);
    set(&mut p.illum_strength, a.illum_strength);
    set(&mut p.brightness_shift, a.brightness_shift);
    set(&mut p.contrast_scale, a.contrast_scale);
    set(&mut p.noise_std, a.noise_std);
    set(&mut p.center_jitter, a.center_jitter);
    Ok(DegradeOptions {
        input: a.input,
        output: a.output,
        params: p,
        seed: a.seed,
        threads,
    })
}

fn finish(report: RunReport) -> ExitCode {
    print!("{}", report.table());
    println!("wall clock {:.2}s", report.wall_clock_s);
    if report.all_ok() {
        ExitCode::SUCCESS
    } else {
        for r in report.failures() {
            eprintln!("error: {}", r.error.as_deref().unwrap_or("failed"));
        }
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    Ok(match cli.command {
        Command::Enhance(a) => finish(cmd_enhance(&enhance_options(a, cli.threads)?)?),
        Command::Degrade(a) => finish(cmd_degrade(&degrade_options(a, cli.threads)?)?),
        Command::Evaluate(a) => finish(cmd_evaluate(&EvaluateOptions {
            pairs: a.pairs,
            metrics: parse_metrics(&a.metrics)?,
            output: a.output,
            threads: cli.threads,
        })?),
        Command::Manifest(a) => {
            let m = build_manifest(&a.root, a.labels.as_deref())?;
            for w in &m.warnings {
                log::warn!("{w}");
            }
            m.write_jsonl(&a.out)?;
            println!("{} entries, {} warnings -> {}", m.entries.len(), m.warnings.len(), a.out.display());
            ExitCode::SUCCESS
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
