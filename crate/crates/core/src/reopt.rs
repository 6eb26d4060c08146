//! Regularization by enhancing.
//!
//! Refines an image by minimizing
//!
//! ```text
//! E(x) = L(x, y) + gamma / 2 * x^T (x - G(x))
//! ```
//!
//! where `L` is the data-fidelity loss against the observation `y` and `G`
//! is the trained enhancer. The prior gradient is taken as `x - G(x)`, so
//! each step needs one enhancer evaluation. Iterates follow the Nesterov /
//! FISTA sequence `t_k = (1 + sqrt(1 + 4 t_{k-1}^2)) / 2` with extrapolation
//! weight `(t_{k-1} - 1) / t_k`, no restarts, and are projected onto
//! `[0, 1]` after every gradient step.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagekit::{fidelity_loss, psnr, SsimParams};
use crate::nn::Generator;
use crate::ImageTensor;

/// Anything usable as the prior operator `G`.
pub trait Enhancer: Sync {
    fn enhance(&self, x: &ImageTensor) -> Result<ImageTensor>;
}

impl Enhancer for Generator {
    fn enhance(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.forward(x)
    }
}

/// `G(x) = x`. The prior term vanishes for every `x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEnhancer;

impl Enhancer for IdentityEnhancer {
    fn enhance(&self, x: &ImageTensor) -> Result<ImageTensor> {
        Ok(x.clone())
    }
}

impl<E: Enhancer + ?Sized> Enhancer for &E {
    fn enhance(&self, x: &ImageTensor) -> Result<ImageTensor> {
        (**self).enhance(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    /// `1 - MS-SSIM(x, y)`
    MsSsim,
    /// `1/2 |x - y|^2`
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReConfig {
    pub eta: f64,
    pub gamma: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub fidelity: Fidelity,
    pub ssim: SsimParams,
    /// Nesterov extrapolation; `false` gives plain projected gradient descent.
    pub accelerate: bool,
    /// How many times the step is halved and the run restarted after a
    /// non-finite iterate.
    pub max_eta_halvings: usize,
}

impl Default for ReConfig {
    fn default() -> Self {
        ReConfig {
            eta: 1.0,
            gamma: 1e-3,
            tol: 1e-4,
            max_iters: 400,
            fidelity: Fidelity::MsSsim,
            ssim: SsimParams::default(),
            accelerate: true,
            max_eta_halvings: 4,
        }
    }
}

impl ReConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidParam(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidParam(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidParam(format!("tol must be >= 0, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParam("max_iters must be positive".into()));
        }
        if self.fidelity == Fidelity::MsSsim {
            self.ssim.validate()?;
        }
        Ok(())
    }
}

/// Per-iteration diagnostics, measured at the gradient evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub objective: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReResult {
    pub x_star: ImageTensor,
    pub iters: usize,
    pub converged: bool,
    /// `|grad L(x*) + gamma (x* - G(x*))|_2`
    pub stationarity_residual: f64,
    pub objective_trace: Vec<f64>,
    pub trace: Vec<TraceEntry>,
    /// Step size of the run that produced `x_star`.
    pub eta_used: f64,
    /// Every attempt, including halvings, hit a non-finite iterate.
    pub diverged: bool,
}

impl ReResult {
    /// Writes `iter,objective,residual` rows.
    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "iter,objective,residual")?;
        for e in &self.trace {
            writeln!(f, "{},{:e},{:e}", e.iter, e.objective, e.residual)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// `t_k` from `t_{k-1}`.
#[inline]
pub fn nesterov_next(t: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
}

fn fidelity_value_grad(x: &ImageTensor, y: &ImageTensor, cfg: &ReConfig) -> Result<(f64, ImageTensor)> {
    match cfg.fidelity {
        Fidelity::MsSsim => fidelity_loss(x, y, &cfg.ssim),
        Fidelity::Quadratic => {
            let g = x.zip_map(y, |a, b| a - b);
            let v = 0.5 * g.as_slice().iter().map(|d| d * d).sum::<f64>();
            Ok((v, g))
        }
    }
}

/// Objective value and gradient `grad L(x, y) + gamma (x - G(x))`.
fn objective_and_gradient<G: Enhancer + ?Sized>(
    x: &ImageTensor,
    y: &ImageTensor,
    cfg: &ReConfig,
    g: &G,
) -> Result<(f64, ImageTensor)> {
    x.ensure_same_shape(y)?;
    let (fid, mut grad) = fidelity_value_grad(x, y, cfg)?;
    if cfg.gamma == 0.0 {
        return Ok((fid, grad));
    }
    let gx = g.enhance(x)?;
    x.ensure_same_shape(&gx)?;
    let mut prior = 0.0;
    for ((d, &xv), &gv) in grad.as_mut_slice().iter_mut().zip(x.as_slice()).zip(gx.as_slice()) {
        let r = xv - gv;
        prior += xv * r;
        *d += cfg.gamma * r;
    }
    Ok((fid + 0.5 * cfg.gamma * prior, grad))
}

/// Gradient of the refinement objective at `x`.
pub fn re_gradient<G: Enhancer + ?Sized>(
    x: &ImageTensor,
    y: &ImageTensor,
    gamma: f64,
    g: &G,
    fidelity: Fidelity,
    ssim: &SsimParams,
) -> Result<ImageTensor> {
    let cfg = ReConfig {
        gamma,
        fidelity,
        ssim: ssim.clone(),
        ..ReConfig::default()
    };
    Ok(objective_and_gradient(x, y, &cfg, g)?.1)
}

/// Solver state between iterations.
#[derive(Debug, Clone)]
pub struct ReState {
    pub x_k: ImageTensor,
    pub x_prev: ImageTensor,
    pub s_k: ImageTensor,
    pub t_k: f64,
    pub iter: usize,
}

impl ReState {
    pub fn new(x0: &ImageTensor) -> Self {
        ReState {
            x_k: x0.clone(),
            x_prev: x0.clone(),
            s_k: x0.clone(),
            t_k: 1.0,
            iter: 0,
        }
    }

    /// One accelerated projected gradient step. Returns the diagnostics at
    /// the extrapolated point the gradient was taken at.
    pub fn step<G: Enhancer + ?Sized>(
        &mut self,
        y: &ImageTensor,
        cfg: &ReConfig,
        eta: f64,
        g: &G,
    ) -> Result<TraceEntry> {
        let t_next = nesterov_next(self.t_k);
        let (objective, der) = objective_and_gradient(&self.s_k, y, cfg, g)?;
        let mut x_new = self.s_k.zip_map(&der, |s, d| s - eta * d);
        x_new.clamp01_in_place();
        let beta = if cfg.accelerate {
            (self.t_k - 1.0) / t_next
        } else {
            0.0
        };
        self.s_k = x_new.zip_map(&self.x_k, |a, b| a + beta * (a - b));
        self.x_prev = std::mem::replace(&mut self.x_k, x_new);
        self.t_k = t_next;
        self.iter += 1;
        Ok(TraceEntry {
            iter: self.iter,
            objective,
            residual: der.norm_l2(),
        })
    }

    /// `|x_k - x_{k-1}| <= tol |x_{k-1}|`
    pub fn should_stop(&self, tol: f64) -> bool {
        self.x_k.dist_l2(&self.x_prev) <= tol * self.x_prev.norm_l2()
    }
}

enum Attempt {
    Finished(ReState, Vec<TraceEntry>, bool),
    Diverged(ReState, Vec<TraceEntry>, usize),
}

fn run_once<G: Enhancer + ?Sized>(
    y: &ImageTensor,
    x0: &ImageTensor,
    cfg: &ReConfig,
    eta: f64,
    g: &G,
) -> Result<Attempt> {
    let mut state = ReState::new(x0);
    let mut trace = Vec::with_capacity(cfg.max_iters.min(4096));
    while state.iter < cfg.max_iters {
        let last = state.clone();
        let entry = state.step(y, cfg, eta, g)?;
        if !state.x_k.all_finite() || !state.s_k.all_finite() || !entry.objective.is_finite() {
            return Ok(Attempt::Diverged(last, trace, state.iter));
        }
        trace.push(entry);
        if state.should_stop(cfg.tol) {
            return Ok(Attempt::Finished(state, trace, true));
        }
    }
    Ok(Attempt::Finished(state, trace, false))
}

/// Runs the accelerated iteration from `x0` until the relative change
/// between iterates drops to `tol` or `max_iters` steps have been taken.
///
/// A non-finite iterate restarts the run with half the step size, at most
/// `max_eta_halvings` times; if every attempt diverges the last finite
/// iterate is returned with `diverged` set.
pub fn refine<G: Enhancer + ?Sized>(
    y: &ImageTensor,
    x0: &ImageTensor,
    cfg: &ReConfig,
    g: &G,
) -> Result<ReResult> {
    cfg.validate()?;
    y.ensure_same_shape(x0)?;
    let mut eta = cfg.eta;
    let mut halvings = 0;
    loop {
        match run_once(y, x0, cfg, eta, g)? {
            Attempt::Finished(state, trace, converged) => {
                return finish(y, cfg, g, state, trace, converged, eta, false)
            }
            Attempt::Diverged(state, trace, iter) => {
                if halvings >= cfg.max_eta_halvings {
                    log::warn!("refinement diverged at iteration {iter} with eta {eta}");
                    return finish(y, cfg, g, state, trace, false, eta, true);
                }
                log::info!("non-finite iterate at {iter}; halving eta to {}", eta / 2.0);
                halvings += 1;
                eta /= 2.0;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn finish<G: Enhancer + ?Sized>(
    y: &ImageTensor,
    cfg: &ReConfig,
    g: &G,
    state: ReState,
    trace: Vec<TraceEntry>,
    converged: bool,
    eta: f64,
    diverged: bool,
) -> Result<ReResult> {
    let (_, grad) = objective_and_gradient(&state.x_k, y, cfg, g)?;
    let residual = grad.norm_l2();
    Ok(ReResult {
        iters: state.iter,
        converged,
        stationarity_residual: if residual.is_finite() { residual } else { f64::MAX },
        objective_trace: trace.iter().map(|e| e.objective).collect(),
        trace,
        x_star: state.x_k,
        eta_used: eta,
        diverged,
    })
}

/// How grid candidates are ranked.
#[derive(Debug, Clone, Copy)]
pub enum GridScore<'a> {
    /// Highest PSNR against a clean reference.
    Reference(&'a ImageTensor),
    /// Smallest stationarity residual.
    NoReference,
}

/// Refines once per candidate strength starting from `G(y)` and keeps the
/// best run. Ties go to the smaller `gamma`.
pub fn gamma_grid_search<G: Enhancer + ?Sized>(
    y: &ImageTensor,
    candidates: &[f64],
    cfg: &ReConfig,
    g: &G,
    score: GridScore<'_>,
) -> Result<(f64, ReResult)> {
    if candidates.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let x0 = g.enhance(y)?;
    let mut best: Option<(f64, f64, ReResult)> = None;
    for gamma in sorted {
        let run_cfg = ReConfig { gamma, ..cfg.clone() };
        let res = refine(y, &x0, &run_cfg, g)?;
        let s = match score {
            GridScore::Reference(clean) => psnr(&res.x_star, clean)?,
            GridScore::NoReference => -res.stationarity_residual,
        };
        log::debug!("gamma {gamma:e}: score {s}");
        if best.as_ref().map_or(true, |(_, bs, _)| s > *bs) {
            best = Some((gamma, s, res));
        }
    }
    let (gamma, _, res) = best.expect("non-empty grid");
    Ok((gamma, res))
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}
