//! Rotation-marginalized maximum likelihood.
//!
//! The density of one observation integrates the Gaussian likelihood over a
//! uniform latent rotation. On a uniform grid of `Q` angles the integral is
//! the periodic trapezoid rule, and every per-sample term is a log-sum-exp of
//! `⟨y, g(α_q)θ⟩ / σ²` evaluated with the per-sample maximum subtracted.
//!
//! Gradient and Hessian come from the tilted law over angles with weights
//! `∝ exp(⟨y, g(α)θ⟩ / σ²)`: the gradient is `θ/σ²` minus the average tilted
//! mean of `g(α)⁻¹y`, over `σ²`, and the Hessian subtracts the tilted
//! covariance over `σ⁴`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::bispectrum::{mom_estimate, PilotMode};
use crate::error::{check_dim, invalid, MraError, Result};
use crate::model::{align, SignalSpec};
use crate::sampling::SampleBatch;

const CHUNK_ROWS: usize = 256;

/// Weights below `e^{-60}` of the peak are dropped.
const LOG_WEIGHT_CUTOFF: f64 = -60.0;

/// Uniform nodes on `[-π, π)` with equal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
}

impl QuadratureGrid {
    pub const MIN_NODES: usize = 64;

    pub fn new(q: usize) -> Result<Self> {
        if q < Self::MIN_NODES {
            return Err(invalid(format!("quadrature needs at least {} nodes, got {q}", Self::MIN_NODES)));
        }
        let h = TAU / q as f64;
        Ok(QuadratureGrid {
            nodes: (0..q).map(|i| -PI + i as f64 * h).collect(),
        })
    }

    /// Smallest power-of-two grid with spacing at most `max_spacing`.
    pub fn with_resolution(max_spacing: f64) -> Result<Self> {
        if !(max_spacing > 0.0) {
            return Err(invalid("resolution must be positive"));
        }
        let q = ((TAU / max_spacing).ceil() as usize).max(Self::MIN_NODES);
        QuadratureGrid::new(q.next_power_of_two())
    }

    /// `max(1024, ⌈16 K^{3/2} r_max / σ⌉)` rounded up to a power of two: at
    /// least 16 nodes across the width of the tilted peak.
    pub fn for_problem(k_max: usize, r_max: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(invalid(format!("sigma must be positive, got {sigma}")));
        }
        let want = (16.0 * (k_max as f64).powf(1.5) * r_max / sigma).ceil();
        let q = if want.is_finite() { (want as usize).max(1024) } else { 1024 };
        QuadratureGrid::new(q.next_power_of_two())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn spacing(&self) -> f64 {
        TAU / self.nodes.len() as f64
    }

    /// `e^{-ikα_q}` for `k = 1..=K`, row-major by node.
    fn inverse_twiddles(&self, k_max: usize) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.nodes.len() * k_max);
        for &a in &self.nodes {
            for k in 1..=k_max {
                out.push(Complex64::from_polar(1.0, -(k as f64) * a));
            }
        }
        out
    }
}

/// One observation's tilted law on the grid, with negligible nodes dropped.
struct Tilt {
    /// `log( (1/Q) Σ_q exp(s_q) )`.
    log_avg: f64,
    /// `(node, normalized weight)`.
    weights: Vec<(usize, f64)>,
}

struct Kernel<'a> {
    k_max: usize,
    theta: Vec<Complex64>,
    inv_sigma2: f64,
    twiddles: &'a [Complex64],
    q: usize,
}

impl Kernel<'_> {
    fn tilt(&self, y: &[Complex64], scratch: &mut Vec<f64>) -> Tilt {
        let k = self.k_max;
        let coef: Vec<Complex64> = y
            .iter()
            .zip(&self.theta)
            .map(|(a, b)| a * b.conj() * self.inv_sigma2)
            .collect();
        scratch.clear();
        let mut peak = f64::NEG_INFINITY;
        for row in self.twiddles.chunks_exact(k) {
            let s: f64 = coef.iter().zip(row).map(|(c, e)| c.re * e.re - c.im * e.im).sum();
            peak = peak.max(s);
            scratch.push(s);
        }
        let mut weights = Vec::new();
        let mut total = 0.0;
        for (q, &s) in scratch.iter().enumerate() {
            let d = s - peak;
            if d > LOG_WEIGHT_CUTOFF {
                let w = d.exp();
                total += w;
                weights.push((q, w));
            }
        }
        for w in &mut weights {
            w.1 /= total;
        }
        Tilt {
            log_avg: peak + (total / self.q as f64).ln(),
            weights,
        }
    }

    /// Tilted mean of `g(α)⁻¹y` in complex form.
    fn tilted_mean(&self, y: &[Complex64], tilt: &Tilt) -> Vec<Complex64> {
        let k = self.k_max;
        let mut avg = vec![Complex64::new(0.0, 0.0); k];
        for &(q, w) in &tilt.weights {
            for (a, e) in avg.iter_mut().zip(&self.twiddles[q * k..(q + 1) * k]) {
                *a += w * e;
            }
        }
        avg.iter().zip(y).map(|(a, yk)| a * yk).collect()
    }

    /// Tilted variance of `⟨g(α)⁻¹y, v⟩` for `v` in complex form.
    fn tilted_variance(&self, y: &[Complex64], v: &[Complex64], tilt: &Tilt) -> f64 {
        let k = self.k_max;
        let coef: Vec<Complex64> = y.iter().zip(v).map(|(a, b)| a * b.conj()).collect();
        let proj = |q: usize| -> f64 {
            coef.iter()
                .zip(&self.twiddles[q * k..(q + 1) * k])
                .map(|(c, e)| c.re * e.re - c.im * e.im)
                .sum()
        };
        let vals: Vec<(f64, f64)> = tilt.weights.iter().map(|&(q, w)| (w, proj(q))).collect();
        let mean: f64 = vals.iter().map(|(w, t)| w * t).sum();
        vals.iter().map(|(w, t)| w * (t - mean) * (t - mean)).sum::<f64>().max(0.0)
    }
}

fn check_problem(theta: &SignalSpec, batch: &SampleBatch) -> Result<()> {
    check_dim(batch.k_max(), theta.k_max())?;
    if !(batch.sigma() > 0.0) {
        return Err(invalid("likelihood needs sigma > 0"));
    }
    Ok(())
}

fn to_complex_pairs(v: &[f64]) -> Vec<Complex64> {
    v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

#[derive(Debug, Clone, Copy, Default)]
struct Accum {
    log_avg: f64,
    norm_y: f64,
    variance: f64,
}

/// Per-sample reduction over the batch in fixed chunk order. Returns the
/// summed scalars and, when `want_mean`, the summed tilted means.
fn reduce(
    theta: &SignalSpec,
    batch: &SampleBatch,
    quad: &QuadratureGrid,
    want_mean: bool,
    direction: Option<&[Complex64]>,
) -> Result<(Accum, Vec<Complex64>)> {
    check_problem(theta, batch)?;
    let k = theta.k_max();
    let twiddles = quad.inverse_twiddles(k);
    let kernel = Kernel {
        k_max: k,
        theta: theta.to_complex(),
        inv_sigma2: 1.0 / (batch.sigma() * batch.sigma()),
        twiddles: &twiddles,
        q: quad.len(),
    };
    let partials: Vec<(Accum, Vec<Complex64>)> = batch
        .data()
        .par_chunks(CHUNK_ROWS * k)
        .map(|chunk| {
            let mut acc = Accum::default();
            let mut mean = vec![Complex64::new(0.0, 0.0); if want_mean { k } else { 0 }];
            let mut scratch = Vec::with_capacity(kernel.q);
            for y in chunk.chunks_exact(k) {
                let tilt = kernel.tilt(y, &mut scratch);
                acc.log_avg += tilt.log_avg;
                acc.norm_y += y.iter().map(|z| z.norm_sqr()).sum::<f64>();
                if want_mean {
                    for (m, t) in mean.iter_mut().zip(kernel.tilted_mean(y, &tilt)) {
                        *m += t;
                    }
                }
                if let Some(v) = direction {
                    acc.variance += kernel.tilted_variance(y, v, &tilt);
                }
            }
            (acc, mean)
        })
        .collect();
    let mut total = Accum::default();
    let mut mean = vec![Complex64::new(0.0, 0.0); if want_mean { k } else { 0 }];
    for (a, m) in partials {
        total.log_avg += a.log_avg;
        total.norm_y += a.norm_y;
        total.variance += a.variance;
        for (x, y) in mean.iter_mut().zip(m) {
            *x += y;
        }
    }
    if !total.log_avg.is_finite() {
        return Err(MraError::NonFinite("log-likelihood quadrature".into()));
    }
    Ok((total, mean))
}

fn objective_from(theta: &SignalSpec, batch: &SampleBatch, acc: &Accum) -> f64 {
    let s2 = batch.sigma() * batch.sigma();
    let n = batch.n() as f64;
    theta.k_max() as f64 * (TAU * s2).ln() + theta.norm_sq() / (2.0 * s2) + acc.norm_y / (2.0 * s2 * n)
        - acc.log_avg / n
}

fn gradient_from(theta: &SignalSpec, batch: &SampleBatch, mean: &[Complex64]) -> Vec<f64> {
    let s2 = batch.sigma() * batch.sigma();
    let n = batch.n() as f64;
    theta
        .to_complex()
        .iter()
        .zip(mean)
        .flat_map(|(t, m)| {
            let g = (t - m / n) / s2;
            [g.re, g.im]
        })
        .collect()
}

/// Negative average log-likelihood `R_N(θ)`.
pub fn neg_loglik(theta: &SignalSpec, batch: &SampleBatch, quad: &QuadratureGrid) -> Result<f64> {
    let (acc, _) = reduce(theta, batch, quad, false, None)?;
    let r = objective_from(theta, batch, &acc);
    if r.is_finite() {
        Ok(r)
    } else {
        Err(MraError::NonFinite("negative log-likelihood".into()))
    }
}

/// `∇R_N(θ)` in interleaved real coordinates.
pub fn grad_neg_loglik(theta: &SignalSpec, batch: &SampleBatch, quad: &QuadratureGrid) -> Result<Vec<f64>> {
    let (_, mean) = reduce(theta, batch, quad, true, None)?;
    Ok(gradient_from(theta, batch, &mean))
}

/// `R_N(θ)` and its gradient from one pass over the batch.
pub fn neg_loglik_with_grad(theta: &SignalSpec, batch: &SampleBatch, quad: &QuadratureGrid) -> Result<(f64, Vec<f64>)> {
    let (acc, mean) = reduce(theta, batch, quad, true, None)?;
    let r = objective_from(theta, batch, &acc);
    if !r.is_finite() {
        return Err(MraError::NonFinite("negative log-likelihood".into()));
    }
    Ok((r, gradient_from(theta, batch, &mean)))
}

/// `vᵀ∇²R_N(θ)v` for a unit vector `v` in real coordinates.
pub fn hessian_quadform(theta: &SignalSpec, v: &[f64], batch: &SampleBatch, quad: &QuadratureGrid) -> Result<f64> {
    check_dim(2 * theta.k_max(), v.len())?;
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("direction must be a unit vector, has norm {norm}")));
    }
    let vc = to_complex_pairs(v);
    let (acc, _) = reduce(theta, batch, quad, false, Some(&vc))?;
    let s2 = batch.sigma() * batch.sigma();
    Ok(1.0 / s2 - acc.variance / (batch.n() as f64 * s2 * s2))
}

/// Moments of the tilted law for a single observation.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedMoments {
    /// Tilted mean of `g(α)⁻¹y`, interleaved real coordinates.
    pub mean_vec: Vec<f64>,
    /// Tilted variance of `⟨g(α)⁻¹y, v⟩` when a direction was given.
    pub directional_variance: Option<f64>,
    /// `log( (1/2π) ∫ exp(⟨y, g(α)θ⟩/σ²) dα )` on the grid.
    pub log_partition: f64,
}

fn single_kernel<'a>(theta: &SignalSpec, y: &[Complex64], sigma: f64, twiddles: &'a [Complex64], q: usize) -> Result<Kernel<'a>> {
    check_dim(theta.k_max(), y.len())?;
    if !(sigma > 0.0) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    Ok(Kernel {
        k_max: theta.k_max(),
        theta: theta.to_complex(),
        inv_sigma2: 1.0 / (sigma * sigma),
        twiddles,
        q,
    })
}

pub fn tilted_moments(
    theta: &SignalSpec,
    y: &[Complex64],
    v: Option<&[f64]>,
    sigma: f64,
    quad: &QuadratureGrid,
) -> Result<TiltedMoments> {
    let twiddles = quad.inverse_twiddles(theta.k_max());
    let kernel = single_kernel(theta, y, sigma, &twiddles, quad.len())?;
    let tilt = kernel.tilt(y, &mut Vec::with_capacity(quad.len()));
    if !tilt.log_avg.is_finite() {
        return Err(MraError::NonFinite("tilted law normalization".into()));
    }
    let directional_variance = match v {
        Some(v) => {
            check_dim(2 * theta.k_max(), v.len())?;
            Some(kernel.tilted_variance(y, &to_complex_pairs(v), &tilt))
        }
        None => None,
    };
    Ok(TiltedMoments {
        mean_vec: kernel.tilted_mean(y, &tilt).iter().flat_map(|z| [z.re, z.im]).collect(),
        directional_variance,
        log_partition: tilt.log_avg,
    })
}

/// Normalized tilted weights on every grid node.
pub fn tilted_weights(theta: &SignalSpec, y: &[Complex64], sigma: f64, quad: &QuadratureGrid) -> Result<Vec<f64>> {
    let twiddles = quad.inverse_twiddles(theta.k_max());
    let kernel = single_kernel(theta, y, sigma, &twiddles, quad.len())?;
    let tilt = kernel.tilt(y, &mut Vec::with_capacity(quad.len()));
    if !tilt.log_avg.is_finite() {
        return Err(MraError::NonFinite("tilted law normalization".into()));
    }
    let mut out = vec![0.0; quad.len()];
    for (q, w) in tilt.weights {
        out[q] = w;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Stop once `‖∇R_N‖` falls to this; `None` uses `1e-6 · sqrt(2K/σ²)`.
    pub grad_tol: Option<f64>,
    /// First trial step of each line search, in units of `σ²`.
    pub initial_step: f64,
    pub shrink: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 500,
            grad_tol: None,
            initial_step: 1.0,
            shrink: 0.5,
            armijo: 1e-4,
            max_backtracks: 40,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let tol_ok = self.grad_tol.is_none_or(|t| t > 0.0);
        if self.max_iters == 0
            || !tol_ok
            || !(self.initial_step > 0.0)
            || !(self.shrink > 0.0 && self.shrink < 1.0)
            || !(self.armijo > 0.0)
            || self.max_backtracks == 0
        {
            return Err(invalid(format!("invalid optimizer configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub r_n: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MleWarning {
    NotConverged,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct MleEstimate {
    /// Final iterate, rotated to the representative closest to the init.
    pub signal: SignalSpec,
    pub r_n: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub warning: Option<MleWarning>,
    pub trace: Vec<TraceEntry>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient descent with Armijo backtracking on `R_N`, started at `init`.
///
/// With the default unit step (in `σ²` units) an accepted step is exactly
/// the average tilted mean, a fixed-point update on the likelihood.
pub fn mle_estimate(
    batch: &SampleBatch,
    init: &SignalSpec,
    cfg: &OptimizerConfig,
    quad: &QuadratureGrid,
) -> Result<MleEstimate> {
    cfg.validate()?;
    check_problem(init, batch)?;
    let s2 = batch.sigma() * batch.sigma();
    let k = init.k_max();
    let tol = cfg.grad_tol.unwrap_or(1e-6 * (2.0 * k as f64 / s2).sqrt());

    let mut x = init.to_real();
    let mut theta = init.clone();
    let (mut r, mut g) = neg_loglik_with_grad(&theta, batch, quad)?;
    let mut gn = norm(&g);
    let mut trace = vec![TraceEntry { iter: 0, r_n: r, grad_norm: gn, step: 0.0 }];
    let mut warning = None;
    let mut iterations = 0;

    loop {
        if gn <= tol {
            break;
        }
        if iterations == cfg.max_iters {
            warning = Some(MleWarning::NotConverged);
            break;
        }
        iterations += 1;
        let mut step = cfg.initial_step * s2;
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let cand = SignalSpec::from_real(&trial)?;
            let (rt, gt) = neg_loglik_with_grad(&cand, batch, quad)?;
            if rt <= r - cfg.armijo * step * gn * gn {
                accepted = Some((trial, cand, rt, gt));
                break;
            }
            step *= cfg.shrink;
        }
        match accepted {
            Some((xt, ct, rt, gt)) => {
                x = xt;
                theta = ct;
                r = rt;
                g = gt;
                gn = norm(&g);
                trace.push(TraceEntry { iter: iterations, r_n: r, grad_norm: gn, step });
            }
            None => {
                warning = Some(MleWarning::LineSearchFailed);
                break;
            }
        }
    }

    let alignment = align(&theta, init)?;
    Ok(MleEstimate {
        signal: theta.rotate(-alignment.alpha),
        r_n: r,
        grad_norm: gn,
        iterations,
        warning,
        trace,
    })
}

/// Default pipeline: frequency-marching method of moments, then descent on
/// the quadrature chosen from the moment estimate's largest magnitude.
pub fn mle_from_mom(batch: &SampleBatch, cfg: &OptimizerConfig) -> Result<MleEstimate> {
    let init = mom_estimate(batch, &PilotMode::FrequencyMarching)?.signal;
    let r_max = init.magnitudes().iter().cloned().fold(0.0, f64::max);
    let quad = QuadratureGrid::for_problem(init.k_max(), r_max, batch.sigma())?;
    mle_estimate(batch, &init, cfg, &quad)
}
