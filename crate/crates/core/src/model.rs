//! Signals in Fourier sequence space, the rotation action, circular geometry
//! and the rotation-invariant loss.
//!
//! A band-limited signal is stored as `K` (magnitude, phase) pairs. The real
//! coordinate vector interleaves `(r_k cos φ_k, r_k sin φ_k)` for
//! `k = 1..=K`, and the complex form is `r_k e^{iφ_k}`. Rotating the domain
//! by `α` multiplies frequency `k` by `e^{ikα}`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, invalid, MraError, Result};
use crate::rng::{stream_rng, Stream};

/// Reduces an angle to `[-π, π)`. `π` maps to `-π`.
pub fn wrap_phase(x: f64) -> f64 {
    if (-PI..PI).contains(&x) {
        return x;
    }
    let mut y = (x + PI).rem_euclid(TAU) - PI;
    // rem_euclid may round up to exactly TAU
    if y >= PI {
        y -= TAU;
    }
    y
}

/// Principal argument in `[-π, π)`, with `Arg(0) = 0`.
pub fn principal_arg(z: Complex64) -> f64 {
    wrap_phase(z.im.atan2(z.re))
}

/// Circular distance `min_j |a - b + 2πj|`, always in `[0, π]`.
pub fn circ_dist(a: f64, b: f64) -> f64 {
    wrap_phase(a - b).abs()
}

/// A rotation angle, stored as its representative in `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationAngle(f64);

impl RotationAngle {
    pub fn new(alpha: f64) -> Self {
        RotationAngle(wrap_phase(alpha))
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

impl From<f64> for RotationAngle {
    fn from(alpha: f64) -> Self {
        RotationAngle::new(alpha)
    }
}

#[derive(Serialize, Deserialize)]
struct SignalRepr {
    k: usize,
    magnitudes: Vec<f64>,
    phases: Vec<f64>,
}

/// Fourier magnitudes and phases of a band-limited signal.
///
/// Phases are canonical: in `[-π, π)`, and exactly `0` wherever the
/// magnitude is `0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SignalRepr", into = "SignalRepr")]
pub struct SignalSpec {
    magnitudes: Vec<f64>,
    phases: Vec<f64>,
}

impl TryFrom<SignalRepr> for SignalSpec {
    type Error = MraError;

    fn try_from(repr: SignalRepr) -> Result<Self> {
        check_dim(repr.k, repr.magnitudes.len())?;
        SignalSpec::new(repr.magnitudes, repr.phases)
    }
}

impl From<SignalSpec> for SignalRepr {
    fn from(s: SignalSpec) -> Self {
        SignalRepr {
            k: s.k_max(),
            magnitudes: s.magnitudes,
            phases: s.phases,
        }
    }
}

impl SignalSpec {
    pub fn new(magnitudes: Vec<f64>, phases: Vec<f64>) -> Result<Self> {
        check_dim(magnitudes.len(), phases.len())?;
        if magnitudes.is_empty() {
            return Err(invalid("a signal needs at least one frequency"));
        }
        if let Some(r) = magnitudes.iter().find(|r| !r.is_finite() || **r < 0.0) {
            return Err(invalid(format!("magnitude {r} is not a finite nonnegative number")));
        }
        if phases.iter().any(|p| !p.is_finite()) {
            return Err(MraError::NonFinite("phase".into()));
        }
        let phases = magnitudes
            .iter()
            .zip(&phases)
            .map(|(&r, &p)| if r == 0.0 { 0.0 } else { wrap_phase(p) })
            .collect();
        Ok(SignalSpec { magnitudes, phases })
    }

    pub fn from_complex(coeffs: &[Complex64]) -> Result<Self> {
        let magnitudes = coeffs.iter().map(|z| z.norm()).collect();
        let phases = coeffs.iter().map(|&z| principal_arg(z)).collect();
        SignalSpec::new(magnitudes, phases)
    }

    /// Builds a signal from interleaved real coordinates `(Re θ̃_1, Im θ̃_1, …)`.
    pub fn from_real(coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(2) {
            return Err(invalid("real coordinate vector must have even length"));
        }
        let coeffs: Vec<Complex64> = coords
            .chunks_exact(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect();
        SignalSpec::from_complex(&coeffs)
    }

    pub fn k_max(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.magnitudes
            .iter()
            .zip(&self.phases)
            .map(|(&r, &p)| Complex64::from_polar(r, p))
            .collect()
    }

    pub fn to_real(&self) -> Vec<f64> {
        self.to_complex().iter().flat_map(|z| [z.re, z.im]).collect()
    }

    pub fn norm_sq(&self) -> f64 {
        self.magnitudes.iter().map(|r| r * r).sum()
    }

    /// Applies the domain rotation: `φ_k ↦ φ_k + kα`.
    pub fn rotate(&self, alpha: impl Into<RotationAngle>) -> SignalSpec {
        let alpha = alpha.into().radians();
        let phases = self
            .phases
            .iter()
            .enumerate()
            .map(|(i, &p)| p + (i + 1) as f64 * alpha)
            .collect();
        SignalSpec::new(self.magnitudes.clone(), phases).expect("rotation keeps a valid signal")
    }

    /// Tangent to the rotation orbit at this point, `d/dα g(α)θ |_{α=0}`, in
    /// real coordinates.
    pub fn orbit_tangent(&self) -> Vec<f64> {
        self.to_complex()
            .iter()
            .enumerate()
            .flat_map(|(i, z)| {
                let k = (i + 1) as f64;
                [-k * z.im, k * z.re]
            })
            .collect()
    }

    /// Hex SHA-256 of the little-endian encoding of `K`, magnitudes, phases.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.k_max() as u64).to_le_bytes());
        for v in self.magnitudes.iter().chain(&self.phases) {
            h.update(v.to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }
}

/// Result of aligning one signal to the orbit of another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    /// `min_α ‖θ̂ - g(α)θ‖²`.
    pub loss: f64,
    /// The minimizing `α` in `[-π, π)`; `θ̂ ≈ g(α)θ`.
    pub alpha: f64,
}

/// Minimizes a continuous `2π`-periodic function by a uniform grid scan
/// followed by golden-section search on the bracket around the best node.
/// Returns `(argmin, min)`.
pub(crate) fn minimize_periodic(f: impl Fn(f64) -> f64, grid: usize) -> (f64, f64) {
    let h = TAU / grid as f64;
    let (mut best_a, mut best_v) = (-PI, f(-PI));
    for i in 1..grid {
        let a = -PI + i as f64 * h;
        let v = f(a);
        if v < best_v {
            best_a = a;
            best_v = v;
        }
    }
    let (a, v) = golden_section(&f, best_a - h, best_a + h, 1e-13);
    if v < best_v {
        (a, v)
    } else {
        (best_a, best_v)
    }
}

pub(crate) fn golden_section(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

fn loss_grid_size(k: usize) -> usize {
    (64 * k).max(1024)
}

/// Aligns `theta` to `theta_hat`: finds `α` minimizing `‖θ̂ - g(α)θ‖²`.
pub fn align(theta_hat: &SignalSpec, theta: &SignalSpec) -> Result<Alignment> {
    check_dim(theta_hat.k_max(), theta.k_max())?;
    let k = theta.k_max();
    let radial: f64 = theta_hat
        .magnitudes
        .iter()
        .zip(&theta.magnitudes)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let weights: Vec<f64> = theta_hat
        .magnitudes
        .iter()
        .zip(&theta.magnitudes)
        .map(|(a, b)| 2.0 * a * b)
        .collect();
    let deltas: Vec<f64> = theta_hat
        .phases
        .iter()
        .zip(&theta.phases)
        .map(|(a, b)| a - b)
        .collect();

    // 1 - cos t written as 2 sin²(t/2) keeps precision near the minimum
    let angular = |alpha: f64| -> f64 {
        weights
            .iter()
            .zip(&deltas)
            .enumerate()
            .map(|(i, (w, d))| {
                let s = ((d - (i + 1) as f64 * alpha) * 0.5).sin();
                2.0 * w * s * s
            })
            .sum()
    };

    let (mut alpha, mut value) = minimize_periodic(angular, loss_grid_size(k));

    // Newton polish on the derivative; the golden-section bracket already
    // sits inside the global basin. Golden section alone only pins alpha to
    // about sqrt(eps) where the objective is flat at rounding level, so steps
    // that raise the value by rounding noise are still taken.
    let noise = 8.0 * f64::EPSILON * weights.iter().sum::<f64>();
    for _ in 0..8 {
        let (mut d1, mut d2) = (0.0, 0.0);
        for (i, (w, d)) in weights.iter().zip(&deltas).enumerate() {
            let kk = (i + 1) as f64;
            let t = d - kk * alpha;
            d1 -= w * kk * t.sin();
            d2 += w * kk * kk * t.cos();
        }
        if d2 <= 0.0 {
            break;
        }
        let step = d1 / d2;
        let v = angular(alpha - step);
        if v > value + noise {
            break;
        }
        alpha -= step;
        value = value.min(v);
        if step.abs() < 1e-15 {
            break;
        }
    }

    Ok(Alignment {
        loss: radial + value.max(0.0),
        alpha: wrap_phase(alpha),
    })
}

/// Rotation-invariant loss `min_α ‖θ̂ - g(α)θ‖²`.
pub fn loss(theta_hat: &SignalSpec, theta: &SignalSpec) -> Result<f64> {
    align(theta_hat, theta).map(|a| a.loss)
}

/// Squared Euclidean distance in the real `2K` coordinates.
pub fn squared_distance(a: &SignalSpec, b: &SignalSpec) -> Result<f64> {
    check_dim(a.k_max(), b.k_max())?;
    Ok(a.to_complex()
        .iter()
        .zip(b.to_complex())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum())
}

/// Draws a signal from the generic class: magnitudes uniform on
/// `[c_lo·r, c_hi·r]`, phases uniform on `[-π, π)`.
pub fn generic_signal(k_max: usize, r: f64, c_lo: f64, c_hi: f64, seed: u64) -> Result<SignalSpec> {
    if k_max == 0 {
        return Err(invalid("k_max must be positive"));
    }
    if !(r > 0.0 && c_lo > 0.0 && c_lo <= c_hi && c_hi.is_finite() && r.is_finite()) {
        return Err(invalid(format!(
            "need r > 0 and 0 < c_lo <= c_hi, got r={r}, c_lo={c_lo}, c_hi={c_hi}"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Signal);
    let (lo, hi) = (c_lo * r, c_hi * r);
    let mut magnitudes = Vec::with_capacity(k_max);
    let mut phases = Vec::with_capacity(k_max);
    for _ in 0..k_max {
        magnitudes.push(if lo == hi { lo } else { rng.random_range(lo..=hi) });
        phases.push(rng.random_range(-PI..PI));
    }
    SignalSpec::new(magnitudes, phases)
}

/// Vertex of the hypercube family: bit pattern `tau` and phase offset `phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct HypercubeLabel {
    tau: Vec<bool>,
    phi: f64,
}

impl HypercubeLabel {
    pub fn new(tau: Vec<bool>, phi: f64) -> Result<Self> {
        if !(0.0..=PI / 3.0).contains(&phi) {
            return Err(invalid(format!("hypercube offset {phi} outside [0, π/3]")));
        }
        Ok(HypercubeLabel { tau, phi })
    }

    /// Uniformly random vertex.
    pub fn random(k_max: usize, phi: f64, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, Stream::Hypercube);
        let tau = (0..k_max).map(|_| rng.random::<bool>()).collect();
        HypercubeLabel::new(tau, phi)
    }

    pub fn tau(&self) -> &[bool] {
        &self.tau
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn hamming(&self, other: &HypercubeLabel) -> usize {
        self.tau.iter().zip(&other.tau).filter(|(a, b)| a != b).count()
    }
}

/// Equal magnitudes `r`, phases `τ_k · φ`.
pub fn hypercube_signal(k_max: usize, r: f64, label: &HypercubeLabel) -> Result<SignalSpec> {
    check_dim(k_max, label.tau.len())?;
    if !(r >= 0.0 && r.is_finite()) {
        return Err(invalid(format!("magnitude {r} must be finite and nonnegative")));
    }
    let phases = label.tau.iter().map(|&t| if t { label.phi } else { 0.0 }).collect();
    SignalSpec::new(vec![r; k_max], phases)
}

/// Hypercube offset that keeps adjacent vertices within KL `1/N` of each
/// other under the better of the two KL bounds, capped at `π/3`.
pub fn assouad_phi(k_max: usize, r: f64, sigma: f64, n: usize) -> Result<f64> {
    if k_max == 0 || n == 0 || !(r > 0.0) || !(sigma > 0.0) {
        return Err(invalid("assouad_phi needs positive k, r, sigma and n"));
    }
    let k = k_max as f64;
    let s2 = sigma * sigma;
    let exponent = 3.0 * k * r * r / (2.0 * s2);
    let a = if exponent > 700.0 {
        0.0
    } else {
        2.0 * s2 * s2 * s2 / (3.0 * k * r.powi(4) * exponent.exp())
    };
    let spread = (2.0 * s2).sqrt().max(a.sqrt());
    Ok((spread / (r * (n as f64).sqrt())).min(PI / 3.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlBound {
    /// `‖θ - θ'‖² / 2σ²`.
    LowNoise,
    /// The moment-matching bound, with the phase term minimized over
    /// rotations using circular distances.
    HighNoise,
}

/// Upper bound on `KL(p_θ ‖ p_θ')` between the rotation-marginalized
/// observation laws.
pub fn kl_upper_gaussian(theta: &SignalSpec, theta_p: &SignalSpec, sigma: f64, bound: KlBound) -> Result<f64> {
    check_dim(theta.k_max(), theta_p.k_max())?;
    if !(sigma > 0.0) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    let s2 = sigma * sigma;
    match bound {
        KlBound::LowNoise => Ok(squared_distance(theta, theta_p)? / (2.0 * s2)),
        KlBound::HighNoise => {
            let (r, rp) = (theta.magnitudes(), theta_p.magnitudes());
            let big_r2 = theta.norm_sq().max(theta_p.norm_sq());
            let r_bar = r.iter().chain(rp).fold(0.0f64, |m, &x| m.max(x));
            let second: f64 = r.iter().zip(rp).map(|(a, b)| (a * a - b * b).powi(2)).sum();
            let radial: f64 = r.iter().zip(rp).map(|(a, b)| (a - b).powi(2)).sum();
            let deltas: Vec<f64> = theta
                .phases()
                .iter()
                .zip(theta_p.phases())
                .map(|(a, b)| a - b)
                .collect();
            let phase_term = |alpha: f64| -> f64 {
                deltas
                    .iter()
                    .enumerate()
                    .map(|(i, d)| {
                        let t = wrap_phase(d + (i + 1) as f64 * alpha);
                        r[i] * rp[i] * t * t
                    })
                    .sum()
            };
            let (_, third) = minimize_periodic(phase_term, loss_grid_size(theta.k_max()));
            let c2 = (big_r2 / (2.0 * s2)).exp() / (4.0 * s2 * s2);
            let c3 = 3.0 * r_bar * r_bar * big_r2 * (3.0 * big_r2 / (2.0 * s2)).exp() / (2.0 * s2 * s2 * s2);
            Ok(c2 * second + c3 * (radial + third))
        }
    }
}
