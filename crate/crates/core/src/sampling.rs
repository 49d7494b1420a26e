//! The observation model: rotated copies of a signal in complex Gaussian noise.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::model::SignalSpec;
use crate::rng::{stream_rng, Stream};

/// `N` observations of `K` complex Fourier coefficients, stored row-major.
///
/// Each entry is `r_k e^{i(φ_k + kα_m)} + σ ε̃`, with real and imaginary
/// parts of `ε̃` independent standard normals.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    k_max: usize,
    n: usize,
    sigma: f64,
    seed: u64,
    signal_hash: String,
    data: Vec<Complex64>,
}

impl SampleBatch {
    /// Wraps existing observations, e.g. read back from disk.
    pub fn from_parts(
        k_max: usize,
        sigma: f64,
        seed: u64,
        signal_hash: String,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        if k_max == 0 || data.is_empty() || !data.len().is_multiple_of(k_max) {
            return Err(invalid(format!(
                "{} values do not form a nonempty batch of rows of length {k_max}",
                data.len()
            )));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("sigma {sigma} must be finite and nonnegative")));
        }
        Ok(SampleBatch {
            k_max,
            n: data.len() / k_max,
            sigma,
            seed,
            signal_hash,
            data,
        })
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn signal_hash(&self) -> &str {
        &self.signal_hash
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row(&self, m: usize) -> &[Complex64] {
        &self.data[m * self.k_max..(m + 1) * self.k_max]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, Complex64> {
        self.data.chunks_exact(self.k_max)
    }
}

fn generate(signal: &SignalSpec, sigma: f64, n: usize, seed: u64, rotate: bool) -> SampleBatch {
    let k = signal.k_max();
    let theta = signal.to_complex();
    let mut rot = stream_rng(seed, Stream::Rotations);
    let mut noise = stream_rng(seed, Stream::Noise);
    let mut data = Vec::with_capacity(n * k);
    for _ in 0..n {
        let alpha: f64 = if rotate { rot.random_range(-PI..PI) } else { 0.0 };
        let step = Complex64::from_polar(1.0, alpha);
        let mut phase = step;
        for t in &theta {
            let re: f64 = noise.sample(StandardNormal);
            let im: f64 = noise.sample(StandardNormal);
            data.push(t * phase + sigma * Complex64::new(re, im));
            phase *= step;
        }
    }
    SampleBatch {
        k_max: k,
        n,
        sigma,
        seed,
        signal_hash: signal.content_hash(),
        data,
    }
}

fn check(sigma: f64, n: usize) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    if n == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    Ok(())
}

/// Draws `n` observations with uniform latent rotations.
pub fn sample(signal: &SignalSpec, sigma: f64, n: usize, seed: u64) -> Result<SampleBatch> {
    check(sigma, n)?;
    Ok(generate(signal, sigma, n, seed, true))
}

/// Draws `n` observations of the unrotated signal, `θ + σε`. The noise
/// stream is the same one [`sample`] uses for the same seed.
pub fn sample_unrotated(signal: &SignalSpec, sigma: f64, n: usize, seed: u64) -> Result<SampleBatch> {
    check(sigma, n)?;
    Ok(generate(signal, sigma, n, seed, false))
}

/// Debug mode: exact rotations of the signal with `σ = 0`.
pub fn sample_noiseless(signal: &SignalSpec, n: usize, seed: u64) -> Result<SampleBatch> {
    if n == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    Ok(generate(signal, 0.0, n, seed, true))
}
