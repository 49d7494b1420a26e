//! Third-order method of moments: power spectrum and bispectrum estimates,
//! phase unwrapping, and least-squares bispectrum inversion.
//!
//! The bispectrum `B_{k,l} = θ̃_{k+l} conj(θ̃_k) conj(θ̃_l)` is invariant to
//! domain rotations, and its phase is `Φ_{k,l} = φ_{k+l} - φ_k - φ_l`. Its
//! estimate only determines that phase modulo `2π`, so a real lift is chosen
//! around a pilot before solving `Φ = Mφ` in least squares.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{check_dim, invalid, Result};
use crate::model::{circ_dist, golden_section, principal_arg, wrap_phase, SignalSpec};
use crate::sampling::SampleBatch;

/// Rows per partial sum. Partials are combined in index order so the result
/// does not depend on the thread count.
const CHUNK_ROWS: usize = 4096;

/// Below this modulus a bispectrum entry's phase is treated as meaningless.
pub const WEAK_BISPECTRUM: f64 = 1e-12;

/// Ordered pairs `(k, l)` with `k, l ≥ 1` and `k + l ≤ K`, lexicographic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BispectrumIndexSet {
    k_max: usize,
    pairs: Vec<(usize, usize)>,
}

impl BispectrumIndexSet {
    pub fn new(k_max: usize) -> Self {
        let pairs = (1..k_max)
            .flat_map(|k| (1..=k_max - k).map(move |l| (k, l)))
            .collect();
        BispectrumIndexSet { k_max, pairs }
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Position of `(k, l)` in [`pairs`](Self::pairs).
    pub fn position(&self, k: usize, l: usize) -> Option<usize> {
        if k == 0 || l == 0 || k + l > self.k_max {
            return None;
        }
        Some((k - 1) * self.k_max - (k - 1) * k / 2 + (l - 1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BispectrumEstimate {
    pub r_hat: Vec<f64>,
    pub b_hat: Vec<Complex64>,
    pub index: BispectrumIndexSet,
    pub n: usize,
}

impl BispectrumEstimate {
    pub fn k_max(&self) -> usize {
        self.index.k_max()
    }

    /// Principal arguments of `B̂`, in index order.
    pub fn args(&self) -> Vec<f64> {
        self.b_hat.iter().map(|&b| principal_arg(b)).collect()
    }

    /// Number of entries whose modulus is below [`WEAK_BISPECTRUM`].
    pub fn weak_count(&self) -> usize {
        self.b_hat.iter().filter(|b| b.norm() < WEAK_BISPECTRUM).count()
    }
}

fn check_batch(batch: &SampleBatch) -> Result<()> {
    if batch.n() == 0 {
        return Err(invalid("empty batch"));
    }
    Ok(())
}

/// `r̂_k = (mean_m |ỹ_k|² - 2σ²)_+^{1/2}`.
pub fn estimate_power(batch: &SampleBatch) -> Result<Vec<f64>> {
    check_batch(batch)?;
    let k = batch.k_max();
    let partials: Vec<Vec<f64>> = batch
        .data()
        .par_chunks(CHUNK_ROWS * k)
        .map(|chunk| {
            let mut acc = vec![0.0; k];
            for row in chunk.chunks_exact(k) {
                for (a, y) in acc.iter_mut().zip(row) {
                    *a += y.norm_sqr();
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; k];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let n = batch.n() as f64;
    let bias = 2.0 * batch.sigma() * batch.sigma();
    Ok(total.iter().map(|s| (s / n - bias).max(0.0).sqrt()).collect())
}

/// `B̂_{k,l} = mean_m ỹ_{k+l} conj(ỹ_k) conj(ỹ_l)` over the index set.
pub fn estimate_bispectrum(batch: &SampleBatch) -> Result<BispectrumEstimate> {
    check_batch(batch)?;
    let k = batch.k_max();
    let index = BispectrumIndexSet::new(k);
    let pairs = index.pairs();
    let partials: Vec<Vec<Complex64>> = batch
        .data()
        .par_chunks(CHUNK_ROWS * k)
        .map(|chunk| {
            let mut acc = vec![Complex64::new(0.0, 0.0); pairs.len()];
            let mut conj = vec![Complex64::new(0.0, 0.0); k];
            for row in chunk.chunks_exact(k) {
                for (c, y) in conj.iter_mut().zip(row) {
                    *c = y.conj();
                }
                for (a, &(p, q)) in acc.iter_mut().zip(pairs) {
                    *a += row[p + q - 1] * conj[p - 1] * conj[q - 1];
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Complex64::new(0.0, 0.0); pairs.len()];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let n = batch.n() as f64;
    let b_hat = total.into_iter().map(|s| s / n).collect();
    Ok(BispectrumEstimate {
        r_hat: estimate_power(batch)?,
        b_hat,
        index,
        n: batch.n(),
    })
}

/// The linear map `φ ↦ Φ`, row `(k, l)` being `e_{k+l} - e_k - e_l`.
///
/// `M` has rank `K - 1` with kernel spanned by `(1, 2, …, K)`, and the nonzero
/// eigenvalues of `MᵀM` are integers in `[K + 1, 2K + 1]`.
#[derive(Debug, Clone)]
pub struct PhaseSystem {
    index: BispectrumIndexSet,
    kernel_dir: Vec<f64>,
}

pub fn build_phase_system(k_max: usize) -> Result<PhaseSystem> {
    if k_max < 2 {
        return Err(invalid(format!("phase system needs K >= 2, got {k_max}")));
    }
    let norm = ((k_max * (k_max + 1) * (2 * k_max + 1)) as f64 / 6.0).sqrt();
    Ok(PhaseSystem {
        index: BispectrumIndexSet::new(k_max),
        kernel_dir: (1..=k_max).map(|k| k as f64 / norm).collect(),
    })
}

impl PhaseSystem {
    pub fn k_max(&self) -> usize {
        self.index.k_max()
    }

    pub fn index(&self) -> &BispectrumIndexSet {
        &self.index
    }

    /// Unit vector along `(1, 2, …, K)`.
    pub fn kernel_dir(&self) -> &[f64] {
        &self.kernel_dir
    }

    /// Sparse row as `(column, coefficient)` entries; the `k = l` row has a
    /// single `-2` entry.
    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        let (k, l) = self.index.pairs()[i];
        if k == l {
            vec![(k + l - 1, 1.0), (k - 1, -2.0)]
        } else {
            vec![(k + l - 1, 1.0), (k - 1, -1.0), (l - 1, -1.0)]
        }
    }

    /// `Mφ`.
    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        self.index
            .pairs()
            .iter()
            .map(|&(k, l)| phi[k + l - 1] - phi[k - 1] - phi[l - 1])
            .collect()
    }

    /// `MᵀΦ`.
    pub fn apply_transpose(&self, big_phi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k_max()];
        for (&(k, l), &v) in self.index.pairs().iter().zip(big_phi) {
            out[k + l - 1] += v;
            out[k - 1] -= v;
            out[l - 1] -= v;
        }
        out
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.index.len(), self.k_max());
        for i in 0..self.index.len() {
            for (j, c) in self.row(i) {
                m[(i, j)] += c;
            }
        }
        m
    }

    /// `MᵀM` as a dense `K × K` matrix.
    pub fn normal_matrix(&self) -> DMatrix<f64> {
        let m = self.dense();
        m.transpose() * m
    }

    /// Eigenvalues of `MᵀM`, ascending.
    pub fn spectrum(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.normal_matrix()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    fn project_off_kernel(&self, x: &mut [f64]) {
        let c: f64 = x.iter().zip(&self.kernel_dir).map(|(a, b)| a * b).sum();
        for (xi, d) in x.iter_mut().zip(&self.kernel_dir) {
            *xi -= c * d;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnwrapMode {
    Oracle,
    PilotLinf,
    FrequencyMarching,
}

/// A real lift `Φ̂` of the bispectrum phases, one per index pair.
#[derive(Debug, Clone, PartialEq)]
pub struct UnwrappedBispectrum {
    pub phi_big: Vec<f64>,
    pub mode: UnwrapMode,
}

/// The unique `x ≡ arg (mod 2π)` in `[center - π, center + π)`.
pub fn lift(arg: f64, center: f64) -> f64 {
    center + wrap_phase(arg - center)
}

fn lift_around(b: &BispectrumEstimate, centers: &[f64], mode: UnwrapMode) -> UnwrappedBispectrum {
    let phi_big = b.args().iter().zip(centers).map(|(&a, &c)| lift(a, c)).collect();
    UnwrappedBispectrum { phi_big, mode }
}

/// Lifts `Arg B̂` into `[Φ - π, Φ + π)` around the true bispectrum phases.
/// Needs ground truth; for tests and oracle baselines only.
pub fn oracle_unwrap(b: &BispectrumEstimate, phi_true: &[f64]) -> Result<UnwrappedBispectrum> {
    check_dim(b.k_max(), phi_true.len())?;
    let centers = PhaseSystem::apply_pairs(&b.index, phi_true);
    Ok(lift_around(b, &centers, UnwrapMode::Oracle))
}

/// Lifts `Arg B̂` around the bispectrum phases of a pilot phase vector. Pilot
/// entries are first reduced to `[-π, π)`.
pub fn pilot_unwrap(b: &BispectrumEstimate, pilot: &[f64], mode: UnwrapMode) -> Result<UnwrappedBispectrum> {
    check_dim(b.k_max(), pilot.len())?;
    let pilot: Vec<f64> = pilot.iter().map(|&p| wrap_phase(p)).collect();
    let centers = PhaseSystem::apply_pairs(&b.index, &pilot);
    Ok(lift_around(b, &centers, mode))
}

impl PhaseSystem {
    fn apply_pairs(index: &BispectrumIndexSet, phi: &[f64]) -> Vec<f64> {
        index
            .pairs()
            .iter()
            .map(|&(k, l)| phi[k + l - 1] - phi[k - 1] - phi[l - 1])
            .collect()
    }
}

/// `φ̃_1 = 0`, `φ̃_k = Arg B̂_{1,k-1} + φ̃_{k-1}` reduced to `[-π, π)`.
pub fn frequency_marching_pilot(b: &BispectrumEstimate) -> Result<Vec<f64>> {
    let k = b.k_max();
    if k < 2 {
        return Err(invalid("frequency marching needs K >= 2"));
    }
    let mut pilot = vec![0.0; k];
    for j in 2..=k {
        let pos = b.index.position(1, j - 1).expect("(1, k-1) is in the index set");
        pilot[j - 1] = wrap_phase(principal_arg(b.b_hat[pos]) + pilot[j - 2]);
    }
    Ok(pilot)
}

/// `max_{(k,l)} |Arg B̂_{k,l} - (φ_{k+l} - φ_k - φ_l)|_A`.
pub fn linf_objective(b: &BispectrumEstimate, phi: &[f64]) -> f64 {
    b.args()
        .iter()
        .zip(b.index.pairs())
        .map(|(&a, &(k, l))| circ_dist(a, phi[k + l - 1] - phi[k - 1] - phi[l - 1]))
        .fold(0.0, f64::max)
}

const LINF_GRID: usize = 256;
const LINF_MAX_SWEEPS: usize = 50;

/// Cyclic coordinate descent on [`linf_objective`] from `init`. Each
/// coordinate update scans a 256-point grid, refines by golden section, and
/// is kept only if it strictly lowers the objective, so the result is never
/// worse than `init`.
pub fn linf_pilot(b: &BispectrumEstimate, init: &[f64]) -> Result<Vec<f64>> {
    let k = b.k_max();
    check_dim(k, init.len())?;
    let args = b.args();
    let pairs = b.index.pairs();

    let mut touching: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &(p, q)) in pairs.iter().enumerate() {
        for j in [p - 1, q - 1, p + q - 1] {
            if !touching[j].contains(&i) {
                touching[j].push(i);
            }
        }
    }
    let residual = |phi: &[f64], i: usize| {
        let (p, q) = pairs[i];
        circ_dist(args[i], phi[p + q - 1] - phi[p - 1] - phi[q - 1])
    };

    let mut phi: Vec<f64> = init.to_vec();
    let mut current = linf_objective(b, &phi);
    for _ in 0..LINF_MAX_SWEEPS {
        let mut improved = false;
        for j in 0..k {
            let fixed = (0..pairs.len())
                .filter(|i| !touching[j].contains(i))
                .map(|i| residual(&phi, i))
                .fold(0.0, f64::max);
            if fixed >= current {
                continue;
            }
            let mut trial = phi.clone();
            let objective = |x: f64| {
                let mut t = trial.clone();
                t[j] = x;
                touching[j].iter().map(|&i| residual(&t, i)).fold(fixed, f64::max)
            };
            let h = std::f64::consts::TAU / LINF_GRID as f64;
            let (mut best_x, mut best_v) = (phi[j], current);
            for g in 0..LINF_GRID {
                let x = -std::f64::consts::PI + g as f64 * h;
                let v = objective(x);
                if v < best_v {
                    best_x = x;
                    best_v = v;
                }
            }
            let (gx, gv) = golden_section(&objective, best_x - h, best_x + h, 1e-12);
            if gv < best_v {
                best_x = gx;
                best_v = gv;
            }
            if best_v < current {
                trial[j] = wrap_phase(best_x);
                let v = linf_objective(b, &trial);
                if v < current {
                    phi = trial;
                    current = v;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(phi)
}

/// Minimum-norm least-squares solution `φ̂ = M†Φ̂`.
///
/// Conjugate gradients on `MᵀMφ = MᵀΦ̂` starting from zero. The right-hand
/// side lies in the range of `Mᵀ`, so the iterates stay orthogonal to the
/// kernel; the final projection removes round-off drift.
pub fn solve_phases(sys: &PhaseSystem, unwrapped: &UnwrappedBispectrum) -> Result<Vec<f64>> {
    check_dim(sys.index().len(), unwrapped.phi_big.len())?;
    let rhs = sys.apply_transpose(&unwrapped.phi_big);
    let normal = |x: &[f64]| sys.apply_transpose(&sys.apply(x));
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let k = sys.k_max();
    let mut x = vec![0.0; k];
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let stop = 1e-30 * dot(&rhs, &rhs).max(f64::MIN_POSITIVE);
    for _ in 0..(4 * k + 50) {
        if rr <= stop {
            break;
        }
        let ap = normal(&p);
        let alpha = rr / dot(&p, &ap);
        for i in 0..k {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for i in 0..k {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
    }
    sys.project_off_kernel(&mut x);
    Ok(x)
}

/// Largest circular difference between the bispectrum phases
/// `φ_{k+l} − φ_k − φ_l` of two phase vectors.
pub fn bispectrum_phase_gap(phi: &[f64], phi_p: &[f64]) -> Result<f64> {
    check_dim(phi.len(), phi_p.len())?;
    let idx = BispectrumIndexSet::new(phi.len());
    Ok(idx
        .pairs()
        .iter()
        .map(|&(k, l)| {
            let a = phi[k + l - 1] - phi[k - 1] - phi[l - 1];
            let b = phi_p[k + l - 1] - phi_p[k - 1] - phi_p[l - 1];
            circ_dist(a, b)
        })
        .fold(0.0, f64::max))
}

/// `min_α max_k |φ_k − φ′_k − kα|` (circular) over `grid` uniform angles.
pub fn rotation_phase_gap(phi: &[f64], phi_p: &[f64], grid: usize) -> Result<f64> {
    check_dim(phi.len(), phi_p.len())?;
    if grid == 0 {
        return Err(invalid("grid must be nonempty"));
    }
    let h = std::f64::consts::TAU / grid as f64;
    Ok((0..grid)
        .map(|i| {
            let alpha = -std::f64::consts::PI + i as f64 * h;
            phi.iter()
                .zip(phi_p)
                .enumerate()
                .map(|(j, (a, b))| circ_dist(a - b, (j + 1) as f64 * alpha))
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min))
}

/// How the bispectrum phases are lifted before inversion.
#[derive(Debug, Clone, PartialEq)]
pub enum PilotMode {
    FrequencyMarching,
    /// Frequency marching refined by [`linf_pilot`].
    LinfRefined,
    /// Lift around the true phases.
    Oracle(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct MomEstimate {
    pub signal: SignalSpec,
    /// ℓ∞ objective of the pilot; `None` in oracle mode.
    pub pilot_objective: Option<f64>,
    pub bispectrum_count: usize,
    /// Entries of `B̂` too small for a meaningful phase.
    pub weak_bispectrum: usize,
}

/// Power spectrum, bispectrum, pilot, lift, least squares.
pub fn mom_estimate(batch: &SampleBatch, mode: &PilotMode) -> Result<MomEstimate> {
    let k = batch.k_max();
    if k < 2 {
        return Err(invalid("method of moments needs K >= 2"));
    }
    let b = estimate_bispectrum(batch)?;
    let sys = build_phase_system(k)?;
    let (unwrapped, pilot_objective) = match mode {
        PilotMode::FrequencyMarching => {
            let pilot = frequency_marching_pilot(&b)?;
            let obj = linf_objective(&b, &pilot);
            (pilot_unwrap(&b, &pilot, UnwrapMode::FrequencyMarching)?, Some(obj))
        }
        PilotMode::LinfRefined => {
            let pilot = linf_pilot(&b, &frequency_marching_pilot(&b)?)?;
            let obj = linf_objective(&b, &pilot);
            (pilot_unwrap(&b, &pilot, UnwrapMode::PilotLinf)?, Some(obj))
        }
        PilotMode::Oracle(phi) => (oracle_unwrap(&b, phi)?, None),
    };
    let phi_hat = solve_phases(&sys, &unwrapped)?;
    Ok(MomEstimate {
        signal: SignalSpec::new(b.r_hat.clone(), phi_hat)?,
        pilot_objective,
        bispectrum_count: b.index.len(),
        weak_bispectrum: b.weak_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generic_signal, loss};
    use crate::sampling::sample_noiseless;
    use approx::assert_abs_diff_eq;

    fn exact_estimate(r: &[f64], phi: &[f64]) -> BispectrumEstimate {
        let s = SignalSpec::new(r.to_vec(), phi.to_vec()).unwrap();
        estimate_bispectrum(&sample_noiseless(&s, 5, 1).unwrap()).unwrap()
    }

    #[test]
    fn index_set_positions_match_enumeration() {
        for k in 1..12 {
            let idx = BispectrumIndexSet::new(k);
            assert_eq!(idx.len(), k * (k - 1) / 2);
            for (i, &(p, q)) in idx.pairs().iter().enumerate() {
                assert_eq!(idx.position(p, q), Some(i));
            }
            assert_eq!(idx.position(k, 1), None);
        }
        assert_eq!(BispectrumIndexSet::new(3).pairs(), &[(1, 1), (1, 2), (2, 1)]);
    }

    #[test]
    fn phase_system_k3() {
        let sys = build_phase_system(3).unwrap();
        assert_eq!(sys.dense(), DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.0, -1.0, -1.0, 1.0, -1.0, -1.0, 1.0]));
        assert_eq!(
            sys.normal_matrix(),
            DMatrix::from_row_slice(3, 3, &[6.0, 0.0, -2.0, 0.0, 3.0, -2.0, -2.0, -2.0, 2.0])
        );
        assert_eq!(sys.apply(&[1.0, 2.0, 3.0]), vec![0.0, 0.0, 0.0]);
        let ev = sys.spectrum();
        assert_abs_diff_eq!(ev[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(ev[1], 4.0, epsilon = 1e-10);
        assert_abs_diff_eq!(ev[2], 7.0, epsilon = 1e-10);
        assert!(build_phase_system(1).is_err());
    }

    #[test]
    fn noiseless_bispectrum_is_exact() {
        let b = exact_estimate(&[1.0, 1.0, 1.0], &[0.5, 1.0, 1.8]);
        let args = b.args();
        assert_abs_diff_eq!(args[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(args[1], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(b.r_hat[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn power_clips_at_zero() {
        let s = SignalSpec::new(vec![0.1, 0.1], vec![0.0, 0.0]).unwrap();
        let batch = SampleBatch::from_parts(2, 10.0, 0, s.content_hash(), s.to_complex()).unwrap();
        assert_eq!(estimate_power(&batch).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn lift_is_half_open() {
        assert_abs_diff_eq!(lift(0.1, 0.0), 0.1);
        assert_abs_diff_eq!(lift(0.1, 2.0 * std::f64::consts::TAU), 0.1 + 2.0 * std::f64::consts::TAU, epsilon = 1e-12);
        // arg exactly π away from the centre lands on the low end
        assert_abs_diff_eq!(lift(std::f64::consts::PI, 0.0), -std::f64::consts::PI);
    }

    #[test]
    fn oracle_unwrap_examples() {
        let phi = [0.5, 1.0, 1.8, -2.9];
        let mut b = exact_estimate(&[1.0; 4], &phi);
        let truth = PhaseSystem::apply_pairs(&b.index, &phi);
        let u = oracle_unwrap(&b, &phi).unwrap();
        for (a, t) in u.phi_big.iter().zip(&truth) {
            assert_abs_diff_eq!(a, t, epsilon = 1e-12);
        }
        b.b_hat[2] *= Complex64::from_polar(1.0, 0.1);
        let u = oracle_unwrap(&b, &phi).unwrap();
        assert_abs_diff_eq!(u.phi_big[2], truth[2] + 0.1, epsilon = 1e-12);
    }

    #[test]
    fn frequency_marching_examples() {
        let b = exact_estimate(&[1.0; 3], &[0.5, 1.0, 1.5]);
        for p in frequency_marching_pilot(&b).unwrap() {
            assert_abs_diff_eq!(p, 0.0, epsilon = 1e-12);
        }
        let b = BispectrumEstimate {
            r_hat: vec![1.0, 1.0],
            b_hat: vec![Complex64::from_polar(2.0, 0.7)],
            index: BispectrumIndexSet::new(2),
            n: 1,
        };
        let p = frequency_marching_pilot(&b).unwrap();
        assert_abs_diff_eq!(p[0], 0.0);
        assert_abs_diff_eq!(p[1], 0.7, epsilon = 1e-15);
    }

    #[test]
    fn frequency_marching_lands_on_the_orbit() {
        for seed in 0..20 {
            let s = generic_signal(7, 1.0, 0.5, 2.0, seed).unwrap();
            let b = estimate_bispectrum(&sample_noiseless(&s, 3, seed).unwrap()).unwrap();
            let pilot = SignalSpec::new(s.magnitudes().to_vec(), frequency_marching_pilot(&b).unwrap()).unwrap();
            assert!(loss(&pilot, &s).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn linf_pilot_fixed_point_and_descent() {
        let phi = [0.3, -1.2, 2.2, 0.9, -0.4];
        let b = exact_estimate(&[1.0; 5], &phi);
        assert_eq!(linf_pilot(&b, &phi).unwrap(), phi.to_vec());
        let fm = frequency_marching_pilot(&b).unwrap();
        assert!(linf_objective(&b, &linf_pilot(&b, &fm).unwrap()) <= 1e-9);

        let mut noisy = b.clone();
        for (i, z) in noisy.b_hat.iter_mut().enumerate() {
            *z *= Complex64::from_polar(1.0, 0.05 * ((i * 7 % 5) as f64 / 2.0 - 1.0));
        }
        let fm = frequency_marching_pilot(&noisy).unwrap();
        let refined = linf_pilot(&noisy, &fm).unwrap();
        assert!(linf_objective(&noisy, &refined) <= linf_objective(&noisy, &fm));
    }

    #[test]
    fn pilot_unwrap_ignores_2pi_shifts() {
        let phi = [0.3, -1.2, 2.2, 0.9];
        let b = exact_estimate(&[1.0; 4], &phi);
        let a = pilot_unwrap(&b, &phi, UnwrapMode::PilotLinf).unwrap();
        let shifted: Vec<f64> = phi.iter().enumerate().map(|(i, p)| p + std::f64::consts::TAU * (i as f64 - 1.0)).collect();
        let c = pilot_unwrap(&b, &shifted, UnwrapMode::PilotLinf).unwrap();
        let truth = PhaseSystem::apply_pairs(&b.index, &phi);
        for (x, t) in a.phi_big.iter().zip(&truth) {
            assert_abs_diff_eq!(x, t, epsilon = 1e-12);
        }
        assert_eq!(a, c);
    }

    #[test]
    fn solve_phases_k2_by_hand() {
        // M = (-2, 1), M† = Mᵀ/5
        let sys = build_phase_system(2).unwrap();
        let u = UnwrappedBispectrum { phi_big: vec![-5.0], mode: UnwrapMode::Oracle };
        let x = solve_phases(&sys, &u).unwrap();
        assert_abs_diff_eq!(x[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], -1.0, epsilon = 1e-12);
        let zero = UnwrappedBispectrum { phi_big: vec![0.0], mode: UnwrapMode::Oracle };
        assert_eq!(solve_phases(&sys, &zero).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn mom_needs_two_frequencies() {
        let s = SignalSpec::new(vec![1.0], vec![0.0]).unwrap();
        let batch = sample_noiseless(&s, 3, 0).unwrap();
        assert!(mom_estimate(&batch, &PilotMode::FrequencyMarching).is_err());
    }
}
