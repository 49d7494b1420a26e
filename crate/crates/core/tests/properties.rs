use std::f64::consts::PI;

use proptest::prelude::*;

use mra::bispectrum::{
    build_phase_system, estimate_bispectrum, lift, mom_estimate, pilot_unwrap, solve_phases, PilotMode,
    UnwrapMode, UnwrappedBispectrum,
};
use mra::mle::{grad_neg_loglik, neg_loglik, QuadratureGrid};
use mra::model::generic_signal;
use mra::{align, circ_dist, loss, sample, wrap_phase, SignalSpec};

fn signal(k: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = SignalSpec> {
    k.prop_flat_map(|k| {
        (
            prop::collection::vec(0.0..2.0f64, k),
            prop::collection::vec(-PI..PI, k),
        )
    })
    .prop_map(|(r, p)| SignalSpec::new(r, p).unwrap())
}

fn pair(k: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (SignalSpec, SignalSpec)> {
    k.prop_flat_map(|k| (signal(k..=k), signal(k..=k)))
}

/// `min_α ‖a − g(α)b‖²` by brute force over `2^16` angles.
fn grid_loss(a: &SignalSpec, b: &SignalSpec) -> f64 {
    let (a, b) = (a.to_complex(), b.to_complex());
    let q = 1 << 16;
    (0..q)
        .map(|i| {
            let alpha = -PI + 2.0 * PI * i as f64 / q as f64;
            a.iter()
                .zip(&b)
                .enumerate()
                .map(|(j, (x, y))| (x - y * num_complex::Complex64::from_polar(1.0, (j + 1) as f64 * alpha)).norm_sqr())
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// `(Σ(r−r')², inf_α Σ r r' |Δ_k − kα|²)` with the infimum on a dense grid.
fn sandwich_parts(a: &SignalSpec, b: &SignalSpec) -> (f64, f64) {
    let mag: f64 = a.magnitudes().iter().zip(b.magnitudes()).map(|(x, y)| (x - y).powi(2)).sum();
    let q = 1 << 14;
    let phase = (0..q)
        .map(|i| {
            let alpha = -PI + 2.0 * PI * i as f64 / q as f64;
            (0..a.k_max())
                .map(|j| {
                    let t = a.phases()[j] - b.phases()[j] - (j + 1) as f64 * alpha;
                    a.magnitudes()[j] * b.magnitudes()[j] * circ_dist(t, 0.0).powi(2)
                })
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    (mag, phase)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_symmetric((a, b) in pair(1..=8)) {
        prop_assert!((loss(&a, &b).unwrap() - loss(&b, &a).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn loss_is_orbit_invariant((a, b) in pair(1..=8), beta in -10.0..10.0f64) {
        let l = loss(&a, &b).unwrap();
        prop_assert!((loss(&a.rotate(beta), &b).unwrap() - l).abs() <= 1e-9);
        prop_assert!((loss(&a, &b.rotate(beta)).unwrap() - l).abs() <= 1e-9);
    }

    #[test]
    fn loss_matches_dense_grid((a, b) in pair(1..=8)) {
        let l = loss(&a, &b).unwrap();
        let g = grid_loss(&a, &b);
        prop_assert!((l - g).abs() <= 1e-5, "library {l}, grid {g}");
        prop_assert!(l <= g + 1e-9);
    }

    #[test]
    fn loss_sandwich((a, b) in pair(1..=8)) {
        let l = loss(&a, &b).unwrap();
        let (mag, phase) = sandwich_parts(&a, &b);
        let c_lower = 2.0 / (PI * PI);
        prop_assert!(mag <= l + 1e-9);
        // The grid infimum overshoots the true one by at most O(spacing).
        prop_assert!(mag + 2.0 * c_lower * phase <= l + 1e-3 * (1.0 + phase));
        prop_assert!(l <= mag + 2.0 * 0.5 * phase + 1e-9);
    }

    #[test]
    fn alignment_first_order_condition((a, b) in pair(1..=8)) {
        let al = align(&a, &b).unwrap();
        let back = a.rotate(-al.alpha).to_real();
        let u = b.orbit_tangent();
        let ip: f64 = u.iter().zip(back.iter().zip(b.to_real())).map(|(u, (x, y))| u * (x - y)).sum();
        prop_assert!(ip.abs() <= 1e-6, "⟨u, θ̂ − θ⟩ = {ip}");
    }

    #[test]
    fn circ_dist_is_a_metric(a in -20.0..20.0f64, b in -20.0..20.0f64, c in -20.0..20.0f64, m in -3i32..3) {
        let d = circ_dist;
        prop_assert!(d(a, b) >= 0.0 && d(a, b) <= PI);
        prop_assert!((d(a, b) - d(b, a)).abs() <= 1e-12);
        prop_assert!(d(a, c) <= d(a, b) + d(b, c) + 1e-12);
        prop_assert!(d(a, a + 2.0 * PI * m as f64) <= 1e-9);
    }

    #[test]
    fn wrap_phase_is_canonical(x in -100.0..100.0f64) {
        let w = wrap_phase(x);
        prop_assert!((-PI..PI).contains(&w));
        prop_assert!(circ_dist(w, x) <= 1e-9);
    }

    #[test]
    fn lift_lands_in_window(arg in -PI..PI, center in -50.0..50.0f64) {
        let x = lift(arg, center);
        prop_assert!(x >= center - PI && x < center + PI);
        prop_assert!(circ_dist(x, arg) <= 1e-9);
    }

    #[test]
    fn phase_system_spectrum(k in 2usize..=64) {
        let sys = build_phase_system(k).unwrap();
        let ev = sys.spectrum();
        prop_assert!(ev[0].abs() <= 1e-8);
        for e in &ev[1..] {
            prop_assert!((e - e.round()).abs() <= 1e-6);
            prop_assert!(*e >= (k + 1) as f64 - 1e-6 && *e <= (2 * k + 1) as f64 + 1e-6);
        }
    }

    #[test]
    fn least_squares_recovers_orthogonal_phases(phi in prop::collection::vec(-3.0..3.0f64, 2..=24)) {
        let k = phi.len();
        let sys = build_phase_system(k).unwrap();
        let dir: Vec<f64> = (1..=k).map(|j| j as f64).collect();
        let c = phi.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() / dir.iter().map(|d| d * d).sum::<f64>();
        let phi: Vec<f64> = phi.iter().zip(&dir).map(|(a, d)| a - c * d).collect();
        let big = UnwrappedBispectrum { phi_big: sys.apply(&phi), mode: UnwrapMode::Oracle };
        let out = solve_phases(&sys, &big).unwrap();
        for (x, y) in out.iter().zip(&phi) {
            prop_assert!((x - y).abs() <= 1e-8);
        }
        let dot: f64 = out.iter().zip(&dir).map(|(a, b)| a * b).sum();
        prop_assert!(dot.abs() <= 1e-8);
    }

    #[test]
    fn pilot_shift_by_full_turns_is_invisible(seed in 0u64..1000, shifts in prop::collection::vec(-3i32..3, 5)) {
        let truth = generic_signal(5, 1.0, 0.5, 2.0, seed).unwrap();
        let b = estimate_bispectrum(&sample(&truth, 0.5, 100, seed).unwrap()).unwrap();
        let pilot = truth.phases().to_vec();
        let shifted: Vec<f64> = pilot.iter().zip(&shifts).map(|(p, s)| p + 2.0 * PI * *s as f64).collect();
        let a = pilot_unwrap(&b, &pilot, UnwrapMode::PilotLinf).unwrap();
        let c = pilot_unwrap(&b, &shifted, UnwrapMode::PilotLinf).unwrap();
        // Same branch everywhere; a different one would be off by a multiple of 2π.
        for (x, y) in a.phi_big.iter().zip(&c.phi_big) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mom_is_rotation_equivariant(seed in 0u64..1000, beta in -PI..PI) {
        let truth = generic_signal(4, 1.0, 0.5, 2.0, seed).unwrap();
        let rotated = truth.rotate(beta);
        let est = mom_estimate(&sample(&rotated, 0.5, 300, seed).unwrap(), &PilotMode::FrequencyMarching).unwrap();
        let a = loss(&est.signal, &rotated).unwrap();
        let b = loss(&est.signal, &truth).unwrap();
        prop_assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn likelihood_surface_is_rotation_invariant(seed in 0u64..1000, beta in -PI..PI, k in 1usize..=4) {
        let truth = generic_signal(k, 1.0, 0.5, 2.0, seed).unwrap();
        let batch = sample(&truth, 1.0, 30, seed + 1).unwrap();
        let theta = generic_signal(k, 1.0, 0.5, 2.0, seed + 2).unwrap();
        let quad = QuadratureGrid::new(1024).unwrap();
        let r0 = neg_loglik(&theta, &batch, &quad).unwrap();
        let r1 = neg_loglik(&theta.rotate(beta), &batch, &quad).unwrap();
        prop_assert!((r0 - r1).abs() <= 1e-8);

        let g0 = grad_neg_loglik(&theta, &batch, &quad).unwrap();
        let g1 = grad_neg_loglik(&theta.rotate(beta), &batch, &quad).unwrap();
        // Rotate g1 back: component k is multiplied by e^{-ikβ}.
        for j in 0..k {
            let z = num_complex::Complex64::new(g1[2 * j], g1[2 * j + 1])
                * num_complex::Complex64::from_polar(1.0, -((j + 1) as f64) * beta);
            prop_assert!((z.re - g0[2 * j]).abs() <= 1e-8 && (z.im - g0[2 * j + 1]).abs() <= 1e-8);
        }

        let u = theta.orbit_tangent();
        let ip: f64 = g0.iter().zip(&u).map(|(a, b)| a * b).sum();
        prop_assert!(ip.abs() <= 1e-8, "⟨∇R, u⟩ = {ip}");
    }
}
