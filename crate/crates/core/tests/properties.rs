use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, FRAC_PI_6, PI};

use proptest::prelude::*;
use spinmetro::cli::oracle_equivalence;
use spinmetro::moments::{MomentSet, TransverseStats};
use spinmetro::optimizer::{find_optimum, fringe_width, predicted_exponent, stationarity_roots, sweep, SweepGrid};
use spinmetro::oracle::sensitivity_fd;
use spinmetro::sensitivity::{exact, exact_axis, short_time_x, short_time_y};
use spinmetro::{Axis, Branch, OptimizerOptions, ProtocolParams, SensitivityOptions, SlopeMode, SpinEnsemble};

fn ens(n: u64) -> SpinEnsemble {
    SpinEnsemble::new(n).unwrap()
}

fn pp(theta: f64, phi: f64, gamma: f64) -> ProtocolParams {
    ProtocolParams::new(theta, phi, gamma).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn closed_forms_match_dense_reference(
        n in 1u64..=40,
        theta in 0.05f64..3.09,
        phi in -0.5f64..0.5,
        gamma in 0.0f64..5.0,
    ) {
        let worst = oracle_equivalence(&[n], &[theta], &[phi], &[gamma], false).unwrap();
        for (name, w) in worst {
            prop_assert!(w.error <= 1e-9, "{name}: {:e}", w.error);
        }
    }

    #[test]
    fn moment_bounds(n in 1u64..=100_000, theta in 0.01f64..3.13, phi in 0.0f64..2.0, gamma in 0.0f64..50.0) {
        let e = ens(n);
        let j = e.j();
        let m = MomentSet::evaluate(&e, &pp(theta, phi, gamma), SlopeMode::Exact);
        prop_assert!(m.jp.norm() <= j * (1.0 + 1e-12));
        prop_assert!(m.jz * m.jz <= m.jz2 * (1.0 + 1e-12) + 1e-12);
        prop_assert!(m.jz2 <= j * j * (1.0 + 1e-12));
        let (vx, vy) = TransverseStats::raw_variances(&m, &e);
        prop_assert!(vx >= -1e-9 * j * j && vy >= -1e-9 * j * j);
    }

    #[test]
    fn mirror_symmetry(n in 2u64..=20_000, theta in 0.05f64..1.52, phi in 0.0f64..0.3, gamma in 0.0f64..20.0) {
        let e = ens(n);
        let opts = SensitivityOptions::default();
        let a = exact(&e, &pp(theta, phi, gamma), &opts).unwrap();
        let b = exact(&e, &pp(PI - theta, phi, gamma), &opts).unwrap();
        for axis in [Axis::X, Axis::Y] {
            match (a.get(axis).value(), b.get(axis).value()) {
                (Some(x), Some(y)) => prop_assert!(rel(x, y) <= 1e-9, "{axis}: {x} vs {y}"),
                (x, y) => prop_assert_eq!(x.is_none(), y.is_none()),
            }
        }
    }

    // Holds for the truncated slope. The full derivative gains a -gamma <J+>
    // term that can add signal where the coherent slope vanishes.
    #[test]
    fn dephasing_never_helps(n in 10u64..=5000, theta in 0.1f64..1.4, frac in 0.05f64..0.95) {
        let e = ens(n);
        let opts = SensitivityOptions { slope: SlopeMode::Eq4, ..SensitivityOptions::default() };
        let phi = frac * fringe_width(&e, theta).unwrap();
        for axis in [Axis::X, Axis::Y] {
            let mut last = 0.0;
            for gamma in [0.0, 0.01, 0.1, 1.0, 10.0, 100.0] {
                let v = exact_axis(&e, &pp(theta, phi, gamma), axis, &opts).unwrap().or_infinite();
                prop_assert!(v >= last * (1.0 - 1e-12), "{axis} gamma={gamma}: {v} < {last}");
                last = v;
            }
        }
    }
}

#[test]
fn exact_matches_finite_difference_reference() {
    let opts = SensitivityOptions::default();
    let cases = [
        (8, FRAC_PI_3, 0.2, 1.0, Axis::X),
        (8, FRAC_PI_3, 0.2, 1.0, Axis::Y),
        (4, FRAC_PI_4, 0.3, 0.0, Axis::X),
        (2, FRAC_PI_2, 0.2, 1.0, Axis::Y),
    ];
    for (n, theta, phi, gamma, axis) in cases {
        let e = ens(n);
        let closed = exact_axis(&e, &pp(theta, phi, gamma), axis, &opts).unwrap();
        let fd = sensitivity_fd(&e, theta, phi, gamma, axis, None).unwrap();
        match (closed.value(), fd.value()) {
            (Some(a), Some(b)) => assert!(rel(a, b) <= 1e-5, "N={n} {axis}: {a} vs {b}"),
            // no y-signal on the equator: both sides must flag it
            (a, b) => assert!(a.is_none() && b.is_none(), "N={n} {axis}: {a:?} vs {b:?}"),
        }
    }
}

#[test]
fn exact_matches_finite_difference_on_grid() {
    let opts = SensitivityOptions::default();
    for n in [3, 7, 12, 20] {
        let e = ens(n);
        for theta in [0.4, 1.1, 2.3] {
            for phi in [0.07, 0.21] {
                for gamma in [0.0, 0.3] {
                    for axis in [Axis::X, Axis::Y] {
                        let closed = exact_axis(&e, &pp(theta, phi, gamma), axis, &opts).unwrap();
                        let fd = sensitivity_fd(&e, theta, phi, gamma, axis, None).unwrap();
                        if let (Some(a), Some(b)) = (closed.value(), fd.value()) {
                            // skip the immediate neighbourhood of a slope zero
                            if a < 1e3 {
                                assert!(rel(a, b) <= 1e-5, "N={n} theta={theta} phi={phi} {axis}: {a} vs {b}");
                            }
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn divergences_sit_on_fringe_boundaries() {
    let opts = SensitivityOptions::default();
    for (n, theta) in [(2000u64, FRAC_PI_4), (2000, FRAC_PI_6), (20_000, 1.2), (2000, 2.5)] {
        let e = ens(n);
        let w = fringe_width(&e, theta).unwrap();
        for s in 1..=3u32 {
            for (axis, pole) in [(Axis::X, s as f64 * w), (Axis::Y, (s as f64 - 0.5) * w)] {
                let p = pp(theta, pole, 0.0);
                let st = match axis {
                    Axis::X => short_time_x(&e, &p),
                    Axis::Y => short_time_y(&e, &p),
                }
                .unwrap();
                assert!(st.is_divergent(), "N={n} theta={theta} s={s} {axis}");
                // exact curve spikes near the same phase
                let f = |phi: f64| exact_axis(&e, &pp(theta, phi, 0.0), axis, &opts).unwrap().or_infinite();
                let spike = (-20..=20).map(|k| f(pole + k as f64 * 1e-3 * w)).fold(0.0, f64::max);
                let interior = f(pole + 0.5 * w).min(f(pole - 0.5 * w));
                assert!(
                    spike > 20.0 * interior,
                    "N={n} theta={theta} s={s} {axis}: {spike} vs {interior}"
                );
            }
        }
    }
    let p = pp(FRAC_PI_4, 0.0, 0.0);
    assert!(exact(&ens(2000), &p, &opts).unwrap().dpx.is_divergent());
}

#[test]
fn optimum_is_below_every_sample() {
    let e = ens(2000);
    let opts = OptimizerOptions::default();
    for (theta, axis, gamma) in [
        (FRAC_PI_4, Axis::X, 0.0),
        (1.2, Axis::Y, 0.0),
        (FRAC_PI_6, Axis::X, 100.0),
    ] {
        let r = find_optimum(&e, theta, gamma, axis, None, &opts).unwrap();
        let w = fringe_width(&e, theta).unwrap();
        for k in 1..3000 {
            let phi = 3.0 * w * k as f64 / 3000.0;
            let v = exact_axis(&e, &pp(theta, phi, gamma), axis, &opts.sensitivity)
                .unwrap()
                .or_infinite();
            assert!(r.delta_phi_min <= v * (1.0 + 1e-12), "theta={theta} {axis} phi={phi}");
        }
        let again = find_optimum(&e, theta, gamma, axis, None, &opts).unwrap();
        assert_eq!(r, again);
    }
}

#[test]
fn sweep_is_mirror_symmetric() {
    let thetas = vec![0.3, 0.7, 1.2, PI - 1.2, PI - 0.7, PI - 0.3];
    let rows = sweep(
        &SweepGrid {
            particles: vec![2000],
            thetas,
            gammas: vec![0.0, 50.0],
            axes: vec![Axis::X, Axis::Y],
        },
        &OptimizerOptions::default(),
    );
    // grid order: theta, gamma, axis, so row i mirrors row len-4-... by theta index
    let per_theta = 4;
    let n_theta = rows.len() / per_theta;
    for t in 0..n_theta / 2 {
        for k in 0..per_theta {
            let a = &rows[t * per_theta + k];
            let b = &rows[(n_theta - 1 - t) * per_theta + k];
            let (ra, rb) = (a.outcome.as_ref().unwrap(), b.outcome.as_ref().unwrap());
            let w = fringe_width(&ens(2000), a.theta).unwrap();
            assert!(
                (ra.phi_min - rb.phi_min).abs() <= w / 400.0,
                "theta={} {}",
                a.theta,
                a.axis
            );
            assert!((ra.xi.unwrap() - rb.xi.unwrap()).abs() <= 1e-6);
        }
    }
}

#[test]
fn bifurcation_structure() {
    let e = ens(2000);
    let opts = OptimizerOptions::default();
    for theta in [0.3, 0.5, 0.7, 2.45, 2.7] {
        let r = find_optimum(&e, theta, 0.0, Axis::X, None, &opts).unwrap();
        assert_eq!(r.branch, Branch::Transcendental, "theta={theta}");
    }
    for theta in [1.05, 1.2, 1.4, 1.75, 2.0] {
        let r = find_optimum(&e, theta, 0.0, Axis::X, None, &opts).unwrap();
        assert_eq!(r.branch, Branch::SineBranch, "theta={theta}");
        let first = stationarity_roots(&e, theta)
            .unwrap()
            .into_iter()
            .find(|s| s.branch == Branch::SineBranch)
            .unwrap();
        let w = fringe_width(&e, theta).unwrap();
        assert!((r.phi_min - first.phi).abs() <= 0.05 * w, "theta={theta}");
    }
}

#[test]
fn exponent_converges_to_prediction() {
    let e = ens(20_000);
    let opts = OptimizerOptions::default();
    for (theta, gamma) in [
        (FRAC_PI_6, 0.0),
        (FRAC_PI_4, 0.0),
        (FRAC_PI_6, 100.0),
        (FRAC_PI_4, 100.0),
        (FRAC_PI_3, 100.0),
    ] {
        let r = find_optimum(&e, theta, gamma, Axis::X, None, &opts).unwrap();
        let predicted = predicted_exponent(&e, theta, gamma, opts.regime_threshold).unwrap();
        let xi = r.xi.unwrap();
        assert!(
            (xi - predicted).abs() <= 0.02,
            "theta={theta} gamma={gamma}: {xi} vs {predicted}"
        );
    }
}
