use std::f64::consts::{FRAC_PI_3, FRAC_PI_4, FRAC_PI_6};

use spinmetro::optimizer::{fringe_width, stationarity_roots};
use spinmetro::sensitivity::{envelope_axis, exact_axis, short_time_x, short_time_y};
use spinmetro::{Axis, Branch, Eq9Mode, ProtocolParams, SensitivityOptions, SpinEnsemble};

fn ens(n: u64) -> SpinEnsemble {
    SpinEnsemble::new(n).unwrap()
}

fn pp(theta: f64, phi: f64, gamma: f64) -> ProtocolParams {
    ProtocolParams::new(theta, phi, gamma).unwrap()
}

fn short(e: &SpinEnsemble, p: &ProtocolParams, axis: Axis) -> f64 {
    match axis {
        Axis::X => short_time_x(e, p),
        Axis::Y => short_time_y(e, p),
    }
    .unwrap()
    .value()
    .unwrap()
}

/// Distance to the nearest pole of the axis, in fringe widths.
fn pole_distance(phi_over_w: f64, axis: Axis) -> f64 {
    let shifted = match axis {
        Axis::X => phi_over_w,
        Axis::Y => phi_over_w + 0.5,
    };
    (shifted - shifted.round()).abs()
}

#[test]
fn short_time_tracks_exact_away_from_poles() {
    let opts = SensitivityOptions::default();
    // the expansion error grows with phi, so the smaller ensemble is only
    // checked on its first fringe
    for (n, fringes) in [(2000u64, 1.0), (20_000, 3.0)] {
        let e = ens(n);
        for theta in [FRAC_PI_6, FRAC_PI_4, FRAC_PI_3, 2.5] {
            let w = fringe_width(&e, theta).unwrap();
            for k in 1..600 {
                let t = k as f64 * fringes / 600.0;
                for axis in [Axis::X, Axis::Y] {
                    if pole_distance(t, axis) < 0.15 {
                        continue;
                    }
                    let p = pp(theta, t * w, 0.0);
                    let a = short(&e, &p, axis);
                    let b = exact_axis(&e, &p, axis, &opts).unwrap().value().unwrap();
                    let dev = (a - b).abs() / b;
                    assert!(dev <= 0.05, "N={n} theta={theta} phi/w={t} {axis}: {dev}");
                }
            }
        }
    }
}

#[test]
fn short_time_converges_at_first_root() {
    let opts = SensitivityOptions::default();
    let deviation = |n: u64| {
        let e = ens(n);
        let root = stationarity_roots(&e, FRAC_PI_4)
            .unwrap()
            .into_iter()
            .find(|r| r.branch == Branch::Transcendental)
            .unwrap();
        let p = pp(FRAC_PI_4, root.phi, 0.0);
        let a = short(&e, &p, Axis::X);
        let b = exact_axis(&e, &p, Axis::X, &opts).unwrap().value().unwrap();
        (a - b).abs() / b
    };
    // first-order in 1/N: successive ratios approach 1/2 from above
    let (d1, d2, d4) = (deviation(1000), deviation(2000), deviation(4000));
    let (r1, r2) = (d2 / d1, d4 / d2);
    assert!(r1 <= 0.56 && r2 < r1 && r2 > 0.5, "ratios {r1} {r2}");
}

#[test]
fn dephased_short_time_y_near_origin() {
    let opts = SensitivityOptions::default();
    let e = ens(2000);
    let w = fringe_width(&e, FRAC_PI_4).unwrap();
    for k in 1..=20 {
        let p = pp(FRAC_PI_4, 0.01 * k as f64 * w, 100.0);
        let a = short(&e, &p, Axis::Y);
        let b = exact_axis(&e, &p, Axis::Y, &opts).unwrap().value().unwrap();
        assert!((a - b).abs() / b <= 0.1, "k={k}: {a} vs {b}");
    }
}

#[test]
fn y_readout_at_origin_has_closed_form() {
    for n in [200u64, 2000] {
        let e = ens(n);
        let j = e.j();
        for theta in [0.3, FRAC_PI_4, 1.2, 2.6] {
            let p = pp(theta, 0.0, 50.0);
            let expected = 1.0 / (2.0 * j.powi(3) * (2.0 * theta).sin().powi(2));
            let env = envelope_axis(&e, &p, Axis::Y, Eq9Mode::Corrected)
                .unwrap()
                .value()
                .unwrap();
            let st = short(&e, &p, Axis::Y);
            assert!((env * env / expected - 1.0).abs() < 1e-12);
            assert!((st * st / expected - 1.0).abs() < 1e-12);
        }
    }
}
