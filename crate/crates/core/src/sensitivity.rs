//! Error-propagation phase sensitivity `dphi_v = Delta J_v / |d<J_v>/dphi|`.
//!
//! [`exact`] builds it from the closed-form moments. The short-time and
//! large-dephasing approximations are kept alongside so they can be compared
//! against it point by point.

use crate::error::{Error, Result};
use crate::moments::{transverse_stats, MomentSet, SlopeMode};
use crate::params::{Axis, ProtocolParams, SpinEnsemble};

/// A sensitivity value or a flagged pole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimate {
    Finite(f64),
    Divergent,
}

impl Estimate {
    pub fn value(self) -> Option<f64> {
        match self {
            Estimate::Finite(v) => Some(v),
            Estimate::Divergent => None,
        }
    }

    pub fn is_divergent(self) -> bool {
        matches!(self, Estimate::Divergent)
    }

    /// Value for minimization, with poles mapped to `+inf`.
    pub fn or_infinite(self) -> f64 {
        self.value().unwrap_or(f64::INFINITY)
    }

    fn from_squared(value_sq: f64) -> Self {
        if value_sq.is_finite() {
            Estimate::Finite(value_sq.sqrt())
        } else {
            Estimate::Divergent
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivityKind {
    Exact,
    ShortTime,
    Envelope,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityPoint {
    pub phi: f64,
    pub dpx: Estimate,
    pub dpy: Estimate,
    pub kind: SensitivityKind,
    /// Variances clamped from tiny negative rounding values to zero.
    pub clamped_variances: u8,
}

impl SensitivityPoint {
    pub fn get(&self, axis: Axis) -> Estimate {
        match axis {
            Axis::X => self.dpx,
            Axis::Y => self.dpy,
        }
    }
}

/// Leading small-phase term of the large-dephasing `J_x` envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Eq9Mode {
    /// `(2 J phi)^-2`, the small-phase limit of the short-time formula.
    #[default]
    Corrected,
    /// `(4 J phi)^-2`.
    Verbatim,
}

impl Eq9Mode {
    fn coefficient(self) -> f64 {
        match self {
            Eq9Mode::Corrected => 0.25,
            Eq9Mode::Verbatim => 1.0 / 16.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SensitivityOptions {
    pub slope: SlopeMode,
    pub eq9: Eq9Mode,
}

fn divergence_floor(ens: &SpinEnsemble) -> f64 {
    let j = ens.j();
    1e-12 * j * j
}

/// Exact sensitivities for both readout axes.
pub fn exact(ens: &SpinEnsemble, p: &ProtocolParams, opts: &SensitivityOptions) -> Result<SensitivityPoint> {
    let m = MomentSet::evaluate(ens, p, opts.slope);
    let stats = transverse_stats(&m, ens)?;
    let floor = divergence_floor(ens);
    let ratio = |var: f64, slope: f64| {
        if slope.abs() < floor {
            Estimate::Divergent
        } else {
            Estimate::Finite(var.sqrt() / slope.abs())
        }
    };
    Ok(SensitivityPoint {
        phi: p.phi(),
        dpx: ratio(stats.var_x, m.djp_dphi.re),
        dpy: ratio(stats.var_y, m.djp_dphi.im),
        kind: SensitivityKind::Exact,
        clamped_variances: stats.clamped,
    })
}

pub fn exact_axis(ens: &SpinEnsemble, p: &ProtocolParams, axis: Axis, opts: &SensitivityOptions) -> Result<Estimate> {
    exact(ens, p, opts).map(|pt| pt.get(axis))
}

/// Short-time parameters `alpha = 2 J phi cos theta`,
/// `beta = J phi^2 sin^2 theta + gamma phi` and the derived `eta0`, `eta1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShortTimeParams {
    pub alpha: f64,
    pub beta: f64,
    pub eta0: f64,
    pub eta1: f64,
}

impl ShortTimeParams {
    pub fn new(ens: &SpinEnsemble, p: &ProtocolParams) -> Self {
        let j = ens.j();
        let (sin_t, cos_t) = p.theta().sin_cos();
        let phi = p.phi();
        let alpha = 2.0 * j * phi * cos_t;
        let beta = j * phi * phi * sin_t * sin_t + p.gamma() * phi;
        let decay = (-2.0 * beta).exp();
        let eta0 = 0.5 * (1.0 + (-4.0 * beta).exp() * (2.0 * alpha).cos());
        let eta1 = (-(-2.0 * beta).exp_m1()) * (1.0 - decay * (2.0 * alpha).cos())
            + 2.0 * phi * decay * cos_t * (2.0 * alpha).sin();
        Self {
            alpha,
            beta,
            eta0,
            eta1,
        }
    }
}

/// `(Delta J_x)^2 ~ (J/2) [1 - (eta0 - J eta1) sin^2 theta]`.
pub fn short_time_variance_x(ens: &SpinEnsemble, p: &ProtocolParams) -> f64 {
    let j = ens.j();
    let st = ShortTimeParams::new(ens, p);
    0.5 * j * (1.0 - (st.eta0 - j * st.eta1) * p.theta().sin().powi(2))
}

fn reject_equator(theta: f64) -> Result<()> {
    if theta.cos().abs() <= 1e-12 {
        Err(Error::ApproximationUndefined(
            "short-time and envelope forms need theta != pi/2",
        ))
    } else {
        Ok(())
    }
}

const POLE_TOLERANCE: f64 = 1e-12;

/// Shared short-time form `[1 + bracket^2 + 4 gamma J phi sin^2 theta] / (2 J^3 sin^2 2theta)`.
fn short_time_axis(ens: &SpinEnsemble, p: &ProtocolParams, axis: Axis) -> Result<Estimate> {
    reject_equator(p.theta())?;
    let j = ens.j();
    let (sin_t, cos_t) = p.theta().sin_cos();
    let sin2 = sin_t * sin_t;
    let phi = p.phi();
    let alpha = 2.0 * j * phi * cos_t;
    let (sin_a, cos_a) = alpha.sin_cos();
    let bracket = match axis {
        Axis::X => {
            if sin_a.abs() < POLE_TOLERANCE {
                return Ok(Estimate::Divergent);
            }
            cos_t * cos_a / sin_a + 2.0 * j * phi * sin2
        }
        Axis::Y => {
            if cos_a.abs() < POLE_TOLERANCE {
                return Ok(Estimate::Divergent);
            }
            cos_t * sin_a / cos_a - 2.0 * j * phi * sin2
        }
    };
    let numerator = 1.0 + bracket * bracket + 4.0 * p.gamma() * j * phi * sin2;
    if numerator < 0.0 {
        return Err(Error::ApproximationUndefined(
            "short-time variance is negative for gamma * phi < 0",
        ));
    }
    let denominator = 2.0 * j.powi(3) * (2.0 * p.theta()).sin().powi(2);
    Ok(Estimate::from_squared(numerator / denominator))
}

/// Short-time `J_x` sensitivity, with poles at `alpha = s pi`.
pub fn short_time_x(ens: &SpinEnsemble, p: &ProtocolParams) -> Result<Estimate> {
    short_time_axis(ens, p, Axis::X)
}

/// Short-time `J_y` sensitivity, with poles at `alpha = (s + 1/2) pi`.
pub fn short_time_y(ens: &SpinEnsemble, p: &ProtocolParams) -> Result<Estimate> {
    short_time_axis(ens, p, Axis::Y)
}

pub fn short_time(ens: &SpinEnsemble, p: &ProtocolParams) -> Result<SensitivityPoint> {
    Ok(SensitivityPoint {
        phi: p.phi(),
        dpx: short_time_x(ens, p)?,
        dpy: short_time_y(ens, p)?,
        kind: SensitivityKind::ShortTime,
        clamped_variances: 0,
    })
}

/// Large-dephasing envelope of the short-time sensitivity.
///
/// `x`: `[c (J phi)^-2 + 4 gamma J phi sin^2 theta] / (2 J^3 sin^2 2theta)`
/// with `c` set by [`Eq9Mode`]; `y`: `[1 + 4 gamma J phi sin^2 theta] / (2 J^3 sin^2 2theta)`.
pub fn envelope_axis(ens: &SpinEnsemble, p: &ProtocolParams, axis: Axis, eq9: Eq9Mode) -> Result<Estimate> {
    reject_equator(p.theta())?;
    let j = ens.j();
    let phi = p.phi();
    let linear = 4.0 * p.gamma() * j * phi * p.theta().sin().powi(2);
    let leading = match axis {
        Axis::X => {
            if phi == 0.0 {
                return Ok(Estimate::Divergent);
            }
            eq9.coefficient() / (j * phi).powi(2)
        }
        Axis::Y => 1.0,
    };
    let numerator = leading + linear;
    if numerator < 0.0 {
        return Err(Error::ApproximationUndefined(
            "envelope is negative for gamma * phi < 0",
        ));
    }
    let denominator = 2.0 * j.powi(3) * (2.0 * p.theta()).sin().powi(2);
    Ok(Estimate::from_squared(numerator / denominator))
}

pub fn envelope(ens: &SpinEnsemble, p: &ProtocolParams, eq9: Eq9Mode) -> Result<SensitivityPoint> {
    Ok(SensitivityPoint {
        phi: p.phi(),
        dpx: envelope_axis(ens, p, Axis::X, eq9)?,
        dpy: envelope_axis(ens, p, Axis::Y, eq9)?,
        kind: SensitivityKind::Envelope,
        clamped_variances: 0,
    })
}

/// Analytic minimum of the `J_x` envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeOptimum {
    pub phi: f64,
    pub delta_phi: f64,
}

/// Minimizes `A / phi^2 + B phi` in closed form: `phi* = (2A/B)^(1/3)`.
pub fn envelope_x_optimum(ens: &SpinEnsemble, theta: f64, gamma: f64, eq9: Eq9Mode) -> Result<EnvelopeOptimum> {
    crate::params::validate_theta(theta)?;
    reject_equator(theta)?;
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::InvalidGamma(gamma));
    }
    let j = ens.j();
    let a = eq9.coefficient() / (j * j);
    let b = 4.0 * gamma * j * theta.sin().powi(2);
    let phi = (2.0 * a / b).cbrt();
    let numerator = a / (phi * phi) + b * phi;
    let denominator = 2.0 * j.powi(3) * (2.0 * theta).sin().powi(2);
    Ok(EnvelopeOptimum {
        phi,
        delta_phi: (numerator / denominator).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_6, PI, SQRT_2};

    use super::*;

    fn ens(n: u64) -> SpinEnsemble {
        SpinEnsemble::new(n).unwrap()
    }

    fn pp(theta: f64, phi: f64, gamma: f64) -> ProtocolParams {
        ProtocolParams::new(theta, phi, gamma).unwrap()
    }

    #[test]
    fn short_time_variance_at_origin() {
        let e = ens(30);
        for theta in [0.4, 1.3, 2.2] {
            let v = short_time_variance_x(&e, &pp(theta, 0.0, 0.0));
            assert!((v - 7.5 * (1.0 - theta.sin().powi(2))).abs() < 1e-12);
        }
    }

    #[test]
    fn short_time_variance_tracks_exact_variance() {
        let e = ens(200);
        for (gamma, tol) in [(0.0, 0.02), (10.0, 0.05)] {
            let p = pp(FRAC_PI_4, 5e-4, gamma);
            let m = MomentSet::evaluate(&e, &p, SlopeMode::Exact);
            let exact = transverse_stats(&m, &e).unwrap().var_x;
            let approx = short_time_variance_x(&e, &p);
            assert!(
                ((approx - exact) / exact).abs() < tol,
                "gamma {gamma}: {approx} vs {exact}"
            );
        }
    }

    #[test]
    fn short_time_poles() {
        let e = ens(2000);
        let j = e.j();
        let theta = FRAC_PI_4;
        let width = PI / (2.0 * j * theta.cos());
        for s in 0..4 {
            let x_pole = pp(theta, s as f64 * width, 0.0);
            assert_eq!(short_time_x(&e, &x_pole).unwrap(), Estimate::Divergent);
            let y_pole = pp(theta, (s as f64 + 0.5) * width, 0.0);
            assert_eq!(short_time_y(&e, &y_pole).unwrap(), Estimate::Divergent);
            let between = pp(theta, (s as f64 + 0.25) * width, 0.0);
            assert!(!short_time_x(&e, &between).unwrap().is_divergent());
            assert!(!short_time_y(&e, &between).unwrap().is_divergent());
        }
    }

    #[test]
    fn approximations_reject_equator() {
        let p = pp(FRAC_PI_2, 0.01, 1.0);
        assert!(short_time_x(&ens(10), &p).is_err());
        assert!(envelope_axis(&ens(10), &p, Axis::Y, Eq9Mode::Corrected).is_err());
    }

    #[test]
    fn short_time_floor_at_transcendental_root() {
        // Root of cos(theta) cot(alpha) + 2 J phi sin^2(theta) = 0 at theta = pi/4,
        // i.e. cot(alpha) = -alpha, bracketed inside (pi/2, pi).
        let (mut lo, mut hi) = (FRAC_PI_2, PI - 1e-9);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 1.0 / mid.tan() + mid > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let e = ens(2000);
        let j = e.j();
        let phi = lo / (SQRT_2 * j);
        let v = short_time_x(&e, &pp(FRAC_PI_4, phi, 0.0)).unwrap().value().unwrap();
        let limit = 1.0 / (SQRT_2 * j.powf(1.5));
        assert!((v / limit - 1.0).abs() < 1e-9);
    }

    #[test]
    fn envelope_y_at_origin_matches_short_time() {
        let e = ens(500);
        let j = e.j();
        for theta in [0.3, FRAC_PI_4, 2.0] {
            let p = pp(theta, 0.0, 50.0);
            let want = (1.0 / (2.0 * j.powi(3) * (2.0 * theta).sin().powi(2))).sqrt();
            let env = envelope_axis(&e, &p, Axis::Y, Eq9Mode::Corrected)
                .unwrap()
                .value()
                .unwrap();
            let st = short_time_y(&e, &p).unwrap().value().unwrap();
            assert!((env - want).abs() < 1e-12 * want);
            assert!((st - want).abs() < 1e-12 * want);
        }
        let origin = pp(FRAC_PI_4, 0.0, 50.0);
        assert_eq!(
            envelope_axis(&e, &origin, Axis::X, Eq9Mode::Corrected).unwrap(),
            Estimate::Divergent
        );
    }

    #[test]
    fn envelope_optimum_at_sixth_turn() {
        let e = ens(20_000);
        let j = e.j();
        let gamma = 100.0;
        let opt = envelope_x_optimum(&e, FRAC_PI_6, gamma, Eq9Mode::Corrected).unwrap();
        let phi_quoted = 1.0 / (j * (2.0 * gamma).cbrt());
        let delta_quoted = (2.0 * gamma).cbrt() / (SQRT_2 * j.powf(1.5));
        assert!((opt.phi / phi_quoted - 1.0).abs() < 1e-12);
        assert!((opt.delta_phi / delta_quoted - 1.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_optimum_is_a_minimum() {
        let e = ens(3000);
        for eq9 in [Eq9Mode::Corrected, Eq9Mode::Verbatim] {
            let opt = envelope_x_optimum(&e, 0.7, 30.0, eq9).unwrap();
            let at = |phi: f64| {
                envelope_axis(&e, &pp(0.7, phi, 30.0), Axis::X, eq9)
                    .unwrap()
                    .value()
                    .unwrap()
            };
            assert!((at(opt.phi) - opt.delta_phi).abs() < 1e-12 * opt.delta_phi);
            assert!(at(opt.phi * 1.01) > opt.delta_phi);
            assert!(at(opt.phi * 0.99) > opt.delta_phi);
        }
    }

    #[test]
    fn single_particle_without_dephasing_has_no_slope() {
        let pt = exact(&ens(1), &pp(1.0, 0.3, 0.0), &SensitivityOptions::default()).unwrap();
        assert!(pt.dpx.is_divergent() && pt.dpy.is_divergent());
    }
}
