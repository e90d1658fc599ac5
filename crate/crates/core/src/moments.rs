//! Closed-form expectation values of the dephased twisted coherent spin state.
//!
//! The density matrix in the Dicke basis evolves elementwise as
//! `rho_mn(phi) = rho_mn(0) exp[i (n^2 - m^2) phi - gamma (m - n)^2 phi]`,
//! which leaves the `J_z` statistics untouched and multiplies the coherences
//! entering `<J+>` and `<J+^2>` by a decay factor and a large integer power of
//! a complex number of modulus at most one. Those powers are evaluated in
//! log-polar form so that `J` can reach millions without overflow or
//! precision loss.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::params::{ProtocolParams, SpinEnsemble};

/// Which derivative of `<J+>` to report as the signal slope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SlopeMode {
    /// Full product-rule derivative, including the `-gamma <J+>` decay term.
    #[default]
    Exact,
    /// Truncated form without the decay term.
    Eq4,
}

/// First and second moments at one parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSet {
    pub jp: Complex64,
    pub jp2: Complex64,
    pub jz: f64,
    pub jz2: f64,
    pub djp_dphi: Complex64,
}

impl MomentSet {
    pub fn evaluate(ens: &SpinEnsemble, p: &ProtocolParams, slope: SlopeMode) -> Self {
        let (jz, jz2) = jz_moments(ens, p);
        Self {
            jp: jplus(ens, p),
            jp2: jplus_squared(ens, p),
            jz,
            jz2,
            djp_dphi: jplus_slope(ens, p, slope),
        }
    }
}

/// `z^n` for `z = cos(a) + i cos(theta) sin(a)` and integer `n >= 0`, scaled by
/// `exp(log_scale)`, computed as `exp(n ln|z| + log_scale) cis(n arg z)`.
///
/// `|z|^2 = 1 - sin^2(theta) sin^2(a)` is fed to `ln_1p` so the modulus stays
/// accurate when `|z|` is close to one.
fn twist_power(theta: f64, angle: f64, n: u64, log_scale: f64) -> Complex64 {
    if n == 0 {
        return Complex64::new(log_scale.exp(), 0.0);
    }
    let (sin_t, cos_t) = theta.sin_cos();
    let (sin_a, cos_a) = angle.sin_cos();
    let shrink = sin_t * sin_t * sin_a * sin_a;
    let n = n as f64;
    let log_mod = 0.5 * n * (-shrink).ln_1p() + log_scale;
    let arg = n * (cos_t * sin_a).atan2(cos_a);
    Complex64::from_polar(log_mod.exp(), arg)
}

/// `<J+> = J e^{-gamma phi} sin(theta) (cos phi + i cos theta sin phi)^{2J-1}`.
pub fn jplus(ens: &SpinEnsemble, p: &ProtocolParams) -> Complex64 {
    let j = ens.j();
    let power = twist_power(p.theta(), p.phi(), ens.particles() - 1, -p.gamma() * p.phi());
    power * (j * p.theta().sin())
}

/// `<J+^2> = J (J - 1/2) e^{-4 gamma phi} sin^2(theta) (cos 2phi + i cos theta sin 2phi)^{2J-2}`.
pub fn jplus_squared(ens: &SpinEnsemble, p: &ProtocolParams) -> Complex64 {
    let j = ens.j();
    if ens.particles() < 2 {
        return Complex64::new(0.0, 0.0);
    }
    let prefactor = j * (j - 0.5) * p.theta().sin().powi(2);
    let power = twist_power(
        p.theta(),
        2.0 * p.phi(),
        ens.particles() - 2,
        -4.0 * p.gamma() * p.phi(),
    );
    power * prefactor
}

/// `(<J_z>, <J_z^2>) = (J cos theta, J^2 - J (J - 1/2) sin^2 theta)`; neither
/// twisting nor dephasing changes them.
pub fn jz_moments(ens: &SpinEnsemble, p: &ProtocolParams) -> (f64, f64) {
    let j = ens.j();
    let (sin_t, cos_t) = p.theta().sin_cos();
    (j * cos_t, j * j - j * (j - 0.5) * sin_t * sin_t)
}

/// `d<J+>/dphi`.
///
/// [`SlopeMode::Eq4`] returns
/// `J (2J - 1) e^{-gamma phi} (i cos theta cos phi - sin phi) sin theta z^{2J-2}`;
/// [`SlopeMode::Exact`] subtracts `gamma <J+>` on top of that.
pub fn jplus_slope(ens: &SpinEnsemble, p: &ProtocolParams, mode: SlopeMode) -> Complex64 {
    let truncated = if ens.particles() < 2 {
        Complex64::new(0.0, 0.0)
    } else {
        let j = ens.j();
        let (sin_t, cos_t) = p.theta().sin_cos();
        let (sin_p, cos_p) = p.phi().sin_cos();
        let power = twist_power(p.theta(), p.phi(), ens.particles() - 2, -p.gamma() * p.phi());
        power * Complex64::new(-sin_p, cos_t * cos_p) * (j * (2.0 * j - 1.0) * sin_t)
    };
    match mode {
        SlopeMode::Eq4 => truncated,
        SlopeMode::Exact => truncated - jplus(ens, p) * p.gamma(),
    }
}

/// Means and variances of the transverse components `J_x`, `J_y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransverseStats {
    pub mean_x: f64,
    pub mean_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    /// Number of variances (0, 1 or 2) that came out slightly negative from
    /// rounding and were clamped to zero.
    pub clamped: u8,
}

impl TransverseStats {
    /// Raw `(var_x, var_y)` from the operator identities, without clamping.
    pub fn raw_variances(m: &MomentSet, ens: &SpinEnsemble) -> (f64, f64) {
        let j = ens.j();
        let base = 0.5 * (j * (j + 1.0) - m.jz2);
        let var_x = base + 0.5 * m.jp2.re - m.jp.re * m.jp.re;
        let var_y = base - 0.5 * m.jp2.re - m.jp.im * m.jp.im;
        (var_x, var_y)
    }
}

/// `<J_x> = Re<J+>`, `<J_y> = Im<J+>`,
/// `<J_{x,y}^2> = [J(J+1) - <J_z^2>]/2 +/- Re<J+^2>/2`.
///
/// A variance below `-1e-12 J^2` is reported as
/// [`Error::DegenerateVariance`]; smaller negative values are clamped.
pub fn transverse_stats(m: &MomentSet, ens: &SpinEnsemble) -> Result<TransverseStats> {
    let j = ens.j();
    let floor = -1e-12 * j * j;
    let (var_x, var_y) = TransverseStats::raw_variances(m, ens);
    let mut clamped = 0;
    let mut settle = |value: f64, axis: char| -> Result<f64> {
        if value >= 0.0 {
            Ok(value)
        } else if value >= floor {
            clamped += 1;
            Ok(0.0)
        } else {
            Err(Error::DegenerateVariance { axis, value })
        }
    };
    let var_x = settle(var_x, 'x')?;
    let var_y = settle(var_y, 'y')?;
    Ok(TransverseStats {
        mean_x: m.jp.re,
        mean_y: m.jp.im,
        var_x,
        var_y,
        clamped,
    })
}
