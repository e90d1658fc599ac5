//! Best-sensitivity phase search, stationarity branches and scaling exponents.
//!
//! The sensitivity is riddled with poles spaced one fringe width
//! `pi / (2 J |cos theta|)` apart, so the optimum is found by a dense masked
//! scan followed by golden-section refinement around the best sample.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::{validate_theta, Axis, ProtocolParams, SpinEnsemble};
use crate::sensitivity::{exact_axis, SensitivityOptions};

/// Which stationarity condition an optimum sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// `cos theta cot alpha + 2 J phi sin^2 theta = 0`.
    Transcendental,
    /// `sin alpha = cot theta`.
    SineBranch,
    /// Large-dephasing regime, governed by the envelope.
    Envelope,
    Unresolved,
}

impl Branch {
    pub fn label(self) -> &'static str {
        match self {
            Branch::Transcendental => "transcendental",
            Branch::SineBranch => "sine_branch",
            Branch::Envelope => "envelope",
            Branch::Unresolved => "unresolved",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Branch {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "transcendental" => Ok(Branch::Transcendental),
            "sine_branch" => Ok(Branch::SineBranch),
            "envelope" => Ok(Branch::Envelope),
            "unresolved" => Ok(Branch::Unresolved),
            other => Err(format!("unknown branch `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimumReport {
    pub phi_min: f64,
    pub delta_phi_min: f64,
    pub branch: Branch,
    /// `None` only when `ln J = 0`.
    pub xi: Option<f64>,
    pub fringe_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchWindow {
    pub lo: f64,
    pub hi: f64,
}

impl SearchWindow {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi {
            Ok(Self { lo, hi })
        } else {
            Err(Error::InvalidWindow(lo, hi))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerOptions {
    pub sensitivity: SensitivityOptions,
    /// Scan samples per fringe width.
    pub points_per_fringe: usize,
    /// Default window length in fringe widths.
    pub fringes: f64,
    /// Relative phase tolerance of the golden-section refinement.
    pub rel_tol: f64,
    /// Dephasing rate at and above which the large-dephasing forms apply.
    pub regime_threshold: f64,
    pub max_scan_points: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            sensitivity: SensitivityOptions::default(),
            points_per_fringe: 400,
            fringes: 3.0,
            rel_tol: 1e-10,
            regime_threshold: 1.0,
            max_scan_points: 4_000_000,
        }
    }
}

const EQUATOR_COS: f64 = 1e-9;

/// Fringe width `pi / (2 J |cos theta|)`; `None` on the equator.
pub fn fringe_width(ens: &SpinEnsemble, theta: f64) -> Option<f64> {
    let c = theta.cos().abs();
    (c > EQUATOR_COS).then(|| PI / (2.0 * ens.j() * c))
}

/// Smallest phase probed; the sensitivity limit at `phi -> 0+` is regular for
/// `J_y` and the offset avoids the `0/0` at the origin.
pub fn window_start(ens: &SpinEnsemble) -> f64 {
    1e-3 / ens.j().powi(2)
}

/// Golden-section search for a minimum of `f` on `[a, b]`.
///
/// Stops once the bracket is narrower than `rel_tol * |x|` (or an absolute
/// floor for `x` near zero). Returns `(x_min, f_min)`.
pub fn golden_section_minimize(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, rel_tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..500 {
        let scale = a.abs().max(b.abs());
        if b - a <= rel_tol * scale || b - a <= f64::MIN_POSITIVE {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(move |i| if i + 1 == n { hi } else { lo + step * i as f64 })
}

/// Best sample of a masked scan plus its refinement.
#[derive(Debug, Clone, Copy)]
struct ScanMinimum {
    phi: f64,
    value: f64,
    at_upper_edge: bool,
}

fn scan_and_refine(f: &impl Fn(f64) -> f64, window: SearchWindow, points: usize, rel_tol: f64) -> Option<ScanMinimum> {
    let grid: Vec<f64> = linspace(window.lo, window.hi, points).collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, &phi) in grid.iter().enumerate() {
        let v = f(phi);
        if v.is_finite() && best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    let (i, sample) = best?;
    let lo = grid[i.saturating_sub(1)];
    let hi = grid[(i + 1).min(grid.len() - 1)];
    let (phi, value) = golden_section_minimize(f, lo, hi, rel_tol);
    let (phi, value) = if value.is_finite() && value <= sample {
        (phi, value)
    } else {
        (grid[i], sample)
    };
    Some(ScanMinimum {
        phi,
        value,
        at_upper_edge: i + 10 * grid.len() / 100 >= grid.len(),
    })
}

/// Window used when none is given: `fringes` fringe widths starting just
/// above zero, or an adaptively widened `(0, c/J)` on the equator.
pub fn default_window(ens: &SpinEnsemble, theta: f64, opts: &OptimizerOptions) -> SearchWindow {
    let lo = window_start(ens);
    let hi = match fringe_width(ens, theta) {
        Some(w) => opts.fringes * w,
        None => 4.0 / ens.j(),
    };
    SearchWindow { lo, hi }
}

/// Global minimum of the exact sensitivity over the window.
pub fn find_optimum(
    ens: &SpinEnsemble,
    theta: f64,
    gamma: f64,
    axis: Axis,
    window: Option<SearchWindow>,
    opts: &OptimizerOptions,
) -> Result<OptimumReport> {
    ProtocolParams::new(theta, 0.0, gamma)?;
    let f = |phi: f64| {
        ProtocolParams::new(theta, phi, gamma)
            .and_then(|p| exact_axis(ens, &p, axis, &opts.sensitivity))
            .map_or(f64::INFINITY, |e| e.or_infinite())
    };
    let fringe = fringe_width(ens, theta);
    let points_for = |w: SearchWindow| {
        let pitch = fringe.unwrap_or(1.0 / ens.j());
        let n = (opts.points_per_fringe as f64 * (w.hi - w.lo) / pitch).ceil() as usize + 1;
        n.clamp(3 * opts.points_per_fringe, opts.max_scan_points)
    };

    let found = match window {
        Some(w) => scan_and_refine(&f, w, points_for(w), opts.rel_tol),
        None if fringe.is_some() => {
            let w = default_window(ens, theta, opts);
            scan_and_refine(&f, w, points_for(w), opts.rel_tol)
        }
        None => {
            // Equator: no fringe scale, widen (0, c/J) until the minimum is interior.
            let mut w = default_window(ens, theta, opts);
            loop {
                let m = scan_and_refine(&f, w, points_for(w), opts.rel_tol);
                match m {
                    Some(m) if m.at_upper_edge && w.hi * ens.j() < 1024.0 => w.hi *= 2.0,
                    other => break other,
                }
            }
        }
    };
    let found = found.ok_or(Error::Unresolved)?;

    let branch = classify(ens, theta, gamma, axis, found.phi, opts);
    Ok(OptimumReport {
        phi_min: found.phi,
        delta_phi_min: found.value,
        branch,
        xi: scaling_exponent(found.value, ens).ok(),
        fringe_index: fringe.map_or(0, |w| (found.phi / w).floor() as u64),
    })
}

fn classify(ens: &SpinEnsemble, theta: f64, gamma: f64, axis: Axis, phi: f64, opts: &OptimizerOptions) -> Branch {
    if gamma >= opts.regime_threshold {
        return Branch::Envelope;
    }
    let c = theta.cos().abs();
    if c <= EQUATOR_COS {
        return Branch::Unresolved;
    }
    let alpha = 2.0 * ens.j() * phi * c;
    let alpha_max = alpha + PI;
    let roots = match axis {
        Axis::X => roots_in_alpha(theta, alpha_max),
        Axis::Y => y_roots_in_alpha(theta, alpha_max),
    };
    roots
        .into_iter()
        .map(|(a, b)| ((a - alpha).abs(), b))
        .filter(|(d, _)| *d <= 0.1 * PI)
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .map_or(Branch::Unresolved, |(_, b)| b)
}

/// Stationary point of the short-time `J_x` sensitivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryRoot {
    pub phi: f64,
    pub alpha: f64,
    pub branch: Branch,
}

fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    let mut g_lo = g(lo);
    if g_lo.signum() == g(hi).signum() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g_mid = g(mid);
        if g_mid == 0.0 {
            return Some(mid);
        }
        if g_mid.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Roots in `alpha = 2 J phi |cos theta|` on `(0, alpha_max)`. In these units
/// both conditions are independent of `J`.
fn roots_in_alpha(theta: f64, alpha_max: f64) -> Vec<(f64, Branch)> {
    let c = theta.cos().abs();
    let s2 = theta.sin().powi(2);
    let transcendental = |a: f64| c / a.tan() + a * s2 / c;
    let eps = 1e-6 * PI;
    let mut roots = Vec::new();
    let mut s = 0.0;
    while s * PI < alpha_max {
        let lo = s * PI + eps;
        let hi = ((s + 1.0) * PI - eps).min(alpha_max);
        if let Some(a) = bisect(transcendental, lo, hi) {
            roots.push((a, Branch::Transcendental));
        }
        s += 1.0;
    }
    let k = c / theta.sin();
    if k <= 1.0 + 1e-12 {
        let base = k.min(1.0).asin();
        let mut turn = 0.0;
        while turn < alpha_max {
            for a in [turn + base, turn + PI - base] {
                let duplicate = roots
                    .iter()
                    .any(|&(r, b)| b == Branch::SineBranch && (r - a).abs() < 1e-12);
                if a > 0.0 && a < alpha_max && !duplicate {
                    roots.push((a, Branch::SineBranch));
                }
            }
            turn += 2.0 * PI;
        }
    }
    roots.sort_by(|x, y| x.0.total_cmp(&y.0));
    roots
}

/// Roots of `|cos theta| tan alpha - 2 J phi sin^2 theta = 0`, the `J_y`
/// counterpart of the transcendental condition; `alpha = 0` is always one.
fn y_roots_in_alpha(theta: f64, alpha_max: f64) -> Vec<(f64, Branch)> {
    let c = theta.cos().abs();
    let s2 = theta.sin().powi(2);
    let g = |a: f64| c * a.tan() - a * s2 / c;
    let eps = 1e-6 * PI;
    let mut roots = vec![(0.0, Branch::Transcendental)];
    if let Some(a) = bisect(g, eps, (0.5 * PI - eps).min(alpha_max)) {
        roots.push((a, Branch::Transcendental));
    }
    let mut s = 1.0;
    while (s - 0.5) * PI < alpha_max {
        let lo = (s - 0.5) * PI + eps;
        let hi = ((s + 0.5) * PI - eps).min(alpha_max);
        if lo < hi {
            if let Some(a) = bisect(g, lo, hi) {
                roots.push((a, Branch::Transcendental));
            }
        }
        s += 1.0;
    }
    roots
}

/// Stationary points of the zero-dephasing short-time `J_x` sensitivity
/// within the central three fringes, sorted by phase.
pub fn stationarity_roots(ens: &SpinEnsemble, theta: f64) -> Result<Vec<StationaryRoot>> {
    validate_theta(theta)?;
    let c = theta.cos().abs();
    if c <= EQUATOR_COS {
        return Err(Error::ApproximationUndefined(
            "stationarity conditions need theta != pi/2",
        ));
    }
    let scale = 2.0 * ens.j() * c;
    Ok(roots_in_alpha(theta, 3.0 * PI)
        .into_iter()
        .map(|(alpha, branch)| StationaryRoot {
            phi: alpha / scale,
            alpha,
            branch,
        })
        .collect())
}

/// `xi = -ln(sqrt(2) dphi_min) / ln J`, i.e. `dphi_min = J^-xi / sqrt(2)`.
pub fn scaling_exponent(delta_phi_min: f64, ens: &SpinEnsemble) -> Result<f64> {
    let ln_j = ens.j().ln();
    if ln_j == 0.0 || delta_phi_min.is_nan() || delta_phi_min <= 0.0 {
        return Err(Error::DegenerateExponent(ens.j()));
    }
    Ok(-(SQRT_2 * delta_phi_min).ln() / ln_j)
}

/// Zero-dephasing prediction `3/2 + ln|sin 2theta| / ln J`.
pub fn predicted_exponent_coherent(ens: &SpinEnsemble, theta: f64) -> Option<f64> {
    let v = 1.5 + (2.0 * theta).sin().abs().ln() / ens.j().ln();
    v.is_finite().then_some(v)
}

/// Large-dephasing prediction
/// `3/2 + ln[(2/sqrt 3) gamma^(-1/3) sin^(1/3) theta |cos theta|] / ln J`.
pub fn predicted_exponent_dephased(ens: &SpinEnsemble, theta: f64, gamma: f64) -> Option<f64> {
    let arg = 2.0 / 3f64.sqrt() * gamma.powf(-1.0 / 3.0) * theta.sin().cbrt() * theta.cos().abs();
    let v = 1.5 + arg.ln() / ens.j().ln();
    v.is_finite().then_some(v)
}

/// Analytic exponent, picking the dephased form once `gamma >= threshold`.
pub fn predicted_exponent(ens: &SpinEnsemble, theta: f64, gamma: f64, threshold: f64) -> Option<f64> {
    if gamma < threshold {
        predicted_exponent_coherent(ens, theta)
    } else {
        predicted_exponent_dephased(ens, theta, gamma)
    }
}

/// Cartesian grid for [`sweep`]; rows are ordered particles, theta, gamma, axis.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepGrid {
    pub particles: Vec<u64>,
    pub thetas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub axes: Vec<Axis>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub particles: u64,
    pub theta: f64,
    pub gamma: f64,
    pub axis: Axis,
    pub outcome: Result<OptimumReport>,
}

/// Optimum for every grid point. Rows are computed in parallel and returned
/// in grid order; failures stay in the table.
pub fn sweep(grid: &SweepGrid, opts: &OptimizerOptions) -> Vec<SweepRow> {
    let mut cells = Vec::new();
    for &n in &grid.particles {
        for &theta in &grid.thetas {
            for &gamma in &grid.gammas {
                for &axis in &grid.axes {
                    cells.push((n, theta, gamma, axis));
                }
            }
        }
    }
    cells
        .into_par_iter()
        .map(|(particles, theta, gamma, axis)| {
            let outcome =
                SpinEnsemble::new(particles).and_then(|ens| find_optimum(&ens, theta, gamma, axis, None, opts));
            SweepRow {
                particles,
                theta,
                gamma,
                axis,
                outcome,
            }
        })
        .collect()
}
