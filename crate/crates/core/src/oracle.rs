//! Dense Dicke-basis reference implementation.
//!
//! Everything here is built from scratch out of ladder-operator matrix
//! elements: the coherent state comes from diagonalizing `J_y`, the dephased
//! twisting is applied elementwise to the density matrix, and expectation
//! values are plain traces. It shares no code path with [`crate::moments`]
//! and serves as ground truth for small `N`.
//!
//! Basis index `k = 0..=N` stands for `m = k - J`, so the top state `|J, J>`
//! sits at index `N`.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::params::{validate_theta, Axis, SpinEnsemble};
use crate::sensitivity::Estimate;

/// Largest particle number the dense oracle accepts.
pub const MAX_PARTICLES: u64 = 4096;

fn check_dimension(ens: &SpinEnsemble) -> Result<usize> {
    if ens.particles() > MAX_PARTICLES {
        return Err(Error::DimensionTooLarge(ens.particles()));
    }
    Ok(ens.particles() as usize + 1)
}

fn magnetic(j: f64, k: usize) -> f64 {
    k as f64 - j
}

/// Collective spin operator matrices in the Dicke basis.
#[derive(Debug, Clone)]
pub struct SpinMatrices {
    pub jz: DMatrix<Complex64>,
    pub jplus: DMatrix<Complex64>,
    pub jminus: DMatrix<Complex64>,
    pub jx: DMatrix<Complex64>,
    pub jy: DMatrix<Complex64>,
}

impl SpinMatrices {
    pub fn new(ens: &SpinEnsemble) -> Result<Self> {
        let dim = check_dimension(ens)?;
        let j = ens.j();
        let mut jz = DMatrix::zeros(dim, dim);
        let mut jplus = DMatrix::zeros(dim, dim);
        for k in 0..dim {
            let m = magnetic(j, k);
            jz[(k, k)] = Complex64::new(m, 0.0);
            if k + 1 < dim {
                // <J, m+1| J+ |J, m>
                jplus[(k + 1, k)] = Complex64::new(((j - m) * (j + m + 1.0)).sqrt(), 0.0);
            }
        }
        let jminus = jplus.adjoint();
        let jx = (&jplus + &jminus) * Complex64::new(0.5, 0.0);
        let jy = (&jplus - &jminus) * Complex64::new(0.0, -0.5);
        Ok(Self {
            jz,
            jplus,
            jminus,
            jx,
            jy,
        })
    }
}

/// Pure state as amplitudes on `|J, m>`, `m = -J..=J`.
#[derive(Debug, Clone, PartialEq)]
pub struct DickeState {
    pub amplitudes: DVector<Complex64>,
}

impl DickeState {
    pub fn norm_squared(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `|J, J>`.
    pub fn top(ens: &SpinEnsemble) -> Result<Self> {
        let dim = check_dimension(ens)?;
        let mut amplitudes = DVector::zeros(dim);
        amplitudes[dim - 1] = Complex64::new(1.0, 0.0);
        Ok(Self { amplitudes })
    }

    /// `exp(-i phi J_z^2)` applied to the state.
    pub fn twisted(&self, ens: &SpinEnsemble, phi: f64) -> Self {
        let j = ens.j();
        let amplitudes = DVector::from_iterator(
            self.amplitudes.len(),
            self.amplitudes.iter().enumerate().map(|(k, a)| {
                let m = magnetic(j, k);
                a * Complex64::from_polar(1.0, -phi * m * m)
            }),
        );
        Self { amplitudes }
    }
}

/// `exp(-i theta J_y) |J, J>` via the eigendecomposition of the Hermitian
/// `J_y` matrix.
pub fn css_prepare(ens: &SpinEnsemble, theta: f64) -> Result<DickeState> {
    validate_theta(theta)?;
    let ops = SpinMatrices::new(ens)?;
    let eig = SymmetricEigen::new(ops.jy);
    let top = DickeState::top(ens)?;
    // exp(-i theta J_y) = V diag(exp(-i theta lambda)) V^dagger
    let projected = eig.eigenvectors.adjoint() * &top.amplitudes;
    let phased = DVector::from_iterator(
        projected.len(),
        projected
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(c, &lambda)| c * Complex64::from_polar(1.0, -theta * lambda)),
    );
    Ok(DickeState {
        amplitudes: &eig.eigenvectors * phased,
    })
}

/// Density matrix `rho[(k, l)] = <J, m_k| rho |J, m_l>`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub entries: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn from_pure(state: &DickeState) -> Self {
        Self {
            entries: &state.amplitudes * state.amplitudes.adjoint(),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.trace()
    }

    /// Largest `|rho - rho^dagger|` entry.
    pub fn hermiticity_defect(&self) -> f64 {
        let adj = self.entries.adjoint();
        (&self.entries - adj).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Checks Hermiticity, unit trace and non-negative populations to `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let diag_ok = (0..self.dim()).all(|k| self.entries[(k, k)].re >= -tol);
        diag_ok && self.hermiticity_defect() <= tol && (self.trace() - 1.0).norm() <= tol
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.entries + self.entries.adjoint()) * Complex64::new(0.5, 0.0);
        SymmetricEigen::new(herm)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Exact solution of the dephasing master equation:
/// `rho_mn(phi) = rho_mn(0) exp[i (n^2 - m^2) phi - gamma (m - n)^2 phi]`.
///
/// Rejects `gamma * phi < 0`, for which the map is not contractive.
pub fn evolve(rho0: &DensityMatrix, phi: f64, gamma: f64) -> Result<DensityMatrix> {
    let elapsed = gamma * phi;
    if elapsed < 0.0 {
        return Err(Error::NegativeElapsedDephasing(elapsed));
    }
    Ok(evolve_formal(rho0, phi, gamma))
}

/// The same elementwise map as [`evolve`] without the contractivity guard.
/// For `gamma * phi < 0` it is the analytic continuation of the solution,
/// which the closed forms in [`crate::moments`] also follow.
pub fn evolve_formal(rho0: &DensityMatrix, phi: f64, gamma: f64) -> DensityMatrix {
    let dim = rho0.dim();
    let j = (dim - 1) as f64 / 2.0;
    let entries = DMatrix::from_fn(dim, dim, |k, l| {
        let rho = rho0.entries[(k, l)];
        if k == l {
            return rho;
        }
        let m = magnetic(j, k);
        let n = magnetic(j, l);
        let exponent = Complex64::new(-gamma * (m - n).powi(2) * phi, (n * n - m * m) * phi);
        rho * exponent.exp()
    });
    DensityMatrix { entries }
}

/// Operators the oracle can take expectation values of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operator {
    JPlus,
    JPlusSquared,
    Jz,
    JzSquared,
    Jx,
    Jy,
    JxSquared,
    JySquared,
}

impl Operator {
    pub const ALL: [Operator; 8] = [
        Operator::JPlus,
        Operator::JPlusSquared,
        Operator::Jz,
        Operator::JzSquared,
        Operator::Jx,
        Operator::Jy,
        Operator::JxSquared,
        Operator::JySquared,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operator::JPlus => "J+",
            Operator::JPlusSquared => "J+^2",
            Operator::Jz => "Jz",
            Operator::JzSquared => "Jz^2",
            Operator::Jx => "Jx",
            Operator::Jy => "Jy",
            Operator::JxSquared => "Jx^2",
            Operator::JySquared => "Jy^2",
        }
    }

    /// Polynomial degree in the spin components.
    pub fn degree(self) -> i32 {
        match self {
            Operator::JPlus | Operator::Jz | Operator::Jx | Operator::Jy => 1,
            _ => 2,
        }
    }

    pub fn matrix(self, ops: &SpinMatrices) -> DMatrix<Complex64> {
        match self {
            Operator::JPlus => ops.jplus.clone(),
            Operator::JPlusSquared => &ops.jplus * &ops.jplus,
            Operator::Jz => ops.jz.clone(),
            Operator::JzSquared => &ops.jz * &ops.jz,
            Operator::Jx => ops.jx.clone(),
            Operator::Jy => ops.jy.clone(),
            Operator::JxSquared => &ops.jx * &ops.jx,
            Operator::JySquared => &ops.jy * &ops.jy,
        }
    }
}

impl FromStr for Operator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let op = match key.as_str() {
            "J+" | "Jp" | "Jplus" => Operator::JPlus,
            "J+^2" | "J+²" | "Jp2" | "Jplus2" => Operator::JPlusSquared,
            "Jz" => Operator::Jz,
            "Jz^2" | "Jz²" | "Jz2" => Operator::JzSquared,
            "Jx" => Operator::Jx,
            "Jy" => Operator::Jy,
            "Jx^2" | "Jx²" | "Jx2" => Operator::JxSquared,
            "Jy^2" | "Jy²" | "Jy2" => Operator::JySquared,
            _ => return Err(Error::UnknownOperator(s.to_string())),
        };
        Ok(op)
    }
}

/// `Tr(rho A)` summed over the nonzero entries of `A`.
///
/// Skipping structural zeros keeps the trace finite when far coherences of a
/// formally continued `rho` overflow.
pub fn trace_product(rho: &DensityMatrix, a: &DMatrix<Complex64>) -> Complex64 {
    let dim = rho.dim();
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 0..dim {
        for l in 0..dim {
            let a_kl = a[(k, l)];
            if a_kl != Complex64::new(0.0, 0.0) {
                acc += rho.entries[(l, k)] * a_kl;
            }
        }
    }
    acc
}

/// `Tr(rho op)` for the operator named `op_name`.
pub fn expect(rho: &DensityMatrix, op_name: &str) -> Result<Complex64> {
    let op: Operator = op_name.parse()?;
    let ens = SpinEnsemble::new(rho.dim() as u64 - 1)?;
    let ops = SpinMatrices::new(&ens)?;
    Ok(trace_product(rho, &op.matrix(&ops)))
}

/// Prepared coherent state plus the operator matrices, reusable across
/// phases and dephasing rates.
#[derive(Debug, Clone)]
pub struct Oracle {
    ens: SpinEnsemble,
    ops: SpinMatrices,
    rho0: DensityMatrix,
}

impl Oracle {
    pub fn new(ens: &SpinEnsemble, theta: f64) -> Result<Self> {
        let state = css_prepare(ens, theta)?;
        Ok(Self {
            ens: *ens,
            ops: SpinMatrices::new(ens)?,
            rho0: DensityMatrix::from_pure(&state),
        })
    }

    pub fn ensemble(&self) -> &SpinEnsemble {
        &self.ens
    }

    pub fn initial(&self) -> &DensityMatrix {
        &self.rho0
    }

    pub fn operators(&self) -> &SpinMatrices {
        &self.ops
    }

    /// Evolved state, formally continued when `gamma * phi < 0`.
    pub fn state(&self, phi: f64, gamma: f64) -> DensityMatrix {
        evolve_formal(&self.rho0, phi, gamma)
    }

    pub fn expect(&self, rho: &DensityMatrix, op: Operator) -> Complex64 {
        trace_product(rho, &op.matrix(&self.ops))
    }

    fn mean(&self, axis: Axis, phi: f64, gamma: f64) -> f64 {
        let rho = self.state(phi, gamma);
        let op = match axis {
            Axis::X => &self.ops.jx,
            Axis::Y => &self.ops.jy,
        };
        trace_product(&rho, op).re
    }

    /// `Delta J_v / |d<J_v>/dphi|` with a Richardson-extrapolated centered
    /// difference slope. `step = None` uses `1e-6 max(1, 1/(2J))`.
    pub fn sensitivity_fd(&self, phi: f64, gamma: f64, axis: Axis, step: Option<f64>) -> Estimate {
        let j = self.ens.j();
        let h = step.unwrap_or(1e-6 * f64::max(1.0, 1.0 / (2.0 * j)));
        let centered = |h: f64| (self.mean(axis, phi + h, gamma) - self.mean(axis, phi - h, gamma)) / (2.0 * h);
        let slope = (4.0 * centered(0.5 * h) - centered(h)) / 3.0;
        // differences of O(eps J) means carry O(eps J / h) noise
        let noise = 64.0 * f64::EPSILON * j.max(1.0) / h;
        if slope.abs() < noise.max(1e-14 * j * j) {
            return Estimate::Divergent;
        }
        let rho = self.state(phi, gamma);
        let (op, op2) = match axis {
            Axis::X => (Operator::Jx, Operator::JxSquared),
            Axis::Y => (Operator::Jy, Operator::JySquared),
        };
        let mean = self.expect(&rho, op).re;
        let var = (self.expect(&rho, op2).re - mean * mean).max(0.0);
        Estimate::Finite(var.sqrt() / slope.abs())
    }
}

/// One-shot finite-difference sensitivity from scratch.
pub fn sensitivity_fd(
    ens: &SpinEnsemble,
    theta: f64,
    phi: f64,
    gamma: f64,
    axis: Axis,
    step: Option<f64>,
) -> Result<Estimate> {
    Ok(Oracle::new(ens, theta)?.sensitivity_fd(phi, gamma, axis, step))
}
