use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ensemble of `N` spin-1/2 particles with total spin `J = N/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpinEnsemble {
    particles: u64,
}

impl SpinEnsemble {
    pub fn new(particles: u64) -> Result<Self> {
        if particles == 0 {
            return Err(Error::NoParticles);
        }
        Ok(Self { particles })
    }

    /// Ensemble whose total spin is `j`; `2j` must be a positive integer.
    pub fn from_total_spin(j: f64) -> Result<Self> {
        let n = 2.0 * j;
        if n.is_nan() || n < 1.0 || n.fract() != 0.0 || n > u64::MAX as f64 {
            return Err(Error::NoParticles);
        }
        Self::new(n as u64)
    }

    pub fn particles(&self) -> u64 {
        self.particles
    }

    /// Total spin `J = N/2`.
    pub fn j(&self) -> f64 {
        self.particles as f64 / 2.0
    }
}

/// Preparation angle, accumulated twisting phase and dimensionless
/// dephasing rate of one protocol run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    theta: f64,
    phi: f64,
    gamma: f64,
}

impl ProtocolParams {
    pub fn new(theta: f64, phi: f64, gamma: f64) -> Result<Self> {
        validate_theta(theta)?;
        if !phi.is_finite() {
            return Err(Error::InvalidPhi(phi));
        }
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::InvalidGamma(gamma));
        }
        Ok(Self { theta, phi, gamma })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Same preparation and dephasing at a different phase.
    pub fn with_phi(&self, phi: f64) -> Result<Self> {
        Self::new(self.theta, phi, self.gamma)
    }
}

pub(crate) fn validate_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta < PI {
        Ok(())
    } else {
        Err(Error::InvalidTheta(theta))
    }
}

/// Equatorial spin component that is read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            other => Err(format!("unknown axis `{other}`")),
        }
    }
}
