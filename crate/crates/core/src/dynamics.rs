//! Gaussian-limit model of the monitored Kerr parametric oscillator.
//!
//! The conditional state is a quadrature mean `r = (X, P)` and a covariance `σ`
//! (normalized so that the vacuum has `σ = I`). Units are fixed by `κ`; every
//! parameter set used in practice has `κ = 1`.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};

/// Integration step of the covariance relaxation.
pub const RELAXATION_STEP: f64 = 0.01;
/// Default stopping tolerance on `max |dσ/dt|`, relative to `max(1, max |σ|)`.
pub const RELAXATION_TOL: f64 = 1e-12;
/// Default relaxation horizon.
pub const RELAXATION_T_MAX: f64 = 200.0;

/// Maps a homodyne phase onto `[0, π)`.
pub fn canonical_phase(phi: f64) -> f64 {
    let p = phi.rem_euclid(PI);
    // rem_euclid can round up to exactly π for tiny negative inputs
    if p >= PI {
        0.0
    } else {
        p
    }
}

/// Physical and control parameters of the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorParams {
    pub omega: f64,
    pub epsilon: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    pub eta: f64,
    pub phi: f64,
}

fn default_kappa() -> f64 {
    1.0
}

impl OscillatorParams {
    /// Builds a validated parameter set in `κ = 1` units with a canonical phase.
    pub fn new(omega: f64, epsilon: f64, eta: f64, phi: f64) -> Result<Self> {
        Self {
            omega,
            epsilon,
            kappa: 1.0,
            eta,
            phi,
        }
        .validated()
    }

    /// Checks the invariants and canonicalizes the phase.
    pub fn validated(mut self) -> Result<Self> {
        for (name, v) in [
            ("omega", self.omega),
            ("epsilon", self.epsilon),
            ("kappa", self.kappa),
            ("eta", self.eta),
            ("phi", self.phi),
        ] {
            if !v.is_finite() {
                return Err(invalid(name, format!("must be finite, got {v}")));
            }
        }
        if self.kappa <= 0.0 {
            return Err(invalid("kappa", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(invalid("eta", format!("must lie in [0, 1], got {}", self.eta)));
        }
        if self.omega == 0.0 {
            log::warn!("omega = 0 lies on the edge of the continuous-transition regime");
        }
        self.phi = canonical_phase(self.phi);
        Ok(self)
    }

    pub fn with_phi(self, phi: f64) -> Self {
        Self {
            phi: canonical_phase(phi),
            ..self
        }
    }

    pub fn with_omega(self, omega: f64) -> Self {
        Self { omega, ..self }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }

    pub fn with_eta(self, eta: f64) -> Self {
        Self { eta, ..self }
    }

    pub fn is_stable(&self) -> bool {
        stability_margin(self) < 0.0
    }
}

/// Conditional Gaussian state of the oscillator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianState {
    pub r: Vector2<f64>,
    pub sigma: Matrix2<f64>,
}

impl GaussianState {
    pub fn vacuum() -> Self {
        Self {
            r: Vector2::zeros(),
            sigma: Matrix2::identity(),
        }
    }

    pub fn x(&self) -> f64 {
        self.r[0]
    }

    pub fn p(&self) -> f64 {
        self.r[1]
    }

    pub fn sigma_x(&self) -> f64 {
        self.sigma[(0, 0)]
    }

    pub fn sigma_p(&self) -> f64 {
        self.sigma[(1, 1)]
    }

    pub fn sigma_xp(&self) -> f64 {
        self.sigma[(0, 1)]
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(self.sigma.iter()).all(|v| v.is_finite())
    }
}

impl Default for GaussianState {
    fn default() -> Self {
        Self::vacuum()
    }
}

/// Prior frequency interval `(ω_l, ω_h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorInterval {
    pub omega_l: f64,
    pub omega_h: f64,
}

impl PriorInterval {
    pub fn new(omega_l: f64, omega_h: f64) -> Result<Self> {
        Self { omega_l, omega_h }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.omega_l.is_finite() && self.omega_h.is_finite()) {
            return Err(invalid("prior", "bounds must be finite"));
        }
        if self.omega_l < 0.0 {
            return Err(invalid("prior", "omega_l must be nonnegative"));
        }
        if self.omega_h <= self.omega_l {
            return Err(invalid("prior", "omega_h must exceed omega_l"));
        }
        Ok(self)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.omega_l + self.omega_h)
    }

    pub fn width(&self) -> f64 {
        self.omega_h - self.omega_l
    }

    pub fn contains(&self, omega: f64) -> bool {
        omega > self.omega_l && omega < self.omega_h
    }
}

/// Drift matrix `A` of the quadrature means.
pub fn drift_matrix(params: &OscillatorParams) -> Matrix2<f64> {
    let OscillatorParams {
        omega,
        epsilon,
        kappa,
        ..
    } = *params;
    Matrix2::new(
        -0.5 * kappa,
        omega - epsilon,
        -omega - epsilon,
        -0.5 * kappa,
    )
}

/// Unit vector `(cos φ, sin φ)` selecting the measured quadrature.
pub fn measurement_vector(phi: f64) -> Vector2<f64> {
    let (s, c) = phi.sin_cos();
    Vector2::new(c, s)
}

/// Rank-one projector `B = v vᵀ` onto the measured quadrature.
pub fn measurement_matrix(phi: f64) -> Matrix2<f64> {
    let (s, c) = phi.sin_cos();
    Matrix2::new(c * c, s * c, s * c, s * s)
}

/// Phase boundary `ε_c(ω) = sqrt(ω² + κ²/4)`.
pub fn critical_amplitude(omega: f64, kappa: f64) -> f64 {
    (omega * omega + 0.25 * kappa * kappa).sqrt()
}

/// Largest real part among the eigenvalues of the drift matrix.
pub fn stability_margin(params: &OscillatorParams) -> f64 {
    let disc = params.epsilon * params.epsilon - params.omega * params.omega;
    -0.5 * params.kappa + disc.max(0.0).sqrt()
}

/// Right-hand side of the deterministic conditional covariance flow.
pub fn riccati_rhs(sigma: &Matrix2<f64>, params: &OscillatorParams) -> Matrix2<f64> {
    let a = drift_matrix(params);
    let shifted = sigma - Matrix2::identity();
    let u = shifted * measurement_vector(params.phi);
    a * sigma + sigma * a.transpose() + Matrix2::identity() * params.kappa
        - u * u.transpose() * (params.eta * params.kappa)
}

/// One classical fourth-order Runge-Kutta step of the covariance flow.
pub fn covariance_rk4_step(
    sigma: &Matrix2<f64>,
    params: &OscillatorParams,
    dt: f64,
) -> Matrix2<f64> {
    let k1 = riccati_rhs(sigma, params);
    let k2 = riccati_rhs(&(sigma + k1 * (0.5 * dt)), params);
    let k3 = riccati_rhs(&(sigma + k2 * (0.5 * dt)), params);
    let k4 = riccati_rhs(&(sigma + k3 * dt), params);
    symmetrize2(&(sigma + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)))
}

pub(crate) fn symmetrize2(m: &Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn max_abs2(m: &Matrix2<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Stationary conditional covariance, obtained by relaxing the covariance flow
/// from `σ = I` until `max |dσ/dt| < tol · max(1, max |σ|)`.
pub fn steady_covariance(params: &OscillatorParams, tol: f64, t_max: f64) -> Result<Matrix2<f64>> {
    let margin = stability_margin(params);
    if margin >= 0.0 {
        return Err(Error::Unstable { margin });
    }
    let mut sigma = Matrix2::identity();
    let mut t = 0.0;
    loop {
        let residual = max_abs2(&riccati_rhs(&sigma, params));
        if !residual.is_finite() {
            return Err(Error::NotConverged { t_max, residual });
        }
        if residual < tol * max_abs2(&sigma).max(1.0) {
            return Ok(sigma);
        }
        if t >= t_max {
            return Err(Error::NotConverged { t_max, residual });
        }
        sigma = covariance_rk4_step(&sigma, params, RELAXATION_STEP);
        t += RELAXATION_STEP;
    }
}

/// [`steady_covariance`] with the default tolerance and horizon.
pub fn steady_covariance_default(params: &OscillatorParams) -> Result<Matrix2<f64>> {
    steady_covariance(params, RELAXATION_TOL, RELAXATION_T_MAX)
}
