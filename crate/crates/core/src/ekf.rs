//! Continuous-discrete extended Kalman filter for the frequency.
//!
//! Each measurement bin is processed in two congruence-form steps, so the
//! covariance stays positive semidefinite by construction:
//!
//! ```text
//! predict: x̄ = x̃ + F(x̃) dt
//!          Σ̄ = T Σ̃ Tᵀ,            T = 1 + (∇F − G H) dt
//! update:  x̃ = x̄ + K (Δy − H x̄ dt), K = Σ̄ Hᵀ + G(x̄)
//!          Σ̃ = W Σ̄ Wᵀ + Σ̄ HᵀH Σ̄ dt, W = 1 − Σ̄ HᵀH dt
//! ```
//!
//! A run re-initializes the filter whenever the state norm exceeds `F_max`
//! (or the state stops being finite) and keeps consuming the same record.

use std::io::Write;

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::dynamics::PriorInterval;
use crate::error::{invalid, Error, Result};
use crate::model::{diffusion_g, drift_f, jacobian_f, observation_h, FilterVector, ModelContext, IOMEGA};
use crate::sde::PhotocurrentRecord;

/// Initial variance of the five moment components.
pub const MOMENT_PRIOR_VARIANCE: f64 = 1e-3;

/// Filter mean, covariance and time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub x: FilterVector,
    pub sigma: Matrix6<f64>,
    pub t: f64,
}

impl FilterState {
    pub fn from_config(config: &EkfConfig) -> Self {
        Self {
            x: config.init_mean,
            sigma: Matrix6::from_diagonal(&Vector6::from(config.init_cov_diag)),
            t: 0.0,
        }
    }

    pub fn omega(&self) -> f64 {
        self.x.omega()
    }
}

/// Predicted quantities `(x̄, Σ̄)` awaiting the measurement update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intermediate {
    pub x_bar: FilterVector,
    pub sigma_bar: Matrix6<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RestartPolicy {
    /// Return to the configured initial mean and covariance.
    ResetToInit,
    /// Initial covariance and moments, but keep the last finite frequency
    /// estimate seen before the divergence.
    ResetToLatestFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RestartCause {
    /// Norm exceeded `F_max`.
    Threshold,
    /// Mean or covariance became non-finite.
    FilterFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartEvent {
    pub step: usize,
    pub t: f64,
    pub cause: RestartCause,
}

impl Serialize for FilterVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let arr: [f64; 6] = self.0.into();
        arr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for FilterVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let arr = <[f64; 6]>::deserialize(d)?;
        Ok(FilterVector(Vector6::from(arr)))
    }
}

/// Filter configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EkfConfig {
    pub dt: f64,
    pub f_max: f64,
    pub init_mean: FilterVector,
    pub init_cov_diag: [f64; 6],
    #[serde(default = "default_policy")]
    pub restart_policy: RestartPolicy,
    #[serde(default = "default_max_restarts")]
    pub max_restarts: usize,
    /// Record every n-th step of the frequency estimate.
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Also keep the full mean and covariance diagonal at recorded steps.
    #[serde(default)]
    pub store_full: bool,
}

fn default_policy() -> RestartPolicy {
    RestartPolicy::ResetToInit
}

fn default_max_restarts() -> usize {
    100
}

fn default_record_every() -> usize {
    1
}

impl EkfConfig {
    /// Standard initialization: vacuum moments, prior midpoint, `Σ̃(0) = diag(1e-3, …, 1e-3, κ² v)`.
    pub fn from_prior(prior: &PriorInterval, v: f64, kappa: f64, dt: f64, f_max: f64) -> Self {
        let state = init_filter(prior, v, kappa);
        Self {
            dt,
            f_max,
            init_mean: state.x,
            init_cov_diag: state.sigma.diagonal().into(),
            restart_policy: RestartPolicy::ResetToInit,
            max_restarts: default_max_restarts(),
            record_every: 1,
            store_full: false,
        }
    }

    pub fn with_initial_frequency(mut self, omega: f64) -> Self {
        self.init_mean.0[IOMEGA] = omega;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("ekf.dt", "must be positive"));
        }
        if !(self.f_max > 0.0) {
            return Err(invalid("ekf.f_max", "must be positive"));
        }
        if self.init_cov_diag.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("ekf.init_cov_diag", "entries must be finite and nonnegative"));
        }
        if !self.init_mean.is_finite() {
            return Err(invalid("ekf.init_mean", "entries must be finite"));
        }
        if self.record_every == 0 {
            return Err(invalid("ekf.record_every", "must be at least 1"));
        }
        Ok(())
    }
}

/// Output of a filter run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EkfTrajectory {
    pub times: Vec<f64>,
    pub omega_estimates: Vec<f64>,
    /// Whether a restart happened since the previous recorded point.
    pub restart_flags: Vec<bool>,
    /// Mean and covariance diagonal at recorded points, when requested.
    pub full_states: Option<Vec<(FilterVector, [f64; 6])>>,
    pub restarts: Vec<RestartEvent>,
}

impl EkfTrajectory {
    pub fn restart_times(&self) -> Vec<f64> {
        self.restarts.iter().map(|r| r.t).collect()
    }

    pub fn count_restarts(&self, cause: RestartCause) -> usize {
        self.restarts.iter().filter(|r| r.cause == cause).count()
    }

    /// Estimate at the recorded time closest to `t`.
    pub fn omega_at(&self, t: f64) -> Option<f64> {
        nearest_index(&self.times, t).map(|i| self.omega_estimates[i])
    }

    pub fn final_omega(&self) -> Option<f64> {
        self.omega_estimates.last().copied()
    }

    /// Columns `step,t,omega_est,restart_flag`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,t,omega_est,restart_flag")?;
        for (i, ((t, om), flag)) in self
            .times
            .iter()
            .zip(&self.omega_estimates)
            .zip(&self.restart_flags)
            .enumerate()
        {
            writeln!(w, "{},{:.16e},{:.16e},{}", i, t, om, u8::from(*flag))?;
        }
        Ok(())
    }

    /// Wide form with all six mean entries and the six covariance diagonals.
    /// Requires `store_full`.
    pub fn write_wide_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let full = self
            .full_states
            .as_ref()
            .ok_or_else(|| Error::Format("trajectory was recorded without full states".into()))?;
        writeln!(
            w,
            "step,t,X,P,sigma_x,sigma_p,sigma_xp,omega,var_X,var_P,var_sigma_x,var_sigma_p,var_sigma_xp,var_omega,restart_flag"
        )?;
        for (i, ((t, (x, diag)), flag)) in self.times.iter().zip(full).zip(&self.restart_flags).enumerate() {
            write!(w, "{},{:.16e}", i, t)?;
            for v in x.0.iter().chain(diag.iter()) {
                write!(w, ",{:.16e}", v)?;
            }
            writeln!(w, ",{}", u8::from(*flag))?;
        }
        Ok(())
    }
}

pub(crate) fn nearest_index(times: &[f64], t: f64) -> Option<usize> {
    if times.is_empty() {
        return None;
    }
    let pos = times.partition_point(|&s| s < t);
    if pos == 0 {
        return Some(0);
    }
    if pos == times.len() {
        return Some(times.len() - 1);
    }
    if (times[pos] - t).abs() < (t - times[pos - 1]).abs() {
        Some(pos)
    } else {
        Some(pos - 1)
    }
}

/// Initial filter state for a prior interval: vacuum moments, midpoint
/// frequency, `Σ̃(0) = diag(1e-3 ×5, κ² v)`.
pub fn init_filter(prior: &PriorInterval, v: f64, kappa: f64) -> FilterState {
    let mut diag = Vector6::repeat(MOMENT_PRIOR_VARIANCE);
    diag[IOMEGA] = kappa * kappa * v;
    FilterState {
        x: FilterVector::vacuum(prior.midpoint()),
        sigma: Matrix6::from_diagonal(&diag),
        t: 0.0,
    }
}

#[inline]
fn symmetrize6(m: &Matrix6<f64>) -> Matrix6<f64> {
    (m + m.transpose()) * 0.5
}

fn all_finite(x: &Vector6<f64>, s: &Matrix6<f64>) -> bool {
    x.iter().chain(s.iter()).all(|v| v.is_finite())
}

/// Prediction step: drift of the mean and congruence propagation of the covariance.
pub fn predict(state: &FilterState, ctx: &ModelContext, dt: f64) -> Result<Intermediate> {
    let x = &state.x;
    let h = observation_h(ctx);
    let g = diffusion_g(x, ctx);
    let m = jacobian_f(x, ctx) - g * h;
    let t = Matrix6::identity() + m * dt;
    let x_bar = x.0 + drift_f(x, ctx) * dt;
    let sigma_bar = symmetrize6(&(t * state.sigma * t.transpose()));
    if !all_finite(&x_bar, &sigma_bar) {
        return Err(Error::SimulationFailure {
            step: 0,
            reason: "non-finite prediction".into(),
        });
    }
    Ok(Intermediate {
        x_bar: FilterVector(x_bar),
        sigma_bar,
        t: state.t + dt,
    })
}

/// Measurement update with the Kalman gain `K = Σ̄Hᵀ + G(x̄)`.
pub fn update(pred: &Intermediate, delta_y: f64, ctx: &ModelContext, dt: f64) -> Result<FilterState> {
    let h = observation_h(ctx);
    let s = pred.sigma_bar * h.transpose();
    let gain = s + diffusion_g(&pred.x_bar, ctx);
    let innovation = delta_y - (h * pred.x_bar.0)[0] * dt;
    let x = pred.x_bar.0 + gain * innovation;
    let w = Matrix6::identity() - s * h * dt;
    let sigma = symmetrize6(&(w * pred.sigma_bar * w.transpose() + s * s.transpose() * dt));
    if !all_finite(&x, &sigma) {
        return Err(Error::SimulationFailure {
            step: 0,
            reason: "non-finite update".into(),
        });
    }
    Ok(FilterState {
        x: FilterVector(x),
        sigma,
        t: pred.t,
    })
}

/// `sqrt(X² + P² + σ_x² + σ_p² + σ_xp² + ω²/κ²)`.
pub fn frobenius_norm(x: &FilterVector, kappa: f64) -> f64 {
    let v = &x.0;
    let moments: f64 = v.iter().take(5).map(|c| c * c).sum();
    let w = v[IOMEGA] / kappa;
    (moments + w * w).sqrt()
}

/// Runs the filter over a whole record, restarting on divergence.
pub fn run_ekf(record: &PhotocurrentRecord, config: &EkfConfig, ctx: &ModelContext) -> Result<EkfTrajectory> {
    config.validate()?;
    if (record.dt - config.dt).abs() > 1e-12 * config.dt {
        return Err(invalid("ekf.dt", format!("record dt {} differs from filter dt {}", record.dt, config.dt)));
    }
    let dt = config.dt;
    let initial = FilterState::from_config(config);
    let capacity = record.len() / config.record_every + 1;
    let mut out = EkfTrajectory {
        times: Vec::with_capacity(capacity),
        omega_estimates: Vec::with_capacity(capacity),
        restart_flags: Vec::with_capacity(capacity),
        full_states: config.store_full.then(|| Vec::with_capacity(capacity)),
        restarts: Vec::new(),
    };
    let push = |out: &mut EkfTrajectory, state: &FilterState, flag: bool| {
        out.times.push(state.t);
        out.omega_estimates.push(state.omega());
        out.restart_flags.push(flag);
        if let Some(full) = out.full_states.as_mut() {
            full.push((state.x, state.sigma.diagonal().into()));
        }
    };

    let mut state = initial;
    push(&mut out, &state, false);
    let threshold = config.f_max;
    let mut pending_flag = false;
    for (step, &dy) in record.increments.iter().enumerate() {
        let t_next = (step + 1) as f64 * dt;
        let advanced = predict(&state, ctx, dt).and_then(|p| update(&p, dy, ctx, dt));
        let cause = match &advanced {
            Ok(next) if frobenius_norm(&next.x, ctx.kappa) > threshold => Some(RestartCause::Threshold),
            Ok(_) => None,
            Err(_) => Some(RestartCause::FilterFailure),
        };
        state = match cause {
            None => advanced?,
            Some(cause) => {
                if out.restarts.len() >= config.max_restarts {
                    return Err(Error::TooManyRestarts {
                        step,
                        restarts: out.restarts.len(),
                    });
                }
                out.restarts.push(RestartEvent { step, t: t_next, cause });
                pending_flag = true;
                let mut fresh = initial;
                if config.restart_policy == RestartPolicy::ResetToLatestFrequency && state.omega().is_finite() {
                    fresh.x.0[IOMEGA] = state.omega();
                }
                fresh
            }
        };
        state.t = t_next;
        if (step + 1) % config.record_every == 0 {
            push(&mut out, &state, pending_flag);
            pending_flag = false;
        }
    }
    Ok(out)
}
