//! Iterative global sensing: each round simulates an ensemble at the current
//! controls `(ε_i, φ_i)`, extracts a frequency estimate from the filtered
//! ensemble, and moves the drive halfway toward the critical amplitude of
//! that estimate.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{critical_amplitude, stability_margin, GaussianState, OscillatorParams, PriorInterval};
use crate::ekf::{run_ekf, EkfConfig, RestartCause, RestartPolicy};
use crate::error::{invalid, Error, Result};
use crate::estimator::{fit_skew_normal, make_histogram, BinningRule, EnsembleSnapshot, SampleSummary, SkewNormalFit};
use crate::fisher::optimal_phase;
use crate::model::ModelContext;
use crate::sde::{simulate_truth, NoiseStream};

/// Amplitude update rule: midpoint of the previous drive and the target.
pub fn update_amplitude(eps_prev: f64, eps_target: f64) -> f64 {
    0.5 * (eps_prev + eps_target)
}

/// Drive and phase for the first round.
pub fn initial_controls(prior: &PriorInterval, margin: f64, eta: f64, kappa: f64) -> Result<(f64, f64)> {
    if !(margin > 0.0) {
        return Err(invalid("epsilon_margin", "must be positive"));
    }
    let eps_c = critical_amplitude(prior.omega_l, kappa);
    if margin >= eps_c {
        return Err(invalid("epsilon_margin", format!("{margin} leaves a nonpositive drive (ε_c = {eps_c})")));
    }
    let eps0 = eps_c - margin;
    let phi0 = optimal_phase(prior.midpoint(), eps0, eta, kappa)?.phi;
    Ok((eps0, phi0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    pub epsilon: f64,
    pub phi: f64,
    /// The midpoint landed at or beyond `ε_c(ω_est)` and was pulled back.
    pub clamped: bool,
}

/// Controls for the next round given the latest estimate.
pub fn next_controls(omega_est: f64, eps_prev: f64, eta: f64, kappa: f64, margin: f64) -> Result<Controls> {
    if !omega_est.is_finite() {
        return Err(invalid("omega_est", "must be finite"));
    }
    let eps_c = critical_amplitude(omega_est, kappa);
    let mut epsilon = update_amplitude(eps_prev, eps_c);
    let clamped = epsilon >= eps_c;
    if clamped {
        epsilon = (eps_c - 0.5 * margin).max(0.0);
    }
    let phi = optimal_phase(omega_est, epsilon, eta, kappa)?.phi;
    Ok(Controls { epsilon, phi, clamped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterInit {
    /// Start every round at the prior midpoint.
    #[default]
    PriorMidpoint,
    /// Start each round at the previous round's estimate.
    CarryForward,
}

/// Filter settings shared by all rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolFilter {
    /// Prior frequency variance in units of `κ²`.
    pub v: f64,
    pub f_max: f64,
    pub restart_policy: RestartPolicy,
    pub max_restarts: usize,
    pub init: FilterInit,
}

impl Default for ProtocolFilter {
    fn default() -> Self {
        Self {
            v: 1.0,
            f_max: 1e5,
            restart_policy: RestartPolicy::ResetToInit,
            max_restarts: 100,
            init: FilterInit::PriorMidpoint,
        }
    }
}

fn default_kappa() -> f64 {
    1.0
}
fn default_iterations() -> usize {
    3
}
fn default_t_star() -> f64 {
    300.0
}
fn default_margin() -> f64 {
    0.1
}
fn default_dt() -> f64 {
    0.02
}
fn default_record_interval() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub prior: PriorInterval,
    pub eta: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    pub n_traj: usize,
    #[serde(default = "default_iterations")]
    pub n_iterations: usize,
    #[serde(default = "default_t_star")]
    pub t_star: f64,
    /// Estimation time within each round; defaults to `t_star`.
    #[serde(default)]
    pub t_large: Option<f64>,
    #[serde(default = "default_margin")]
    pub epsilon_margin: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Spacing of the stored ensemble-mean curve.
    #[serde(default = "default_record_interval")]
    pub record_interval: f64,
    #[serde(default)]
    pub filter: ProtocolFilter,
    #[serde(default)]
    pub binning: BinningRule,
    #[serde(default)]
    pub base_seed: u64,
}

impl ProtocolConfig {
    pub fn new(prior: PriorInterval, eta: f64, n_traj: usize) -> Self {
        Self {
            prior,
            eta,
            kappa: default_kappa(),
            n_traj,
            n_iterations: default_iterations(),
            t_star: default_t_star(),
            t_large: None,
            epsilon_margin: default_margin(),
            dt: default_dt(),
            record_interval: default_record_interval(),
            filter: ProtocolFilter::default(),
            binning: BinningRule::default(),
            base_seed: 0,
        }
    }

    pub fn t_large(&self) -> f64 {
        self.t_large.unwrap_or(self.t_star)
    }

    fn record_every(&self) -> usize {
        ((self.record_interval / self.dt).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validated()?;
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(invalid("eta", "must lie in [0, 1]"));
        }
        if !(self.kappa > 0.0) {
            return Err(invalid("kappa", "must be positive"));
        }
        if self.n_traj < crate::estimator::MIN_HISTOGRAM_SAMPLES {
            return Err(invalid("n_traj", "too few trajectories to build a histogram"));
        }
        if !(self.dt > 0.0) || !(self.t_star > 0.0) {
            return Err(invalid("t_star", "t_star and dt must be positive"));
        }
        let t_large = self.t_large();
        if !(t_large > 0.0 && t_large <= self.t_star) {
            return Err(invalid("t_large", "must lie in (0, t_star]"));
        }
        if !(self.record_interval > 0.0) {
            return Err(invalid("record_interval", "must be positive"));
        }
        if !(self.epsilon_margin > 0.0) {
            return Err(invalid("epsilon_margin", "must be positive"));
        }
        Ok(())
    }
}

/// One round of the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub epsilon: f64,
    pub phi: f64,
    /// The drive was pulled back from the critical amplitude of the previous estimate.
    pub clamped: bool,
    /// The drive exceeds the true critical amplitude; excluded from statistics.
    pub unstable_regime: bool,
    pub omega_est: Option<f64>,
    pub fit: Option<SkewNormalFit>,
    pub summary: Option<SampleSummary>,
    /// Ensemble-mean filter estimate on the recorded grid.
    pub mean_curve: Vec<(f64, f64)>,
    /// Filter estimates at `t_large`, one per surviving trajectory.
    pub samples: Vec<f64>,
    pub threshold_restarts: usize,
    pub failure_restarts: usize,
    /// Trajectories lost to simulation or filter aborts.
    pub dropped: usize,
    pub failure: Option<String>,
}

impl IterationRecord {
    pub fn write_ensemble_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "trajectory,omega_est")?;
        for (j, x) in self.samples.iter().enumerate() {
            writeln!(w, "{},{:.16e}", j, x)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOutcome {
    pub omega_true: f64,
    pub iterations: Vec<IterationRecord>,
    /// All requested rounds produced an estimate.
    pub completed: bool,
}

impl ProtocolOutcome {
    /// Estimates of the rounds that ran inside the normal phase.
    pub fn estimates(&self) -> Vec<Option<f64>> {
        self.iterations
            .iter()
            .map(|it| if it.unstable_regime { None } else { it.omega_est })
            .collect()
    }
}

struct Member {
    sample: f64,
    curve: Vec<f64>,
    threshold: usize,
    failure: usize,
}

fn run_round(
    config: &ProtocolConfig,
    params: &OscillatorParams,
    ekf: &EkfConfig,
    round: usize,
) -> Vec<Result<Member>> {
    let ctx = ModelContext::from(params);
    let t_large = config.t_large();
    (0..config.n_traj as u64)
        .into_par_iter()
        .map(|j| {
            let noise = NoiseStream::batched(config.base_seed, round as u64, j);
            let (_, record) = simulate_truth(params, &GaussianState::vacuum(), config.dt, config.t_star, &noise)?;
            let tr = run_ekf(&record, ekf, &ctx)?;
            let sample = tr.omega_at(t_large).ok_or(Error::EmptyEnsemble)?;
            Ok(Member {
                sample,
                threshold: tr.count_restarts(RestartCause::Threshold),
                failure: tr.count_restarts(RestartCause::FilterFailure),
                curve: tr.omega_estimates,
            })
        })
        .collect()
}

/// Runs the adaptive protocol against a simulated sensor with frequency `omega_true`.
///
/// Round `i`, trajectory `j` draws its noise from `NoiseStream::batched(base_seed, i, j)`,
/// so the outcome is a pure function of the configuration and `omega_true`.
pub fn run_protocol(config: &ProtocolConfig, omega_true: f64) -> Result<ProtocolOutcome> {
    config.validate()?;
    let kappa = config.kappa;
    let (mut epsilon, mut phi) = initial_controls(&config.prior, config.epsilon_margin, config.eta, kappa)?;
    let mut clamped = false;
    let mut ekf = EkfConfig::from_prior(&config.prior, config.filter.v, kappa, config.dt, config.filter.f_max);
    ekf.restart_policy = config.filter.restart_policy;
    ekf.max_restarts = config.filter.max_restarts;
    ekf.record_every = config.record_every();

    let mut outcome = ProtocolOutcome {
        omega_true,
        iterations: Vec::with_capacity(config.n_iterations),
        completed: true,
    };
    for index in 0..config.n_iterations {
        let params = OscillatorParams {
            omega: omega_true,
            epsilon,
            kappa,
            eta: config.eta,
            phi,
        }
        .validated()?;
        let mut record = IterationRecord {
            index,
            epsilon,
            phi,
            clamped,
            unstable_regime: stability_margin(&params) >= 0.0,
            omega_est: None,
            fit: None,
            summary: None,
            mean_curve: Vec::new(),
            samples: Vec::new(),
            threshold_restarts: 0,
            failure_restarts: 0,
            dropped: 0,
            failure: None,
        };
        let members = run_round(config, &params, &ekf, index);
        let mut curve_sum: Vec<f64> = Vec::new();
        let mut alive = 0usize;
        for m in members {
            match m {
                Ok(m) => {
                    record.threshold_restarts += m.threshold;
                    record.failure_restarts += m.failure;
                    record.samples.push(m.sample);
                    if curve_sum.is_empty() {
                        curve_sum = m.curve;
                    } else {
                        curve_sum.iter_mut().zip(&m.curve).for_each(|(a, b)| *a += b);
                    }
                    alive += 1;
                }
                Err(_) => record.dropped += 1,
            }
        }
        if alive > 0 {
            let step = config.dt * ekf.record_every as f64;
            record.mean_curve = curve_sum
                .iter()
                .enumerate()
                .map(|(k, s)| (k as f64 * step, s / alive as f64))
                .collect();
        }
        let estimate = EnsembleSnapshot::new(config.t_large(), record.samples.clone())
            .and_then(|snap| make_histogram(&snap, config.binning))
            .and_then(|hist| {
                record.summary = Some(hist.summary);
                fit_skew_normal(&hist, None)
            });
        match estimate {
            Ok(fit) => {
                if !fit.converged {
                    log::warn!("round {index}: skew-normal fit did not converge, using best-so-far mode");
                }
                record.fit = Some(fit);
                record.omega_est = Some(fit.mode);
            }
            Err(e) => record.failure = Some(e.to_string()),
        }
        let next = match (record.failure.is_none(), record.omega_est) {
            (true, Some(w)) if index + 1 < config.n_iterations => {
                match next_controls(w, epsilon, config.eta, kappa, config.epsilon_margin) {
                    Ok(c) => Some((c, w)),
                    Err(e) => {
                        record.failure = Some(e.to_string());
                        None
                    }
                }
            }
            _ => None,
        };
        let failed = record.failure.is_some();
        outcome.iterations.push(record);
        if failed {
            outcome.completed = false;
            break;
        }
        if let Some((c, w)) = next {
            log::info!("round {index}: estimate {w:.4}, next drive {:.4}, phase {:.4}", c.epsilon, c.phi);
            epsilon = c.epsilon;
            phi = c.phi;
            clamped = c.clamped;
            if config.filter.init == FilterInit::CarryForward {
                ekf = ekf.with_initial_frequency(w);
            }
        }
    }
    Ok(outcome)
}
