//! Ground-truth conditional trajectories and synthetic photocurrents.
//!
//! The mean follows an Euler-Maruyama step while the covariance, which obeys
//! an ordinary differential equation, takes a fourth-order step.

use std::io::{BufRead, Read, Write};

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{covariance_rk4_step, drift_matrix, measurement_vector, GaussianState, OscillatorParams};
use crate::error::{invalid, Error, Result};

/// Reproducible source of Wiener increments.
///
/// Every `(base_seed, stream_index)` pair maps to its own ChaCha stream, so
/// trajectories can be generated in any order or in parallel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseStream {
    pub base_seed: u64,
    pub stream_index: u64,
}

impl NoiseStream {
    pub fn new(base_seed: u64, stream_index: u64) -> Self {
        Self {
            base_seed,
            stream_index,
        }
    }

    /// Stream for trajectory `index` within batch `batch` of the same seed.
    pub fn batched(base_seed: u64, batch: u64, index: u64) -> Self {
        Self::new(base_seed, (batch << 32) | (index & 0xffff_ffff))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base_seed);
        rng.set_stream(self.stream_index);
        rng
    }

    /// Iterator of increments `dw ~ N(0, dt)`.
    pub fn wiener(&self, dt: f64) -> WienerIncrements {
        WienerIncrements {
            rng: self.rng(),
            scale: dt.sqrt(),
        }
    }
}

pub struct WienerIncrements {
    rng: ChaCha8Rng,
    scale: f64,
}

impl Iterator for WienerIncrements {
    type Item = f64;

    #[inline]
    fn next(&mut self) -> Option<f64> {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        Some(self.scale * z)
    }
}

/// Measured photocurrent increments `Δy` on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotocurrentRecord {
    pub dt: f64,
    pub increments: Vec<f64>,
    pub params: OscillatorParams,
}

impl PhotocurrentRecord {
    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.increments.len() as f64 * self.dt
    }

    /// Writes `step,t,delta_y` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,t,delta_y")?;
        for (i, dy) in self.increments.iter().enumerate() {
            writeln!(w, "{},{:.16e},{:.16e}", i, (i + 1) as f64 * self.dt, dy)?;
        }
        Ok(())
    }

    /// Reads the CSV form. Lines starting with `#` are ignored. `dt` is taken
    /// from the first time stamp; parameters are not part of the CSV form.
    pub fn read_csv<R: BufRead>(r: R, params: OscillatorParams) -> Result<Self> {
        let mut increments = Vec::new();
        let mut dt = None;
        let mut header_seen = false;
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                if line != "step,t,delta_y" {
                    return Err(Error::Format(format!("unexpected header `{line}`")));
                }
                header_seen = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::Format(format!("expected 3 columns in `{line}`")));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad number `{s}`: {e}")))
            };
            if dt.is_none() {
                dt = Some(parse(cols[1])?);
            }
            increments.push(parse(cols[2])?);
        }
        let dt = dt.ok_or_else(|| Error::Format("record has no rows".into()))?;
        Ok(Self {
            dt,
            increments,
            params,
        })
    }

    /// Little-endian binary container: magic, `dt`, `N`, the five parameters,
    /// then `N` increments.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&(self.increments.len() as u64).to_le_bytes())?;
        let p = &self.params;
        for v in [p.omega, p.epsilon, p.kappa, p.eta, p.phi] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.increments {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Format("bad magic in binary record".into()));
        }
        let mut buf = [0u8; 8];
        let mut next_f64 = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut buf)?;
            Ok(f64::from_le_bytes(buf))
        };
        let dt = next_f64(&mut r)?;
        let mut nbuf = [0u8; 8];
        r.read_exact(&mut nbuf)?;
        let n = u64::from_le_bytes(nbuf) as usize;
        let params = OscillatorParams {
            omega: next_f64(&mut r)?,
            epsilon: next_f64(&mut r)?,
            kappa: next_f64(&mut r)?,
            eta: next_f64(&mut r)?,
            phi: next_f64(&mut r)?,
        };
        let mut increments = Vec::with_capacity(n);
        for _ in 0..n {
            increments.push(next_f64(&mut r)?);
        }
        Ok(Self {
            dt,
            increments,
            params,
        })
    }
}

const BINARY_MAGIC: &[u8; 8] = b"KPOREC01";

/// Stored truth trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TruthTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<GaussianState>,
}

/// Knobs of the truth simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthOptions {
    /// Internal substeps per recorded increment.
    pub refinement: usize,
    /// Abort once any state entry exceeds this magnitude.
    pub guard: f64,
    /// Store every n-th state (0 keeps only the initial state).
    pub store_every: usize,
}

impl Default for TruthOptions {
    fn default() -> Self {
        Self {
            refinement: 1,
            guard: 1e8,
            store_every: 1,
        }
    }
}

/// Advances the conditional moments by one step and returns the photocurrent
/// increment produced over that step.
pub fn step_truth(
    state: &GaussianState,
    params: &OscillatorParams,
    dt: f64,
    dw: f64,
) -> (GaussianState, f64) {
    let v = measurement_vector(params.phi);
    let x_phi = v.dot(&state.r);
    let delta_y = (2.0 * params.kappa * params.eta).sqrt() * x_phi * dt + dw;
    let kick: Vector2<f64> = (state.sigma - nalgebra::Matrix2::identity()) * v;
    let r = state.r
        + drift_matrix(params) * state.r * dt
        + kick * ((0.5 * params.eta * params.kappa).sqrt() * dw);
    let sigma = covariance_rk4_step(&state.sigma, params, dt);
    (GaussianState { r, sigma }, delta_y)
}

/// Simulates the monitored oscillator and its photocurrent with default options.
pub fn simulate_truth(
    params: &OscillatorParams,
    init: &GaussianState,
    dt: f64,
    duration: f64,
    noise: &NoiseStream,
) -> Result<(TruthTrajectory, PhotocurrentRecord)> {
    simulate_truth_with(params, init, dt, duration, noise, &TruthOptions::default())
}

pub fn simulate_truth_with(
    params: &OscillatorParams,
    init: &GaussianState,
    dt: f64,
    duration: f64,
    noise: &NoiseStream,
    opts: &TruthOptions,
) -> Result<(TruthTrajectory, PhotocurrentRecord)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", "must be positive"));
    }
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(invalid("duration", "must be nonnegative"));
    }
    if opts.refinement == 0 {
        return Err(invalid("refinement", "must be at least 1"));
    }
    let n = (duration / dt).round() as usize;
    let sub_dt = dt / opts.refinement as f64;
    let mut wiener = noise.wiener(sub_dt);

    let mut traj = TruthTrajectory::default();
    traj.times.push(0.0);
    traj.states.push(*init);
    let mut increments = Vec::with_capacity(n);
    let mut state = *init;
    for step in 0..n {
        let mut delta_y = 0.0;
        for _ in 0..opts.refinement {
            let dw = wiener.next().unwrap_or_default();
            let (next, dy) = step_truth(&state, params, sub_dt, dw);
            state = next;
            delta_y += dy;
        }
        let worst = state
            .r
            .iter()
            .chain(state.sigma.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        if !worst.is_finite() || !delta_y.is_finite() {
            return Err(Error::SimulationFailure {
                step,
                reason: "non-finite state".into(),
            });
        }
        if worst > opts.guard {
            return Err(Error::SimulationFailure {
                step,
                reason: format!("state magnitude {worst:.3e} exceeds guard {:.1e}", opts.guard),
            });
        }
        increments.push(delta_y);
        if opts.store_every > 0 && (step + 1) % opts.store_every == 0 {
            traj.times.push((step + 1) as f64 * dt);
            traj.states.push(state);
        }
    }
    Ok((
        traj,
        PhotocurrentRecord {
            dt,
            increments,
            params: *params,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{riccati_rhs, steady_covariance_default};
    use nalgebra::Matrix2;

    fn params(omega: f64, epsilon: f64, eta: f64, phi: f64) -> OscillatorParams {
        OscillatorParams::new(omega, epsilon, eta, phi).unwrap()
    }

    #[test]
    fn vacuum_has_no_backaction() {
        let p = params(1.3, 0.4, 1.0, 0.7);
        let (next, dy) = step_truth(&GaussianState::vacuum(), &p, 0.02, 0.37);
        assert_eq!(next.r, Vector2::zeros());
        assert_eq!(dy, 0.37);
    }

    #[test]
    fn first_covariance_step_from_vacuum() {
        let p = params(1.0, 1.0, 1.0, 0.0);
        let (next, _) = step_truth(&GaussianState::vacuum(), &p, 0.01, 0.0);
        assert!((next.sigma_xp() + 0.02).abs() < 5e-4);
        assert!((next.sigma_x() - 1.0).abs() < 1e-3);
        assert!((next.sigma_p() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn blind_detection_follows_lyapunov_flow() {
        let p = params(1.0, 0.8, 0.0, 0.3);
        let state = GaussianState {
            r: Vector2::new(0.4, -0.2),
            sigma: Matrix2::new(1.5, 0.2, 0.2, 0.9),
        };
        let (next, _) = step_truth(&state, &p, 1e-4, 0.5);
        let expected = state.sigma + riccati_rhs(&state.sigma, &p) * 1e-4;
        assert!((next.sigma - expected).abs().max() < 1e-7);
        // no conditioning, so the mean ignores dw
        let drift_only = state.r + drift_matrix(&p) * state.r * 1e-4;
        assert_eq!(next.r, drift_only);
    }

    #[test]
    fn record_length_and_determinism() {
        let p = params(1.0, 1.0, 1.0, 0.1072);
        let noise = NoiseStream::new(42, 7);
        let (traj, rec) = simulate_truth(&p, &GaussianState::vacuum(), 0.02, 100.0, &noise).unwrap();
        assert_eq!(rec.len(), 5000);
        assert_eq!(traj.states.len(), 5001);
        assert!((rec.duration() - 100.0).abs() < 1e-9);
        let (_, again) = simulate_truth(&p, &GaussianState::vacuum(), 0.02, 100.0, &noise).unwrap();
        assert_eq!(rec, again);
        let (_, other) =
            simulate_truth(&p, &GaussianState::vacuum(), 0.02, 100.0, &NoiseStream::new(42, 8)).unwrap();
        assert_ne!(rec.increments, other.increments);
    }

    #[test]
    fn zero_duration_gives_empty_record() {
        let p = params(1.0, 1.0, 1.0, 0.0);
        let (_, rec) =
            simulate_truth(&p, &GaussianState::vacuum(), 0.02, 0.0, &NoiseStream::new(1, 1)).unwrap();
        assert!(rec.is_empty());
    }

    #[test]
    fn unstable_parameters_trip_the_guard() {
        let p = params(1.0, 2.0, 1.0, 0.3);
        let err = simulate_truth(&p, &GaussianState::vacuum(), 0.02, 400.0, &NoiseStream::new(1, 1))
            .unwrap_err();
        assert!(matches!(err, Error::SimulationFailure { .. }));
    }

    #[test]
    fn covariance_stays_positive_and_reaches_steady_state() {
        let p = params(1.0, 1.0, 1.0, 0.1072);
        let opts = TruthOptions::default();
        let (traj, _) =
            simulate_truth_with(&p, &GaussianState::vacuum(), 0.01, 1000.0, &NoiseStream::new(9, 0), &opts)
                .unwrap();
        assert!(traj
            .states
            .iter()
            .all(|s| s.sigma.symmetric_eigenvalues().min() > 0.0));
        let ss = steady_covariance_default(&p).unwrap();
        let half = traj.states.len() / 2;
        let tail = &traj.states[half..];
        let mean = tail.iter().fold(Matrix2::zeros(), |acc, s| acc + s.sigma) / tail.len() as f64;
        assert!((mean - ss).abs().max() < 1e-6);
    }

    #[test]
    fn blind_record_is_white_noise() {
        let p = params(1.0, 0.5, 0.0, 0.0);
        let dt = 0.02;
        let (_, rec) =
            simulate_truth(&p, &GaussianState::vacuum(), dt, 2000.0, &NoiseStream::new(3, 3)).unwrap();
        let n = rec.len() as f64;
        let scaled: Vec<f64> = rec.increments.iter().map(|d| d / dt.sqrt()).collect();
        let mean = scaled.iter().sum::<f64>() / n;
        let var = scaled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // Var of the sample variance for Gaussian data is 2/(n-1)
        assert!((var - 1.0).abs() < 3.0 * (2.0 / (n - 1.0)).sqrt());
        assert!(mean.abs() < 3.0 / n.sqrt());
    }

    #[test]
    fn refinement_keeps_record_step() {
        let p = params(1.0, 0.9, 1.0, 0.5);
        let opts = TruthOptions {
            refinement: 4,
            ..Default::default()
        };
        let (_, rec) =
            simulate_truth_with(&p, &GaussianState::vacuum(), 0.02, 10.0, &NoiseStream::new(1, 2), &opts)
                .unwrap();
        assert_eq!(rec.len(), 500);
        assert_eq!(rec.dt, 0.02);
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let p = params(1.0, 1.0, 1.0, 0.1072);
        let (_, rec) =
            simulate_truth(&p, &GaussianState::vacuum(), 0.02, 4.0, &NoiseStream::new(5, 0)).unwrap();
        let mut buf = Vec::new();
        rec.write_binary(&mut buf).unwrap();
        let back = PhotocurrentRecord::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back.dt.to_bits(), rec.dt.to_bits());
        assert!(back
            .increments
            .iter()
            .zip(&rec.increments)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.params, rec.params);

        let mut csv = b"# comment\n".to_vec();
        rec.write_csv(&mut csv).unwrap();
        let back = PhotocurrentRecord::read_csv(csv.as_slice(), p).unwrap();
        assert_eq!(back.increments, rec.increments);
        assert!(PhotocurrentRecord::read_binary(&b"garbage!"[..]).is_err());
    }
}
