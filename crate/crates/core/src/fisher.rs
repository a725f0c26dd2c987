//! Classical Fisher information about the frequency and the optimal homodyne phase.
//!
//! The information rate is `k_F = 2ηκ lim E[(∂_ω r)ᵀ B (∂_ω r)]`. Once the
//! covariance has reached its deterministic steady state, `(r, ∂_ω r)` obey a
//! joint linear SDE driven by the single measurement noise:
//!
//! ```text
//! dr     = A r dt                 + c (σ − I) v dw
//! d∂_ω r = (J r + Ā ∂_ω r) dt     + c (∂_ω σ) v dw
//! ```
//!
//! with `c = sqrt(ηκ/2)`, `J = ∂_ω A` and the closed-loop matrix
//! `Ā = A − ηκ (σ − I) B`. The `−ηκ(σ − I)B` part comes from differentiating the
//! filter gain term with the photocurrent held fixed. The rate then follows
//! from a stationary Lyapunov solve; a Monte Carlo integration of the same
//! SDE validates it.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    canonical_phase, drift_matrix, measurement_matrix, measurement_vector, riccati_rhs, stability_margin,
    steady_covariance, OscillatorParams, RELAXATION_TOL,
};
use crate::error::{invalid, Error, Result};
use crate::optimize::golden_section_max;
use crate::sde::NoiseStream;

/// Relaxation horizon used for stationary covariances in this module.
/// Generous because relaxation slows down near the phase boundary.
pub const STEADY_T_MAX: f64 = 20_000.0;

/// Coarse grid size of the phase scan.
pub const PHASE_GRID: usize = 256;
/// Golden-section stopping width for the optimal phase.
pub const PHASE_TOL: f64 = 1e-4;
/// Landscapes varying less than this are reported as flat.
pub const FLATNESS: f64 = 1e-12;

/// `∂_ω A`.
pub fn frequency_generator() -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0, -1.0, 0.0)
}

/// Closed-loop drift `A − ηκ(σ − I)B` of the conditional mean.
pub fn closed_loop_drift(params: &OscillatorParams, sigma: &Matrix2<f64>) -> Matrix2<f64> {
    drift_matrix(params)
        - (sigma - Matrix2::identity()) * measurement_matrix(params.phi) * (params.eta * params.kappa)
}

/// Solves `A X + X Aᵀ + Q = 0` by vectorization.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(invalid("lyapunov", "dimension mismatch"));
    }
    let id = DMatrix::<f64>::identity(n, n);
    // column-major vec: vec(AX) = (I ⊗ A) vec X, vec(XAᵀ) = (A ⊗ I) vec X
    let op = id.kronecker(a) + a.kronecker(&id);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular("Lyapunov operator"))?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

fn lyapunov2(a: &Matrix2<f64>, q: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let x = solve_lyapunov(
        &DMatrix::from_column_slice(2, 2, a.as_slice()),
        &DMatrix::from_column_slice(2, 2, q.as_slice()),
    )?;
    Ok(Matrix2::from_column_slice(x.as_slice()))
}

fn stable_steady(params: &OscillatorParams) -> Result<Matrix2<f64>> {
    let margin = stability_margin(params);
    if margin >= 0.0 {
        return Err(Error::Unstable { margin });
    }
    steady_covariance(params, RELAXATION_TOL, STEADY_T_MAX)
}

/// Stationary sensitivity `∂_ω σ_ss` of the conditional covariance.
///
/// `tol` is the relaxation tolerance of the underlying `σ_ss`; the sensitivity
/// itself solves the (linear) stationary equation
/// `Ā ∂σ + ∂σ Āᵀ + J σ_ss + σ_ss Jᵀ = 0` directly.
pub fn sensitivity_steady(params: &OscillatorParams, tol: f64) -> Result<Matrix2<f64>> {
    let margin = stability_margin(params);
    if margin >= 0.0 {
        return Err(Error::Unstable { margin });
    }
    let sigma = steady_covariance(params, tol, STEADY_T_MAX)?;
    sensitivity_from(params, &sigma)
}

fn sensitivity_from(params: &OscillatorParams, sigma: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let j = frequency_generator();
    let a_bar = closed_loop_drift(params, sigma);
    lyapunov2(&a_bar, &(j * sigma + sigma * j.transpose()))
}

/// Stationary covariance of the conditional mean `r` across measurement records.
pub fn stationary_mean_covariance(params: &OscillatorParams) -> Result<Matrix2<f64>> {
    let sigma = stable_steady(params)?;
    let kick = (sigma - Matrix2::identity()) * measurement_vector(params.phi);
    let q = kick * kick.transpose() * (0.5 * params.eta * params.kappa);
    lyapunov2(&drift_matrix(params), &q)
}

/// Long-time growth rate `k_F` of the Fisher information (Lyapunov route).
pub fn growth_rate_kf(params: &OscillatorParams) -> Result<f64> {
    let sigma = stable_steady(params)?;
    if params.eta == 0.0 {
        return Ok(0.0);
    }
    let dsigma = sensitivity_from(params, &sigma)?;
    let a = drift_matrix(params);
    let a_bar = closed_loop_drift(params, &sigma);
    let v = measurement_vector(params.phi);
    let c = (0.5 * params.eta * params.kappa).sqrt();

    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(&a);
    m.fixed_view_mut::<2, 2>(2, 0).copy_from(&frequency_generator());
    m.fixed_view_mut::<2, 2>(2, 2).copy_from(&a_bar);
    let top: Vector2<f64> = (sigma - Matrix2::identity()) * v * c;
    let bottom: Vector2<f64> = dsigma * v * c;
    let n = Vector4::new(top[0], top[1], bottom[0], bottom[1]);
    let cov = solve_lyapunov(
        &DMatrix::from_column_slice(4, 4, m.as_slice()),
        &DMatrix::from_column_slice(4, 4, (n * n.transpose()).as_slice()),
    )?;
    let block = Matrix2::new(cov[(2, 2)], cov[(2, 3)], cov[(3, 2)], cov[(3, 3)]);
    Ok(2.0 * params.eta * params.kappa * v.dot(&(block * v)))
}

/// Integration settings of the Monte Carlo route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloOptions {
    pub dt: f64,
    /// Fraction of the run, counted from the end, that is time-averaged.
    pub tail_fraction: f64,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self {
            dt: 0.005,
            tail_fraction: 0.5,
        }
    }
}

/// Per-step deterministic coefficients shared by every trajectory.
struct SensitivityFlow {
    a: Matrix2<f64>,
    a_bar: Vec<Matrix2<f64>>,
    mean_kick: Vec<Vector2<f64>>,
    sens_kick: Vec<Vector2<f64>>,
}

fn sensitivity_flow(params: &OscillatorParams, dt: f64, steps: usize) -> SensitivityFlow {
    let j = frequency_generator();
    let v = measurement_vector(params.phi);
    let c = (0.5 * params.eta * params.kappa).sqrt();
    let sens_rhs = |sigma: &Matrix2<f64>, ds: &Matrix2<f64>| {
        let a_bar = closed_loop_drift(params, sigma);
        j * sigma + sigma * j.transpose() + a_bar * ds + ds * a_bar.transpose()
    };
    let mut sigma = Matrix2::identity();
    let mut ds = Matrix2::zeros();
    let mut flow = SensitivityFlow {
        a: drift_matrix(params),
        a_bar: Vec::with_capacity(steps),
        mean_kick: Vec::with_capacity(steps),
        sens_kick: Vec::with_capacity(steps),
    };
    for _ in 0..steps {
        flow.a_bar.push(closed_loop_drift(params, &sigma));
        flow.mean_kick.push((sigma - Matrix2::identity()) * v * c);
        flow.sens_kick.push(ds * v * c);
        // joint RK4 step of (σ, ∂σ)
        let k1 = (riccati_rhs(&sigma, params), sens_rhs(&sigma, &ds));
        let s2 = (sigma + k1.0 * (0.5 * dt), ds + k1.1 * (0.5 * dt));
        let k2 = (riccati_rhs(&s2.0, params), sens_rhs(&s2.0, &s2.1));
        let s3 = (sigma + k2.0 * (0.5 * dt), ds + k2.1 * (0.5 * dt));
        let k3 = (riccati_rhs(&s3.0, params), sens_rhs(&s3.0, &s3.1));
        let s4 = (sigma + k3.0 * dt, ds + k3.1 * dt);
        let k4 = (riccati_rhs(&s4.0, params), sens_rhs(&s4.0, &s4.1));
        sigma += (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * (dt / 6.0);
        ds += (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * (dt / 6.0);
        sigma = (sigma + sigma.transpose()) * 0.5;
        ds = (ds + ds.transpose()) * 0.5;
    }
    flow
}

/// Integrates one trajectory of `(r, ∂_ω r)` from zero and calls `visit(step, (vᵀ∂_ω r)²)`
/// with the integrand at the start of every step.
fn sensitivity_path(
    flow: &SensitivityFlow,
    params: &OscillatorParams,
    dt: f64,
    noise: NoiseStream,
    mut visit: impl FnMut(usize, f64),
) {
    let j = frequency_generator();
    let v = measurement_vector(params.phi);
    let mut r = Vector2::zeros();
    let mut s = Vector2::zeros();
    for (step, dw) in noise.wiener(dt).take(flow.a_bar.len()).enumerate() {
        let proj = v.dot(&s);
        visit(step, proj * proj);
        let r_next = r + flow.a * r * dt + flow.mean_kick[step] * dw;
        s += (j * r + flow.a_bar[step] * s) * dt + flow.sens_kick[step] * dw;
        r = r_next;
    }
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo estimate of `k_F` and its standard error.
///
/// Trajectory `j` draws its noise from `NoiseStream::batched(noise.base_seed, noise.stream_index, j)`.
pub fn growth_rate_kf_mc(
    params: &OscillatorParams,
    n_traj: usize,
    duration: f64,
    noise: &NoiseStream,
    opts: &MonteCarloOptions,
) -> Result<(f64, f64)> {
    let margin = stability_margin(params);
    if margin >= 0.0 {
        return Err(Error::Unstable { margin });
    }
    if n_traj == 0 {
        return Err(invalid("n_traj", "must be positive"));
    }
    if params.eta == 0.0 {
        return Ok((0.0, 0.0));
    }
    let steps = (duration / opts.dt).round() as usize;
    let start = ((1.0 - opts.tail_fraction) * steps as f64).floor() as usize;
    if start >= steps {
        return Err(invalid("duration", "too short for the averaging window"));
    }
    let flow = sensitivity_flow(params, opts.dt, steps);
    let scale = 2.0 * params.eta * params.kappa / (steps - start) as f64;
    let per_traj: Vec<f64> = (0..n_traj as u64)
        .into_par_iter()
        .map(|j| {
            let mut acc = 0.0;
            let stream = NoiseStream::batched(noise.base_seed, noise.stream_index, j);
            sensitivity_path(&flow, params, opts.dt, stream, |step, val| {
                if step >= start {
                    acc += val;
                }
            });
            acc * scale
        })
        .collect();
    Ok(mean_and_stderr(&per_traj))
}

/// Ensemble estimate of the cumulative Fisher information `F(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CfiCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub std_err: Vec<f64>,
    /// Slope of `F` between the middle and the end of the grid, with its standard error.
    pub late_slope: (f64, f64),
}

pub fn cfi_time(
    params: &OscillatorParams,
    t_grid: &[f64],
    n_traj: usize,
    noise: &NoiseStream,
    opts: &MonteCarloOptions,
) -> Result<CfiCurve> {
    let margin = stability_margin(params);
    if margin >= 0.0 {
        return Err(Error::Unstable { margin });
    }
    if n_traj == 0 || t_grid.is_empty() {
        return Err(invalid("cfi_time", "needs trajectories and a time grid"));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) || t_grid[0] < 0.0 {
        return Err(invalid("t_grid", "must be nonnegative and nondecreasing"));
    }
    let grid_steps: Vec<usize> = t_grid.iter().map(|t| (t / opts.dt).round() as usize).collect();
    let steps = *grid_steps.last().unwrap_or(&0);
    let flow = sensitivity_flow(params, opts.dt, steps);
    let scale = 2.0 * params.eta * params.kappa * opts.dt;
    let per_traj: Vec<Vec<f64>> = (0..n_traj as u64)
        .into_par_iter()
        .map(|j| {
            // cumulative[k] = F after k steps
            let mut cumulative = vec![0.0; steps + 1];
            let mut acc = 0.0;
            let stream = NoiseStream::batched(noise.base_seed, noise.stream_index, j);
            sensitivity_path(&flow, params, opts.dt, stream, |step, val| {
                acc += val * scale;
                cumulative[step + 1] = acc;
            });
            grid_steps.iter().map(|&k| cumulative[k]).collect()
        })
        .collect();
    let mut values = Vec::with_capacity(t_grid.len());
    let mut std_err = Vec::with_capacity(t_grid.len());
    for k in 0..t_grid.len() {
        let column: Vec<f64> = per_traj.iter().map(|row| row[k]).collect();
        let (m, se) = mean_and_stderr(&column);
        values.push(m);
        std_err.push(if n_traj > 1 { se } else { 0.0 });
    }
    let (lo, hi) = (t_grid.len() / 2, t_grid.len() - 1);
    let late_slope = if hi > lo && t_grid[hi] > t_grid[lo] {
        let span = t_grid[hi] - t_grid[lo];
        let slopes: Vec<f64> = per_traj.iter().map(|row| (row[hi] - row[lo]) / span).collect();
        mean_and_stderr(&slopes)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(CfiCurve {
        times: t_grid.to_vec(),
        values,
        std_err,
        late_slope,
    })
}

/// Result of the phase optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseOptimum {
    pub phi: f64,
    pub k_f: f64,
    /// The landscape was flat; `phi` is reported as 0.
    pub flat: bool,
}

/// `argmax_φ k_F(φ, ω, ε, η)` on `[0, π)`.
pub fn optimal_phase(omega: f64, epsilon: f64, eta: f64, kappa: f64) -> Result<PhaseOptimum> {
    optimal_phase_in(omega, epsilon, eta, kappa, 0.0)
}

/// Same as [`optimal_phase`] with the scan window `[start, start + π)`.
pub fn optimal_phase_in(omega: f64, epsilon: f64, eta: f64, kappa: f64, start: f64) -> Result<PhaseOptimum> {
    let base = OscillatorParams {
        omega,
        epsilon,
        kappa,
        eta,
        phi: 0.0,
    };
    let margin = stability_margin(&base);
    if margin >= 0.0 {
        return Err(Error::Unstable { margin });
    }
    let rate = |phi: f64| growth_rate_kf(&base.with_phi(phi));
    let h = std::f64::consts::PI / PHASE_GRID as f64;
    let mut best = (start, f64::NEG_INFINITY);
    let mut worst = f64::INFINITY;
    for i in 0..PHASE_GRID {
        let phi = start + i as f64 * h;
        let k = rate(phi)?;
        worst = worst.min(k);
        if k > best.1 {
            best = (phi, k);
        }
    }
    if best.1 - worst < FLATNESS {
        return Ok(PhaseOptimum {
            phi: 0.0,
            k_f: best.1,
            flat: true,
        });
    }
    let (phi, k_f) = golden_section_max(rate, best.0 - h, best.0 + h, PHASE_TOL)?;
    Ok(PhaseOptimum {
        phi: canonical_phase(phi),
        k_f,
        flat: false,
    })
}

/// `k_F` sampled on a uniform phase grid over `[0, π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KfScan {
    pub phases: Vec<f64>,
    pub rates: Vec<f64>,
    pub argmax_phase: f64,
}

impl KfScan {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "phi,k_F")?;
        for (p, k) in self.phases.iter().zip(&self.rates) {
            writeln!(w, "{:.16e},{:.16e}", p, k)?;
        }
        Ok(())
    }

    /// Indices of strict interior local maxima, treating the grid as periodic.
    pub fn local_maxima(&self) -> Vec<usize> {
        let n = self.rates.len();
        (0..n)
            .filter(|&i| {
                let prev = self.rates[(i + n - 1) % n];
                let next = self.rates[(i + 1) % n];
                self.rates[i] > prev && self.rates[i] > next
            })
            .collect()
    }
}

pub fn kf_scan(params: &OscillatorParams, points: usize) -> Result<KfScan> {
    if points == 0 {
        return Err(invalid("points", "must be positive"));
    }
    let h = std::f64::consts::PI / points as f64;
    let phases: Vec<f64> = (0..points).map(|i| i as f64 * h).collect();
    let rates = phases
        .iter()
        .map(|&phi| growth_rate_kf(&params.with_phi(phi)))
        .collect::<Result<Vec<_>>>()?;
    let argmax_phase = phases
        .iter()
        .zip(&rates)
        .fold((0.0, f64::NEG_INFINITY), |acc, (&p, &k)| if k > acc.1 { (p, k) } else { acc })
        .0;
    Ok(KfScan {
        phases,
        rates,
        argmax_phase,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::steady_covariance_default;

    fn params(omega: f64, epsilon: f64, eta: f64, phi: f64) -> OscillatorParams {
        OscillatorParams::new(omega, epsilon, eta, phi).unwrap()
    }

    #[test]
    fn lyapunov_solver_residual() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 0.4, 0.0, -0.3, -0.7, 0.2, 0.1, 0.0, -2.0]);
        let q = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 2.0, 0.1, 0.0, 0.1, 0.5]);
        let x = solve_lyapunov(&a, &q).unwrap();
        let res = &a * &x + &x * a.transpose() + &q;
        assert!(res.abs().max() < 1e-12);
    }

    #[test]
    fn sensitivity_matches_finite_difference() {
        let h = 1e-5;
        for &(w, e, eta, phi) in &[(1.0, 1.0, 1.0, 0.1072), (1.5, 0.76, 0.2, 2.996), (0.9, 0.6, 0.5, 1.0)] {
            let p = params(w, e, eta, phi);
            let ds = sensitivity_steady(&p, 1e-13).unwrap();
            let plus = steady_covariance(&p.with_omega(w + h), 1e-13, STEADY_T_MAX).unwrap();
            let minus = steady_covariance(&p.with_omega(w - h), 1e-13, STEADY_T_MAX).unwrap();
            let fd = (plus - minus) / (2.0 * h);
            let scale = ds.abs().max().max(1.0);
            assert!((ds - fd).abs().max() < 1e-6 * scale, "{ds} vs {fd}");
            assert_eq!(ds, ds.transpose());
        }
    }

    #[test]
    fn undriven_blind_sensitivity_vanishes() {
        let ds = sensitivity_steady(&params(1.2, 0.0, 0.0, 0.3), 1e-12).unwrap();
        assert!(ds.abs().max() < 1e-14);
    }

    #[test]
    fn blind_detection_has_no_information() {
        assert_eq!(growth_rate_kf(&params(1.0, 1.0, 0.0, 0.3)).unwrap(), 0.0);
        let (k, se) =
            growth_rate_kf_mc(&params(1.0, 1.0, 0.0, 0.3), 10, 10.0, &NoiseStream::new(1, 0), &Default::default())
                .unwrap();
        assert_eq!((k, se), (0.0, 0.0));
    }

    #[test]
    fn rate_is_pi_periodic_and_nonnegative() {
        for i in 0..20 {
            let phi = 0.37 * i as f64 - 3.0;
            let p = params(1.0, 1.0, 1.0, 0.0);
            let a = growth_rate_kf(&OscillatorParams { phi, ..p }).unwrap();
            let b = growth_rate_kf(&OscillatorParams { phi: phi + std::f64::consts::PI, ..p }).unwrap();
            assert!(a >= 0.0);
            assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn optimal_phase_contrast() {
        let good = growth_rate_kf(&params(1.0, 1.0, 1.0, 0.1072)).unwrap();
        let bad = growth_rate_kf(&params(1.0, 1.0, 1.0, 1.0)).unwrap();
        assert!(good / bad > 10.0, "{good} / {bad}");
    }

    #[test]
    fn optimal_phase_window_invariance() {
        let a = optimal_phase(1.0, 1.0, 1.0, 1.0).unwrap();
        let b = optimal_phase_in(1.0, 1.0, 1.0, 1.0, std::f64::consts::PI).unwrap();
        let c = optimal_phase_in(1.0, 1.0, 1.0, 1.0, -1.0).unwrap();
        assert!((a.phi - 0.1072).abs() < 0.01, "{}", a.phi);
        assert!((a.phi - b.phi).abs() < 2e-4);
        assert!((a.phi - c.phi).abs() < 2e-4);
    }

    #[test]
    fn flat_landscape_is_flagged() {
        let opt = optimal_phase(1.0, 0.5, 0.0, 1.0).unwrap();
        assert!(opt.flat);
        assert_eq!(opt.phi, 0.0);
    }

    #[test]
    fn unstable_parameters_are_rejected() {
        assert!(matches!(growth_rate_kf(&params(1.0, 1.3, 1.0, 0.1)), Err(Error::Unstable { .. })));
        assert!(optimal_phase(1.0, 1.3, 1.0, 1.0).is_err());
    }

    #[test]
    fn double_peak_shape() {
        let scan = kf_scan(&params(1.0, 1.0, 1.0, 0.0), 512).unwrap();
        let maxima = scan.local_maxima();
        assert!(maxima.len() >= 2, "maxima at {:?}", maxima);
        assert!((scan.argmax_phase - 0.1072).abs() < 0.01);
    }

    #[test]
    fn stationary_mean_covariance_solves_lyapunov() {
        let p = params(1.0, 0.9, 1.0, 0.5);
        let c = stationary_mean_covariance(&p).unwrap();
        let sigma = steady_covariance_default(&p).unwrap();
        let kick = (sigma - Matrix2::identity()) * measurement_vector(p.phi);
        let a = drift_matrix(&p);
        let res = a * c + c * a.transpose() + kick * kick.transpose() * 0.5;
        assert!(res.abs().max() < 1e-12);
    }

    #[test]
    fn cfi_curve_basic_shape() {
        let p = params(1.0, 1.0, 1.0, 0.1072);
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 2.0).collect();
        let curve = cfi_time(&p, &grid, 50, &NoiseStream::new(2, 0), &Default::default()).unwrap();
        assert_eq!(curve.values[0], 0.0);
        assert!(curve.values.windows(2).all(|w| w[1] >= w[0]));
    }
}
