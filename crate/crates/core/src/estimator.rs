//! Point estimates from ensembles of filter trajectories.
//!
//! A snapshot of the frequency estimates is binned into a histogram, a
//! skew-normal profile `A exp(−(ω−μ)²/2σ²) [1 + erf(α(ω−μ)/σ)]` is fitted to the
//! bin densities, and the mode of the fitted profile is the point estimate.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::ekf::EkfTrajectory;
use crate::error::{invalid, Error, Result};
use crate::optimize::golden_section_max;

pub const MIN_HISTOGRAM_SAMPLES: usize = 10;
/// Bin count used when a data-driven rule is unusable.
pub const FALLBACK_BINS: usize = 32;
/// Bound on the fitted shape. Past a few units the profile is already close to
/// its half-normal limit and `α` is no longer identifiable from a histogram.
pub const ALPHA_MAX: f64 = 5.0;
/// Empty bins appended on each side of the histogram during fitting.
const EDGE_PAD: usize = 2;
/// IQR over shortest-quarter length for a normal distribution.
const QUARTER_TO_IQR: f64 = 2.116_780_995_933_358;
/// Data-driven rules producing more bins than this fall back to uniform bins.
pub const MAX_BINS: usize = 10_000;
pub const FIT_MAX_ITER: usize = 500;
pub const FIT_STEP_TOL: f64 = 1e-8;
pub const MODE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSnapshot {
    pub t: f64,
    pub samples: Vec<f64>,
}

impl EnsembleSnapshot {
    pub fn new(t: f64, samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(invalid("samples", "must be finite"));
        }
        Ok(Self { t, samples })
    }

    pub fn n_traj(&self) -> usize {
        self.samples.len()
    }
}

/// Frequency estimates at the recorded time nearest `t`, one per trajectory.
pub fn snapshot(trajectories: &[EkfTrajectory], t: f64) -> Result<EnsembleSnapshot> {
    if trajectories.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut samples = Vec::with_capacity(trajectories.len());
    for tr in trajectories {
        let (first, last) = match (tr.times.first(), tr.times.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::EmptyEnsemble),
        };
        let slack = if tr.times.len() > 1 {
            0.5 * (last - first) / (tr.times.len() - 1) as f64
        } else {
            0.0
        };
        if t < first - slack || t > last + slack {
            return Err(invalid("t", format!("{t} outside the recorded span [{first}, {last}]")));
        }
        samples.push(tr.omega_at(t).ok_or(Error::EmptyEnsemble)?);
    }
    EnsembleSnapshot::new(t, samples)
}

/// Fraction of samples strictly above `omega_0`.
pub fn tail_fraction(snap: &EnsembleSnapshot, omega_0: f64) -> f64 {
    snap.samples.iter().filter(|&&x| x > omega_0).count() as f64 / snap.samples.len() as f64
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Length of the shortest interval holding a fraction `q` of the samples.
fn shortest_cover(sorted: &[f64], q: f64) -> f64 {
    let h = ((sorted.len() as f64 * q) as usize).clamp(1, sorted.len() - 1);
    sorted
        .iter()
        .zip(&sorted[h..])
        .map(|(a, b)| b - a)
        .fold(f64::INFINITY, f64::min)
}

/// Robust summary statistics used for binning and fit initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub iqr: f64,
    pub std: f64,
    pub skewness: f64,
    /// Length of the shortest interval containing half the samples.
    pub shorth: f64,
    /// Length of the shortest interval containing a quarter of the samples.
    pub shortest_quarter: f64,
}

impl SampleSummary {
    pub fn of(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let m2 = sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m3 = sorted.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
        Ok(Self {
            n: sorted.len(),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            median: quantile(&sorted, 0.5),
            iqr: quantile(&sorted, 0.75) - quantile(&sorted, 0.25),
            std: m2.sqrt(),
            skewness: if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 },
            shorth: shortest_cover(&sorted, 0.5),
            shortest_quarter: shortest_cover(&sorted, 0.25),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinningRule {
    #[default]
    FreedmanDiaconis,
    Scott,
    /// Freedman–Diaconis with the IQR replaced by the length of the shortest
    /// interval holding half the samples; identical for symmetric unimodal
    /// data, but follows a sharp peak instead of a long tail.
    Shorth,
    /// Freedman–Diaconis with the IQR replaced by the shortest interval holding
    /// a quarter of the samples, rescaled to agree with the IQR for normal
    /// data. Resolves a peak holding as little as a quarter of the ensemble.
    Modal,
    /// Fixed number of equal bins over the sample range.
    Uniform(usize),
    /// Fixed bin width anchored at the sample minimum.
    Width(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub density: Vec<f64>,
    pub degenerate: bool,
    pub summary: SampleSummary,
}

impl Histogram {
    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn bin_widths(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn n_samples(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "left,right,count,density")?;
        for (i, (c, d)) in self.counts.iter().zip(&self.density).enumerate() {
            writeln!(w, "{:.16e},{:.16e},{},{:.16e}", self.bin_edges[i], self.bin_edges[i + 1], c, d)?;
        }
        Ok(())
    }
}

fn bin_count(range: f64, width: f64) -> Option<usize> {
    if !(width > 0.0) || !width.is_finite() {
        return None;
    }
    let n = (range / width).ceil().max(1.0);
    (n <= MAX_BINS as f64).then_some(n as usize)
}

pub fn make_histogram(snap: &EnsembleSnapshot, rule: BinningRule) -> Result<Histogram> {
    let n = snap.samples.len();
    if n < MIN_HISTOGRAM_SAMPLES {
        return Err(invalid("samples", format!("need at least {MIN_HISTOGRAM_SAMPLES}, got {n}")));
    }
    let summary = SampleSummary::of(&snap.samples)?;
    let range = summary.max - summary.min;
    if range == 0.0 {
        return Ok(Histogram {
            bin_edges: vec![summary.min - 0.5, summary.min + 0.5],
            counts: vec![n],
            density: vec![1.0],
            degenerate: true,
            summary,
        });
    }
    let cube = (n as f64).cbrt();
    let fd = || bin_count(range, 2.0 * summary.iqr / cube);
    let scott = || bin_count(range, 3.49 * summary.std / cube);
    let bins = match rule {
        BinningRule::FreedmanDiaconis => fd().or_else(scott).unwrap_or(FALLBACK_BINS),
        BinningRule::Scott => scott().unwrap_or(FALLBACK_BINS),
        BinningRule::Shorth => bin_count(range, 2.0 * summary.shorth / cube)
            .or_else(scott)
            .unwrap_or(FALLBACK_BINS),
        BinningRule::Modal => bin_count(range, 2.0 * QUARTER_TO_IQR * summary.shortest_quarter / cube)
            .or_else(scott)
            .unwrap_or(FALLBACK_BINS),
        BinningRule::Uniform(k) if k > 0 => k,
        BinningRule::Uniform(_) => return Err(invalid("bins", "must be positive")),
        BinningRule::Width(h) => {
            bin_count(range, h).ok_or_else(|| invalid("bin width", format!("{h} is unusable for range {range}")))?
        }
    };
    let width = range / bins as f64;
    let mut bin_edges: Vec<f64> = (0..=bins).map(|i| summary.min + i as f64 * width).collect();
    bin_edges[bins] = summary.max;
    let mut counts = vec![0usize; bins];
    for &x in &snap.samples {
        let idx = (((x - summary.min) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let density = counts
        .iter()
        .zip(bin_edges.windows(2))
        .map(|(&c, w)| c as f64 / (n as f64 * (w[1] - w[0])))
        .collect();
    Ok(Histogram {
        bin_edges,
        counts,
        density,
        degenerate: false,
        summary,
    })
}

/// Parameters of the skew-normal peak profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewNormal {
    pub amplitude: f64,
    pub mu: f64,
    pub sigma: f64,
    pub alpha: f64,
}

impl SkewNormal {
    pub fn density(&self, x: f64) -> f64 {
        let u = (x - self.mu) / self.sigma;
        self.amplitude * (-0.5 * u * u).exp() * (1.0 + erf(self.alpha * u))
    }

    /// Sampling density of the normalized distribution (amplitude ignored).
    pub fn pdf(&self, x: f64) -> f64 {
        Self { amplitude: 1.0 / (2.0 * PI).sqrt() / self.sigma, ..*self }.density(x)
    }

    /// Maximizer of the profile, by golden section on `μ ± 5σ`.
    pub fn mode(&self) -> f64 {
        if self.alpha == 0.0 {
            return self.mu;
        }
        let shape = Self { amplitude: 1.0, ..*self };
        let f = |x: f64| Ok::<_, std::convert::Infallible>(shape.density(x));
        match golden_section_max(f, self.mu - 5.0 * self.sigma, self.mu + 5.0 * self.sigma, MODE_TOL) {
            Ok((x, _)) => x,
            Err(e) => match e {},
        }
    }

    /// Draws from the normalized skew-normal distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // erf(αu) is the standard skew-normal with shape α√2
        let a = self.alpha * std::f64::consts::SQRT_2;
        let d = a / (1.0 + a * a).sqrt();
        let u0: f64 = rng.sample(rand_distr::StandardNormal);
        let v: f64 = rng.sample(rand_distr::StandardNormal);
        let u1 = d * u0.abs() + (1.0 - d * d).sqrt() * v;
        self.mu + self.sigma * u1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewNormalFit {
    pub amplitude: f64,
    pub mu: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub mode: f64,
    pub converged: bool,
    /// Sum of squared density residuals.
    pub residual: f64,
    pub iterations: usize,
}

impl SkewNormalFit {
    pub fn params(&self) -> SkewNormal {
        SkewNormal {
            amplitude: self.amplitude,
            mu: self.mu,
            sigma: self.sigma,
            alpha: self.alpha,
        }
    }
}

pub fn mode_of_fit(fit: &SkewNormalFit) -> f64 {
    fit.params().mode()
}

// internal parametrization (A, μ, ln σ, atanh(α/ALPHA_MAX))
fn unpack(p: &Vector4<f64>) -> SkewNormal {
    SkewNormal {
        amplitude: p[0],
        mu: p[1],
        sigma: p[2].exp(),
        alpha: ALPHA_MAX * p[3].tanh(),
    }
}

fn residuals_and_jacobian(p: &Vector4<f64>, xs: &[f64], ys: &[f64]) -> (f64, Vector4<f64>, Matrix4<f64>) {
    let s = unpack(p);
    let chain = ALPHA_MAX * (1.0 - p[3].tanh().powi(2));
    let two_over_sqrt_pi = 2.0 / PI.sqrt();
    let mut cost = 0.0;
    let mut grad = Vector4::zeros();
    let mut jtj = Matrix4::zeros();
    for (&x, &y) in xs.iter().zip(ys) {
        let u = (x - s.mu) / s.sigma;
        let z = s.alpha * u;
        let g = (-0.5 * u * u).exp();
        let e = 1.0 + erf(z);
        let kink = two_over_sqrt_pi * (-z * z).exp();
        let f = s.amplitude * g * e;
        let df_du = s.amplitude * g * (-u * e + kink * s.alpha);
        let row = Vector4::new(g * e, -df_du / s.sigma, -u * df_du, s.amplitude * g * kink * u * chain);
        let r = f - y;
        cost += r * r;
        grad += row * r;
        jtj += row * row.transpose();
    }
    (cost, grad, jtj)
}

fn cost_of(p: &Vector4<f64>, xs: &[f64], ys: &[f64]) -> f64 {
    let s = unpack(p);
    xs.iter().zip(ys).map(|(&x, &y)| (s.density(x) - y).powi(2)).sum()
}

/// Starting point built from the tallest bin and its half-maximum width.
fn peak_guess(hist: &Histogram) -> SkewNormal {
    let d = &hist.density;
    let (top, peak) = d
        .iter()
        .enumerate()
        .fold((0, 0.0), |acc, (i, &y)| if y > acc.1 { (i, y) } else { acc });
    let (mut lo, mut hi) = (top, top);
    while lo > 0 && d[lo - 1] > 0.5 * peak {
        lo -= 1;
    }
    while hi + 1 < d.len() && d[hi + 1] > 0.5 * peak {
        hi += 1;
    }
    let fwhm = hist.bin_edges[hi + 1] - hist.bin_edges[lo];
    SkewNormal {
        amplitude: peak / 2.0,
        mu: 0.5 * (hist.bin_edges[top] + hist.bin_edges[top + 1]),
        sigma: fwhm / 2.355,
        alpha: 0.0,
    }
}

/// Least-squares fit of the skew-normal profile to the histogram densities
/// (Levenberg–Marquardt damped Gauss–Newton).
///
/// The default start uses the sample median, `IQR/1.349`, the sign of the
/// sample skewness and half the peak density. Heavy tails can trap that start
/// in a poor local minimum, so a second start centred on the tallest bin is
/// also run and the solution with the smaller residual is returned.
///
/// The shape is bounded, `|α| ≤ ALPHA_MAX`, and the histogram is padded with
/// empty bins on both sides during the fit.
pub fn fit_skew_normal(hist: &Histogram, init_hint: Option<SkewNormal>) -> Result<SkewNormalFit> {
    if hist.degenerate {
        return Err(Error::DegenerateHistogram);
    }
    let sm = &hist.summary;
    let primary = init_hint.unwrap_or_else(|| {
        let sigma = if sm.iqr > 0.0 { sm.iqr / 1.349 } else { sm.std };
        SkewNormal {
            amplitude: hist.density.iter().cloned().fold(0.0, f64::max) / 2.0,
            mu: sm.median,
            sigma,
            alpha: if sm.skewness < 0.0 { -1.0 } else { 1.0 },
        }
    });
    let first = fit_from(hist, primary);
    let second = fit_from(hist, peak_guess(hist));
    match (first, second) {
        (Ok(a), Ok(b)) => {
            log::debug!("fit starts: residual {:.4e} ({}) vs {:.4e} ({})", a.residual, a.converged, b.residual, b.converged);
            Ok(if a.residual <= b.residual { a } else { b })
        }
        (Ok(a), Err(_)) => Ok(a),
        (Err(_), Ok(b)) => Ok(b),
        (Err(e), Err(_)) => Err(e),
    }
}

/// Bin centres and densities, padded with empty bins on both sides so a peak
/// sitting on the edge of the support is not mistaken for a decaying tail.
fn fit_points(hist: &Histogram) -> (Vec<f64>, Vec<f64>) {
    let centers = hist.bin_centers();
    let widths = hist.bin_widths();
    let (first, last) = (centers[0], centers[centers.len() - 1]);
    let (w0, w1) = (widths[0], widths[widths.len() - 1]);
    let mut xs: Vec<f64> = (1..=EDGE_PAD).rev().map(|k| first - k as f64 * w0).collect();
    xs.extend(centers);
    xs.extend((1..=EDGE_PAD).map(|k| last + k as f64 * w1));
    let mut ys = vec![0.0; EDGE_PAD];
    ys.extend(&hist.density);
    ys.extend(std::iter::repeat_n(0.0, EDGE_PAD));
    (xs, ys)
}

fn fit_from(hist: &Histogram, init: SkewNormal) -> Result<SkewNormalFit> {
    let (xs, ys) = fit_points(hist);
    let ys = &ys;
    if !(init.sigma > 0.0) || !init.sigma.is_finite() {
        return Err(invalid("sigma", "initial scale must be positive"));
    }
    let a0 = (init.alpha / ALPHA_MAX).clamp(-0.99, 0.99).atanh();
    let mut p = Vector4::new(init.amplitude, init.mu, init.sigma.ln(), a0);
    let mut lambda = 1e-3;
    let (mut cost, mut grad, mut jtj) = residuals_and_jacobian(&p, &xs, ys);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < FIT_MAX_ITER {
        iterations += 1;
        let mut damped = jtj;
        for i in 0..4 {
            damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
        }
        let Some(step) = damped.cholesky().map(|c| c.solve(&-grad)) else {
            lambda *= 10.0;
            continue;
        };
        let trial = p + step;
        let trial_cost = cost_of(&trial, &xs, ys);
        let rel_step = step.norm() / (p.norm() + f64::EPSILON);
        if trial_cost.is_finite() && trial_cost <= cost {
            p = trial;
            (cost, grad, jtj) = residuals_and_jacobian(&p, &xs, ys);
            lambda = (lambda / 3.0).max(1e-12);
            if rel_step < FIT_STEP_TOL {
                converged = true;
                break;
            }
        } else {
            lambda *= 4.0;
            if lambda > 1e12 {
                // no descent left at working precision
                converged = rel_step < FIT_STEP_TOL || grad.norm() <= 1e-10 * (1.0 + cost);
                break;
            }
        }
    }
    let s = unpack(&p);
    if !s.amplitude.is_finite() || !s.mu.is_finite() || !s.sigma.is_finite() || !s.alpha.is_finite() {
        return Err(Error::SimulationFailure {
            step: iterations,
            reason: "skew-normal fit diverged".into(),
        });
    }
    let converged = converged && s.amplitude > 0.0;
    Ok(SkewNormalFit {
        amplitude: s.amplitude,
        mu: s.mu,
        sigma: s.sigma,
        alpha: s.alpha,
        mode: s.mode(),
        converged,
        residual: cost,
        iterations,
    })
}

/// Pointwise ensemble statistics of estimate curves on a shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorStatistics {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    /// Population standard deviation, so that `mse = std² + bias²`.
    pub std: Vec<f64>,
    pub mse: Vec<f64>,
}

impl EstimatorStatistics {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,mean,std,mse")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                self.times[i], self.mean[i], self.std[i], self.mse[i]
            )?;
        }
        Ok(())
    }
}

pub fn estimator_statistics(times: &[f64], runs: &[Vec<f64>], omega_true: f64) -> Result<EstimatorStatistics> {
    if runs.len() < 2 {
        return Err(invalid("runs", "need at least two runs"));
    }
    if runs.iter().any(|r| r.len() != times.len()) {
        return Err(invalid("runs", "all runs must share the time grid"));
    }
    let n = runs.len() as f64;
    let mut out = EstimatorStatistics {
        times: times.to_vec(),
        mean: Vec::with_capacity(times.len()),
        std: Vec::with_capacity(times.len()),
        mse: Vec::with_capacity(times.len()),
    };
    for k in 0..times.len() {
        let mean = runs.iter().map(|r| r[k]).sum::<f64>() / n;
        let var = runs.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n;
        let bias = mean - omega_true;
        out.mean.push(mean);
        out.std.push(var.sqrt());
        out.mse.push(var + bias * bias);
    }
    Ok(out)
}

/// Resamples `n_draw` values with replacement from `pool`, `n_resamples` times.
pub fn bootstrap_snapshots<R: Rng + ?Sized>(
    pool: &EnsembleSnapshot,
    n_draw: usize,
    n_resamples: usize,
    rng: &mut R,
) -> Result<Vec<EnsembleSnapshot>> {
    if n_draw == 0 {
        return Err(Error::EmptyEnsemble);
    }
    (0..n_resamples)
        .map(|_| {
            let samples = (0..n_draw)
                .map(|_| pool.samples[rng.random_range(0..pool.samples.len())])
                .collect();
            EnsembleSnapshot::new(pool.t, samples)
        })
        .collect()
}

/// Writes `t,mode,mu,sigma,alpha,residual` rows.
pub fn write_fits_csv<W: Write>(mut w: W, fits: &[(f64, SkewNormalFit)]) -> Result<()> {
    writeln!(w, "t,mode,mu,sigma,alpha,residual")?;
    for (t, f) in fits {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            t, f.mode, f.mu, f.sigma, f.alpha, f.residual
        )?;
    }
    Ok(())
}
