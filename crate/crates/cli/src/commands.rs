use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use kpo_sense::ekf::{run_ekf, EkfTrajectory, RestartCause};
use kpo_sense::estimator::{
    estimator_statistics, fit_skew_normal, make_histogram, snapshot, tail_fraction, write_fits_csv, EnsembleSnapshot,
    SkewNormalFit,
};
use kpo_sense::fisher::{kf_scan, optimal_phase_in, PhaseOptimum};
use kpo_sense::model::ModelContext;
use kpo_sense::protocol::{run_protocol, ProtocolOutcome};
use kpo_sense::sde::{simulate_truth_with, NoiseStream, TruthOptions, TruthTrajectory};
use kpo_sense::{GaussianState, OscillatorParams};

use crate::config::*;
use crate::output::OutDir;

fn write_truth<W: Write>(mut w: W, truth: &TruthTrajectory) -> Result<()> {
    writeln!(w, "t,x,p,sigma_x,sigma_p,sigma_xp")?;
    for (t, s) in truth.times.iter().zip(&truth.states) {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            t,
            s.x(),
            s.p(),
            s.sigma_x(),
            s.sigma_p(),
            s.sigma_xp()
        )?;
    }
    Ok(())
}

fn write_restarts<W: Write>(mut w: W, tr: &EkfTrajectory) -> Result<()> {
    writeln!(w, "step,t,cause")?;
    for ev in &tr.restarts {
        let cause = match ev.cause {
            RestartCause::Threshold => "threshold",
            RestartCause::FilterFailure => "filter-failure",
        };
        writeln!(w, "{},{:.16e},{}", ev.step, ev.t, cause)?;
    }
    Ok(())
}

fn validated(params: OscillatorParams) -> Result<OscillatorParams> {
    Ok(params.validated()?)
}

pub fn trajectory(cfg: &TrajectoryConfig, out: &OutDir) -> Result<()> {
    let params = validated(cfg.params)?;
    let prior = cfg.prior.validated()?;
    let ekf = cfg.filter.ekf_config(&prior, params.kappa, cfg.dt, 1);
    ekf.validate()?;
    let ctx = ModelContext::from(&params);
    let runs: Vec<_> = (0..cfg.n_traj as u64)
        .into_par_iter()
        .map(|j| -> Result<_> {
            let noise = NoiseStream::new(cfg.seed, j);
            let (truth, record) = simulate_truth_with(&params, &GaussianState::vacuum(), cfg.dt, cfg.duration, &noise, &cfg.truth)?;
            let filtered = run_ekf(&record, &ekf, &ctx)?;
            Ok((truth, record, filtered))
        })
        .collect::<Result<_>>()?;
    for (j, (truth, record, filtered)) in runs.iter().enumerate() {
        let mut w = out.csv(&format!("truth_{j:03}.csv"))?;
        write_truth(&mut w, truth)?;
        OutDir::finish(w)?;
        let mut w = out.csv(&format!("photocurrent_{j:03}.csv"))?;
        record.write_csv(&mut w)?;
        OutDir::finish(w)?;
        let mut w = out.csv(&format!("ekf_{j:03}.csv"))?;
        filtered.write_csv(&mut w)?;
        OutDir::finish(w)?;
        let mut w = out.csv(&format!("restarts_{j:03}.csv"))?;
        write_restarts(&mut w, filtered)?;
        OutDir::finish(w)?;
        log::info!("trajectory {j}: {} restarts", filtered.restarts.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct SnapshotSummary {
    t: f64,
    n_traj: usize,
    tail_fraction: Option<f64>,
    fit: Option<SkewNormalFit>,
    fit_error: Option<String>,
}

pub fn ensemble(cfg: &EnsembleConfig, out: &OutDir) -> Result<()> {
    let params = validated(cfg.params)?;
    let prior = cfg.prior.validated()?;
    if !(cfg.record_interval > 0.0) {
        return Err(ConfigError("record_interval must be positive".into()).into());
    }
    let record_every = ((cfg.record_interval / cfg.dt).round() as usize).max(1);
    let ekf = cfg.filter.ekf_config(&prior, params.kappa, cfg.dt, record_every);
    ekf.validate()?;
    let ctx = ModelContext::from(&params);
    let opts = TruthOptions {
        store_every: 0,
        ..TruthOptions::default()
    };
    let filtered: Vec<EkfTrajectory> = (0..cfg.n_traj as u64)
        .into_par_iter()
        .map(|j| -> Result<_> {
            let noise = NoiseStream::new(cfg.seed, j);
            let (_, record) = simulate_truth_with(&params, &GaussianState::vacuum(), cfg.dt, cfg.duration, &noise, &opts)?;
            Ok(run_ekf(&record, &ekf, &ctx)?)
        })
        .collect::<Result<_>>()?;
    let times = if cfg.times.is_empty() { vec![cfg.duration] } else { cfg.times.clone() };
    let snaps = times.iter().map(|&t| snapshot(&filtered, t)).collect::<Result<Vec<_>, _>>()?;

    let mut w = out.csv("ensemble.csv")?;
    writeln!(w, "trajectory,t,omega_est")?;
    for snap in &snaps {
        for (j, x) in snap.samples.iter().enumerate() {
            writeln!(w, "{},{:.16e},{:.16e}", j, snap.t, x)?;
        }
    }
    OutDir::finish(w)?;

    let mut fits = Vec::new();
    let mut summaries = Vec::new();
    for (k, snap) in snaps.iter().enumerate() {
        let mut summary = SnapshotSummary {
            t: snap.t,
            n_traj: snap.n_traj(),
            tail_fraction: cfg.tail_omega0.map(|w0| tail_fraction(snap, w0)),
            fit: None,
            fit_error: None,
        };
        match make_histogram(snap, cfg.binning) {
            Ok(hist) => {
                let mut w = out.csv(&format!("histogram_{k:03}.csv"))?;
                hist.write_csv(&mut w)?;
                OutDir::finish(w)?;
                match fit_skew_normal(&hist, None) {
                    Ok(fit) => {
                        fits.push((snap.t, fit));
                        summary.fit = Some(fit);
                    }
                    Err(e) => summary.fit_error = Some(e.to_string()),
                }
            }
            Err(e) => summary.fit_error = Some(e.to_string()),
        }
        summaries.push(summary);
    }
    let mut w = out.csv("fits.csv")?;
    write_fits_csv(&mut w, &fits)?;
    OutDir::finish(w)?;
    let restarts: usize = filtered.iter().map(|tr| tr.restarts.len()).sum();
    out.json("summary.json", "snapshots", &summaries)?;
    log::info!("{} trajectories, {restarts} restarts", filtered.len());
    Ok(())
}

pub fn kf_scan_cmd(cfg: &KfScanConfig, out: &OutDir) -> Result<PhaseOptimum> {
    let params = validated(OscillatorParams {
        omega: cfg.omega,
        epsilon: cfg.epsilon,
        kappa: cfg.kappa,
        eta: cfg.eta,
        phi: 0.0,
    })?;
    let scan = kf_scan(&params, cfg.points)?;
    let mut w = out.csv("kf_scan.csv")?;
    scan.write_csv(&mut w)?;
    OutDir::finish(w)?;
    let opt = optimal_phase_in(cfg.omega, cfg.epsilon, cfg.eta, cfg.kappa, 0.0)?;
    out.json("phi_opt.json", "optimum", &opt)?;
    Ok(opt)
}

pub fn phi_opt(cfg: &PhiOptConfig, out: &OutDir) -> Result<Vec<PhaseOptimum>> {
    let mut w = out.csv("phi_opt.csv")?;
    writeln!(w, "omega,epsilon,eta,phi_opt,k_F,flat")?;
    let mut all = Vec::with_capacity(cfg.points.len());
    for p in &cfg.points {
        let opt = optimal_phase_in(p.omega, p.epsilon, p.eta, cfg.kappa, cfg.window_start)?;
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            p.omega, p.epsilon, p.eta, opt.phi, opt.k_f, opt.flat
        )?;
        all.push(opt);
    }
    OutDir::finish(w)?;
    Ok(all)
}

/// Runs the protocol `repeats` times. Returns `false` when some run halted early.
pub fn protocol(cfg: &ProtocolRunConfig, out: &OutDir) -> Result<bool> {
    cfg.protocol.validate()?;
    if cfg.repeats == 0 {
        out.json("config.json", "config", cfg)?;
        return Ok(true);
    }
    let mut outcomes: Vec<ProtocolOutcome> = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let mut pc = cfg.protocol.clone();
        pc.base_seed = pc.base_seed.wrapping_add(r as u64);
        let outcome = run_protocol(&pc, cfg.omega_true)?;
        for it in &outcome.iterations {
            let mut w = out.csv(&format!("run{r:03}_iter{:02}_ensemble.csv", it.index))?;
            it.write_ensemble_csv(&mut w)?;
            OutDir::finish(w)?;
            let mut w = out.csv(&format!("run{r:03}_iter{:02}_mean.csv", it.index))?;
            writeln!(w, "t,mean_omega_est")?;
            for (t, m) in &it.mean_curve {
                writeln!(w, "{:.16e},{:.16e}", t, m)?;
            }
            OutDir::finish(w)?;
            log::info!(
                "run {r} round {}: eps={:.4} phi={:.4} estimate={:?}",
                it.index,
                it.epsilon,
                it.phi,
                it.omega_est
            );
        }
        outcomes.push(outcome);
    }
    out.json("protocol.json", "runs", &outcomes)?;

    // estimate statistics per round, indexed by cumulative sensing time
    let rounds = outcomes.iter().map(|o| o.iterations.len()).min().unwrap_or(0);
    if outcomes.len() >= 2 && rounds > 0 {
        let t_star = cfg.protocol.t_star;
        let times: Vec<f64> = (0..rounds).map(|i| i as f64 * t_star + cfg.protocol.t_large()).collect();
        let runs: Vec<Vec<f64>> = outcomes
            .iter()
            .filter(|o| o.iterations[..rounds].iter().all(|it| !it.unstable_regime))
            .map(|o| o.iterations[..rounds].iter().map(|it| it.omega_est.unwrap_or(f64::NAN)).collect())
            .filter(|r: &Vec<f64>| r.iter().all(|x| x.is_finite()))
            .collect();
        if runs.len() >= 2 {
            let st = estimator_statistics(&times, &runs, cfg.omega_true)?;
            let mut w = out.csv("estimate_stats.csv")?;
            st.write_csv(&mut w)?;
            OutDir::finish(w)?;
        }
    }
    let complete = outcomes.iter().all(|o| o.completed);
    if !complete {
        let mut w = out.csv("FAILED")?;
        for (r, o) in outcomes.iter().enumerate() {
            if let Some(it) = o.iterations.last().filter(|_| !o.completed) {
                writeln!(w, "run {r} halted at round {}: {}", it.index, it.failure.as_deref().unwrap_or("unknown"))?;
            }
        }
        OutDir::finish(w)?;
    }
    Ok(complete)
}

/// Reads a headed CSV, skipping `#` comment lines.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields = line.split(',').map(str::trim);
        match &header {
            None => header = Some(fields.map(String::from).collect()),
            Some(h) => {
                let row = fields
                    .map(|f| f.parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| ConfigError(format!("{}:{}: {e}", path.display(), n + 1)))?;
                if row.len() != h.len() {
                    bail!(ConfigError(format!("{}:{}: expected {} fields", path.display(), n + 1, h.len())));
                }
                rows.push(row);
            }
        }
    }
    let header = header.ok_or_else(|| ConfigError(format!("{}: missing header", path.display())))?;
    Ok((header, rows))
}

pub fn stats(cfg: &StatsConfig, config_path: &Path, out: &OutDir) -> Result<()> {
    let (header, rows) = read_table(&resolve(config_path, &cfg.input))?;
    if header.first().map(String::as_str) != Some("t") {
        bail!(ConfigError("stats input must start with a `t` column".into()));
    }
    let times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let runs: Vec<Vec<f64>> = (1..header.len()).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
    let st = estimator_statistics(&times, &runs, cfg.omega_true)?;
    let mut w = out.csv("stats.csv")?;
    st.write_csv(&mut w)?;
    OutDir::finish(w)
}

#[derive(Serialize)]
struct FitSummary {
    n: usize,
    tail_fraction: Option<f64>,
    fit: SkewNormalFit,
}

pub fn fit(cfg: &FitConfig, config_path: &Path, out: &OutDir) -> Result<SkewNormalFit> {
    let (header, rows) = read_table(&resolve(config_path, &cfg.input))?;
    let col = header
        .iter()
        .position(|h| *h == cfg.column)
        .ok_or_else(|| ConfigError(format!("column `{}` not found", cfg.column)))?;
    let snap = EnsembleSnapshot::new(cfg.t, rows.iter().map(|r| r[col]).collect())?;
    let hist = make_histogram(&snap, cfg.binning)?;
    let mut w = out.csv("histogram.csv")?;
    hist.write_csv(&mut w)?;
    OutDir::finish(w)?;
    let fit = fit_skew_normal(&hist, cfg.init_hint)?;
    let mut w = out.csv("fit.csv")?;
    write_fits_csv(&mut w, &[(cfg.t, fit)])?;
    OutDir::finish(w)?;
    out.json(
        "fit.json",
        "fit",
        &FitSummary {
            n: snap.n_traj(),
            tail_fraction: cfg.tail_omega0.map(|w0| tail_fraction(&snap, w0)),
            fit,
        },
    )?;
    Ok(fit)
}
