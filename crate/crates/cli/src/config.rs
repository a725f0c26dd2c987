//! JSON configuration documents, one per subcommand.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use kpo_sense::ekf::{EkfConfig, RestartPolicy};
use kpo_sense::estimator::{BinningRule, SkewNormal};
use kpo_sense::protocol::ProtocolConfig;
use kpo_sense::sde::TruthOptions;
use kpo_sense::{OscillatorParams, PriorInterval};

/// Rejected configuration; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())).into())
}

/// Resolves `p` against the directory holding the configuration file.
pub fn resolve(config_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn d_dt() -> f64 {
    0.02
}
fn d_one() -> usize {
    1
}
fn d_kappa() -> f64 {
    1.0
}
fn d_points() -> usize {
    256
}
fn d_interval() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSettings {
    pub v: f64,
    pub f_max: f64,
    pub restart_policy: RestartPolicy,
    pub max_restarts: usize,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            v: 1.0,
            f_max: 1e5,
            restart_policy: RestartPolicy::ResetToInit,
            max_restarts: 100,
        }
    }
}

impl FilterSettings {
    pub fn ekf_config(&self, prior: &PriorInterval, kappa: f64, dt: f64, record_every: usize) -> EkfConfig {
        let mut cfg = EkfConfig::from_prior(prior, self.v, kappa, dt, self.f_max);
        cfg.restart_policy = self.restart_policy;
        cfg.max_restarts = self.max_restarts;
        cfg.record_every = record_every;
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub params: OscillatorParams,
    pub prior: PriorInterval,
    #[serde(default = "d_dt")]
    pub dt: f64,
    pub duration: f64,
    #[serde(default = "d_one")]
    pub n_traj: usize,
    #[serde(default)]
    pub filter: FilterSettings,
    #[serde(default)]
    pub truth: TruthOptions,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub params: OscillatorParams,
    pub prior: PriorInterval,
    #[serde(default = "d_dt")]
    pub dt: f64,
    pub duration: f64,
    pub n_traj: usize,
    #[serde(default)]
    pub filter: FilterSettings,
    /// Spacing of the stored filter estimates; snapshots use the nearest stored time.
    #[serde(default = "d_interval")]
    pub record_interval: f64,
    /// Snapshot times; empty means the end of the run.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub binning: BinningRule,
    #[serde(default)]
    pub tail_omega0: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KfScanConfig {
    pub omega: f64,
    pub epsilon: f64,
    pub eta: f64,
    #[serde(default = "d_kappa")]
    pub kappa: f64,
    #[serde(default = "d_points")]
    pub points: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiOptPoint {
    pub omega: f64,
    pub epsilon: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiOptConfig {
    pub points: Vec<PhiOptPoint>,
    #[serde(default = "d_kappa")]
    pub kappa: f64,
    /// Start of the phase window `[start, start + π)`.
    #[serde(default)]
    pub window_start: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolRunConfig {
    pub protocol: ProtocolConfig,
    pub omega_true: f64,
    /// Independent repetitions; run `r` uses seed `base_seed + r`.
    #[serde(default = "d_one")]
    pub repeats: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsConfig {
    /// CSV with a `t` column followed by one column per run.
    pub input: PathBuf,
    pub omega_true: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// CSV holding the samples.
    pub input: PathBuf,
    #[serde(default = "d_column")]
    pub column: String,
    #[serde(default)]
    pub t: f64,
    #[serde(default)]
    pub binning: BinningRule,
    #[serde(default)]
    pub init_hint: Option<SkewNormal>,
    #[serde(default)]
    pub tail_omega0: Option<f64>,
}

fn d_column() -> String {
    "omega_est".into()
}
