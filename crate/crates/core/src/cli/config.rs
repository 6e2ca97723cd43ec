//! Flat experiment settings shared by the config file and the command line.
//!
//! Precedence is flags, then the config file, then the built-in defaults of
//! the selected experiment.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{FilterError, Result};
use crate::models::{BatteryModel, BatteryParams, CurrentProfile, VpoConfig};
use crate::sim::{FilterSpec, InitialEstimate, MixtureNoiseConfig, ModelSpec, ScenarioConfig};
use crate::weights::{LossKind, RobustLossConfig};

/// Comma-separated list of numbers; in a config file either a JSON array or
/// a string.
#[derive(Debug, Clone, PartialEq)]
pub struct NumList(pub Vec<f64>);

impl FromStr for NumList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(NumList)
    }
}

impl<'de> Deserialize<'de> for NumList {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            List(Vec<f64>),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::List(v) => Ok(NumList(v)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Every tunable key. Each one is also a `--kebab-case` flag.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Contamination ratio of the measurement noise
    #[arg(long)]
    pub phi: Option<f64>,
    /// Outlier variance multiplier
    #[arg(long)]
    pub varphi: Option<f64>,
    /// Monte-Carlo runs
    #[arg(long)]
    pub runs: Option<usize>,
    /// Time steps per run
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Base seed; run i uses seed + i
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma list from {ckf, dg, lg, huber, mcc1, mcc2}
    #[arg(long)]
    pub filters: Option<String>,
    #[arg(long)]
    pub sigma1: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Weight of the first (Gaussian, sigma1) kernel
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub huber_c: Option<f64>,
    /// Convergence tolerance of the reweighting loop
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Van der Pol nonlinearity
    #[arg(long)]
    pub mu: Option<f64>,
    /// Sampling interval in seconds
    #[arg(long)]
    pub delta: Option<f64>,
    /// Process noise variance (Q = q·I)
    #[arg(long)]
    pub q: Option<f64>,
    /// Nominal measurement noise variance
    #[arg(long)]
    pub r: Option<f64>,
    /// True initial state
    #[arg(long)]
    pub x0: Option<NumList>,
    /// Center of the filters' initial estimate
    #[arg(long)]
    pub init_mean: Option<NumList>,
    /// Initial covariance (init_cov·I)
    #[arg(long)]
    pub init_cov: Option<f64>,
    /// Battery discharge current in amperes (constant)
    #[arg(long)]
    pub current: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub r_d: Option<f64>,
    #[arg(long)]
    pub c_d: Option<f64>,
    #[arg(long)]
    pub r_s: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Largest fraction of runs a filter may fail before the report is rejected
    #[arg(long)]
    pub max_failed: Option<f64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for the Monte-Carlo runs
    #[arg(long)]
    pub workers: Option<usize>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),* $(,)?) => {
        Settings { $($field: $top.$field.clone().or($base.$field.clone()),)* }
    };
}

impl Settings {
    /// `self` with every field set in `top` replaced.
    pub fn overlay(&self, top: &Settings) -> Settings {
        let base = self;
        overlay!(base, top;
            phi, varphi, runs, horizon, seed, filters, sigma1, sigma2, alpha, huber_c, tol,
            max_iter, mu, delta, q, r, x0, init_mean, init_cov, current, beta, r_d, c_d, r_s,
            gamma, max_failed, out, workers)
    }

    pub fn from_file(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            FilterError::InvalidConfig(format!("cannot read {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| FilterError::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Sets a numeric key by name, for parameter sweeps.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let slot = match key {
            "phi" => &mut self.phi,
            "varphi" => &mut self.varphi,
            "sigma1" => &mut self.sigma1,
            "sigma2" => &mut self.sigma2,
            "alpha" => &mut self.alpha,
            "huber_c" => &mut self.huber_c,
            "mu" => &mut self.mu,
            "q" => &mut self.q,
            "r" => &mut self.r,
            "current" => &mut self.current,
            other => {
                return Err(FilterError::InvalidConfig(format!(
                    "cannot sweep over `{other}`"
                )))
            }
        };
        *slot = Some(value);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Experiment {
    Vpo,
    Soc,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::Vpo => "vpo",
            Experiment::Soc => "soc",
        })
    }
}

pub const FILTER_NAMES: [&str; 6] = ["ckf", "dg", "lg", "huber", "mcc1", "mcc2"];

/// Maps a filter name onto its loss configuration.
pub fn filter_spec(name: &str, template: &RobustLossConfig) -> Result<FilterSpec> {
    let loss = match name {
        "ckf" => RobustLossConfig {
            kind: LossKind::None,
            ..*template
        },
        "dg" => RobustLossConfig {
            kind: LossKind::DgMcl,
            ..*template
        },
        "lg" => RobustLossConfig {
            kind: LossKind::LgMcl,
            ..*template
        },
        "huber" => RobustLossConfig {
            kind: LossKind::Huber,
            ..*template
        },
        // single Gaussian kernel of width 4 (mcc1) or 5 (mcc2)
        "mcc1" => RobustLossConfig {
            kind: LossKind::DgMcl,
            sigma1: 4.0,
            alpha: 1.0,
            ..*template
        },
        "mcc2" => RobustLossConfig {
            kind: LossKind::DgMcl,
            sigma2: 5.0,
            alpha: 0.0,
            ..*template
        },
        other => {
            return Err(FilterError::InvalidConfig(format!(
                "unknown filter `{other}` (expected one of {})",
                FILTER_NAMES.join(", ")
            )))
        }
    };
    Ok(FilterSpec::new(name, loss))
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(FilterError::InvalidConfig(format!("{name} = {v} violates {name} > 0")))
    }
}

fn vector(name: &str, list: &NumList, n: usize) -> Result<DVector<f64>> {
    if list.0.len() != n {
        return Err(FilterError::InvalidConfig(format!(
            "{name} must have {n} entries, got {}",
            list.0.len()
        )));
    }
    Ok(DVector::from_column_slice(&list.0))
}

fn reject_keys(s: &Settings, experiment: Experiment) -> Result<()> {
    let present = |name: &'static str, set: bool| set.then_some(name);
    let foreign: Vec<&str> = match experiment {
        Experiment::Vpo => [
            present("current", s.current.is_some()),
            present("beta", s.beta.is_some()),
            present("r_d", s.r_d.is_some()),
            present("c_d", s.c_d.is_some()),
            present("r_s", s.r_s.is_some()),
            present("gamma", s.gamma.is_some()),
        ]
        .into_iter()
        .flatten()
        .collect(),
        Experiment::Soc => present("mu", s.mu.is_some()).into_iter().collect(),
    };
    if let Some(key) = foreign.first() {
        return Err(FilterError::InvalidConfig(format!(
            "key `{key}` does not apply to the {experiment} experiment"
        )));
    }
    Ok(())
}

/// Resolves settings into a validated scenario for `experiment`.
pub fn parse_config(experiment: Experiment, s: &Settings) -> Result<ScenarioConfig> {
    reject_keys(s, experiment)?;
    let default_loss = RobustLossConfig::default();
    let template = RobustLossConfig {
        kind: LossKind::None,
        sigma1: s.sigma1.unwrap_or(default_loss.sigma1),
        sigma2: s.sigma2.unwrap_or(default_loss.sigma2),
        alpha: s.alpha.unwrap_or(default_loss.alpha),
        huber_c: s.huber_c.unwrap_or(default_loss.huber_c),
        tol: s.tol.unwrap_or(default_loss.tol),
        max_iter: s.max_iter.unwrap_or(default_loss.max_iter),
    };
    template.validate()?;

    let filter_list = s.filters.as_deref().unwrap_or("ckf,dg,lg,huber,mcc1,mcc2");
    let filters = filter_list
        .split(',')
        .map(str::trim)
        .filter(|f| !f.is_empty())
        .map(|f| filter_spec(f, &template))
        .collect::<Result<Vec<_>>>()?;

    let (model, defaults) = match experiment {
        Experiment::Vpo => {
            let vpo = VpoConfig {
                mu: s.mu.unwrap_or(1.0),
                dt: positive("delta", s.delta.unwrap_or(0.1))?,
                q: DMatrix::identity(2, 2) * positive("q", s.q.unwrap_or(0.005))?,
                r: positive("r", s.r.unwrap_or(1.0))?,
            };
            (ModelSpec::Vpo(vpo), ExperimentDefaults::VPO)
        }
        Experiment::Soc => {
            let d = BatteryParams::default();
            let params = BatteryParams {
                beta: s.beta.unwrap_or(d.beta),
                r_d: s.r_d.unwrap_or(d.r_d),
                c_d: s.c_d.unwrap_or(d.c_d),
                r_s: s.r_s.unwrap_or(d.r_s),
                gamma: s.gamma.unwrap_or(d.gamma),
                dt: s.delta.unwrap_or(d.dt),
                current: CurrentProfile::Constant(s.current.unwrap_or(5.0)),
            };
            let battery = BatteryModel {
                params,
                q: DMatrix::identity(3, 3) * positive("q", s.q.unwrap_or(1e-6))?,
                r: positive("r", s.r.unwrap_or(1e-2))?,
            };
            (ModelSpec::Battery(battery), ExperimentDefaults::SOC)
        }
    };
    let n = model.model().state_dim();
    let x0 = match &s.x0 {
        Some(l) => vector("x0", l, n)?,
        None => DVector::from_column_slice(defaults.x0),
    };
    let init_cov = DMatrix::identity(n, n) * positive("init_cov", s.init_cov.unwrap_or(defaults.init_cov))?;
    let initial = match experiment {
        Experiment::Vpo => InitialEstimate::Sampled {
            center: match &s.init_mean {
                Some(l) => vector("init_mean", l, n)?,
                None => x0.clone(),
            },
            cov: init_cov,
        },
        Experiment::Soc => InitialEstimate::Fixed {
            mean: match &s.init_mean {
                Some(l) => vector("init_mean", l, n)?,
                None => DVector::from_column_slice(defaults.init_mean),
            },
            cov: init_cov,
        },
    };
    let r = model.model().meas_cov(0);
    let scenario = ScenarioConfig {
        name: experiment.to_string(),
        model,
        noise: MixtureNoiseConfig {
            phi: s.phi.unwrap_or(defaults.phi),
            strength: s.varphi.unwrap_or(defaults.varphi),
            r,
        },
        horizon: s.horizon.unwrap_or(defaults.horizon),
        runs: s.runs.unwrap_or(defaults.runs),
        base_seed: s.seed.unwrap_or(0),
        x0,
        initial,
        filters,
        max_failed_fraction: s.max_failed.unwrap_or(0.01),
    };
    scenario.validate()?;
    Ok(scenario)
}

struct ExperimentDefaults {
    phi: f64,
    varphi: f64,
    horizon: usize,
    runs: usize,
    x0: &'static [f64],
    init_mean: &'static [f64],
    init_cov: f64,
}

impl ExperimentDefaults {
    const VPO: Self = Self {
        phi: 0.3,
        varphi: 200.0,
        horizon: 120,
        runs: 1000,
        x0: &[0.0, -0.5],
        init_mean: &[0.0, -0.5],
        init_cov: 0.01,
    };

    const SOC: Self = Self {
        phi: 0.2,
        varphi: 10.0,
        horizon: 1800,
        runs: 100,
        x0: &[1.0, 0.0, 0.0],
        init_mean: &[0.95, 0.1, 0.001],
        init_cov: 0.05,
    };
}
