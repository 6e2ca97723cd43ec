//! Command-line front end: `vpo`, `soc`, `sweep` and `table1` experiments
//! writing plot-ready CSV files.

pub mod config;
pub mod export;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{FilterError, Result};
use crate::sim::{run_monte_carlo_with_workers, FilterSpec, MetricsReport, ScenarioConfig};
use crate::weights::{LossKind, RobustLossConfig};

pub use config::{parse_config, Experiment, Settings};

/// α values of the mixture-coefficient table.
pub const TABLE1_ALPHAS: [f64; 7] = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0];
/// `(φ, ϕ)` contamination settings of the mixture-coefficient table.
pub const TABLE1_SCENARIOS: [(f64, f64); 2] = [(0.3, 200.0), (0.2, 300.0)];

#[derive(Debug, Parser)]
#[command(name = "mcl-ckf", version, about = "Robust cubature Kalman filter experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Van der Pol oscillator Monte-Carlo comparison
    Vpo(CommonArgs),
    /// Battery state-of-charge Monte-Carlo comparison
    Soc(CommonArgs),
    /// Repeat an experiment over a list of values of one parameter
    Sweep(SweepArgs),
    /// DG-MCL filter over a grid of mixture coefficients on two VPO scenarios
    Table1(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON file with any of the flag keys (snake_case)
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Parameter to vary (phi, varphi, alpha, sigma1, sigma2, huber_c, mu, q, r, current)
    #[arg(long)]
    pub param: String,
    /// Comma-separated values
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Experiment::Vpo)]
    pub model: Experiment,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn resolve(common: &CommonArgs) -> Result<Settings> {
    let file = match &common.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    Ok(file.overlay(&common.settings))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)
        .map_err(|e| FilterError::InvalidConfig(format!("cannot write {}: {e}", path.display())))
}

fn run(scenario: &ScenarioConfig, workers: Option<usize>) -> Result<MetricsReport> {
    run_monte_carlo_with_workers(scenario, workers)
}

fn fmt_value(v: f64) -> String {
    format!("{v}")
}

/// Scenario running the DG filter once per α in [`TABLE1_ALPHAS`].
pub fn table1_scenario(base: &ScenarioConfig, phi: f64, varphi: f64) -> ScenarioConfig {
    let template = base
        .filters
        .iter()
        .find(|f| f.loss.kind == LossKind::DgMcl && f.name == "dg")
        .map(|f| f.loss)
        .unwrap_or_else(|| RobustLossConfig::with_kind(LossKind::DgMcl));
    let mut sc = base.clone();
    sc.name = format!("phi{}_varphi{}", fmt_value(phi), fmt_value(varphi));
    sc.noise.phi = phi;
    sc.noise.strength = varphi;
    sc.filters = TABLE1_ALPHAS
        .iter()
        .map(|&alpha| {
            FilterSpec::new(
                format!("dg_a{}", fmt_value(alpha)),
                RobustLossConfig {
                    kind: LossKind::DgMcl,
                    alpha,
                    ..template
                },
            )
        })
        .collect();
    sc
}

/// Table layout: one row per (scenario, component), one column per α.
pub fn table1_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from("scenario,component");
    for a in TABLE1_ALPHAS {
        out.push(',');
        out.push_str(&fmt_value(a));
    }
    out.push('\n');
    for rep in reports {
        let dim = rep.filters.first().map_or(0, |f| f.trmse.len());
        for k in 0..dim {
            out.push_str(&rep.scenario);
            out.push(',');
            out.push_str(&export::component_name(k));
            for a in TABLE1_ALPHAS {
                let name = format!("dg_a{}", fmt_value(a));
                let v = rep.filter(&name).map_or(f64::NAN, |f| f.trmse[k]);
                out.push(',');
                out.push_str(&export::fmt_sig6(v));
            }
            out.push('\n');
        }
    }
    out
}

/// Files written by one invocation, in write order.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<PathBuf>,
    pub reports: Vec<MetricsReport>,
}

/// Executes the experiment and writes its CSV files into the output directory.
pub fn run_and_export(command: &Command) -> Result<Outputs> {
    let (settings, experiment) = match command {
        Command::Vpo(c) | Command::Table1(c) => (resolve(c)?, Experiment::Vpo),
        Command::Soc(c) => (resolve(c)?, Experiment::Soc),
        Command::Sweep(s) => (resolve(&s.common)?, s.model),
    };
    let out_dir = settings.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    let workers = settings.workers;
    if workers == Some(0) {
        return Err(FilterError::InvalidConfig("workers = 0 violates workers >= 1".into()));
    }

    // resolve every scenario before doing any work
    let scenarios: Vec<ScenarioConfig> = match command {
        Command::Vpo(_) | Command::Soc(_) => vec![parse_config(experiment, &settings)?],
        Command::Table1(_) => {
            let base = parse_config(experiment, &settings)?;
            TABLE1_SCENARIOS
                .iter()
                .map(|&(phi, varphi)| table1_scenario(&base, phi, varphi))
                .collect()
        }
        Command::Sweep(s) => {
            if s.values.is_empty() {
                return Err(FilterError::InvalidConfig("sweep needs at least one value".into()));
            }
            s.values
                .iter()
                .map(|&v| {
                    let mut point = settings.clone();
                    point.set(&s.param, v)?;
                    let mut sc = parse_config(experiment, &point)?;
                    sc.name = format!("{experiment}_{}{}", s.param, fmt_value(v));
                    Ok(sc)
                })
                .collect::<Result<_>>()?
        }
    };

    fs::create_dir_all(&out_dir).map_err(|e| {
        FilterError::InvalidConfig(format!("cannot create {}: {e}", out_dir.display()))
    })?;
    let mut outputs = Outputs::default();
    for sc in &scenarios {
        outputs.reports.push(run(sc, workers)?);
    }

    let summary = out_dir.join("summary.csv");
    write_file(&summary, &export::summary_csv(&outputs.reports))?;
    outputs.files.push(summary);
    match command {
        Command::Vpo(_) | Command::Soc(_) => {
            let path = out_dir.join("steps.csv");
            write_file(&path, &export::steps_csv(&outputs.reports[0]))?;
            outputs.files.push(path);
        }
        Command::Sweep(_) | Command::Table1(_) => {
            for rep in &outputs.reports {
                let path = out_dir.join(format!("steps_{}.csv", rep.scenario));
                write_file(&path, &export::steps_csv(rep))?;
                outputs.files.push(path);
            }
        }
    }
    if let Command::Table1(_) = command {
        let path = out_dir.join("table1.csv");
        write_file(&path, &table1_csv(&outputs.reports))?;
        outputs.files.push(path);
    }
    Ok(outputs)
}
