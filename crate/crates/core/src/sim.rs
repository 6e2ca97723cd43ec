//! Monte-Carlo harness: outlier-contaminated trajectories, seeded per-run
//! random streams, and RMSE/TRMSE accumulation across filters.
//!
//! Every run draws its randomness from three ChaCha streams keyed by
//! `(base_seed + run_index, tag)`, so results do not depend on the number of
//! worker threads or on scheduling order. All filters in a run see the same
//! trajectory and the same initial estimate.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::ckf::{GaussianBelief, StateSpaceModel};
use crate::error::{FilterError, Result};
use crate::filter::run_filter;
use crate::linalg::matrix_sqrt;
use crate::models::{require_spd, BatteryModel, VpoConfig};
use crate::weights::RobustLossConfig;

const STREAM_PROCESS: u64 = 1;
const STREAM_MEASUREMENT: u64 = 2;
const STREAM_INITIAL: u64 = 3;

/// Measurement noise `(1−φ) N(0, R) + φ N(0, ϕ R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureNoiseConfig {
    /// Contamination ratio φ.
    pub phi: f64,
    /// Outlier variance multiplier ϕ.
    pub strength: f64,
    pub r: DMatrix<f64>,
}

impl MixtureNoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.phi) {
            return Err(FilterError::InvalidConfig(format!(
                "phi = {} violates 0 <= phi <= 1",
                self.phi
            )));
        }
        if !(self.strength >= 1.0 && self.strength.is_finite()) {
            return Err(FilterError::InvalidConfig(format!(
                "varphi = {} violates varphi >= 1",
                self.strength
            )));
        }
        require_spd("r", &self.r, self.r.nrows())
    }
}

/// Draws one mixture-noise vector. Always consumes one uniform and `m`
/// normals, whichever component is selected.
pub fn sample_mixture_noise<R: Rng + ?Sized>(rng: &mut R, cfg: &MixtureNoiseConfig) -> Result<DVector<f64>> {
    let lower = matrix_sqrt(&cfg.r)?;
    Ok(sample_mixture_with_factor(rng, cfg.phi, cfg.strength, &lower))
}

fn sample_mixture_with_factor<R: Rng + ?Sized>(
    rng: &mut R,
    phi: f64,
    strength: f64,
    lower: &DMatrix<f64>,
) -> DVector<f64> {
    let outlier = rng.random::<f64>() < phi;
    let z = standard_normal(rng, lower.nrows());
    let v = lower * z;
    if outlier {
        v * strength.sqrt()
    } else {
        v
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Vpo(VpoConfig),
    Battery(BatteryModel),
}

impl ModelSpec {
    pub fn model(&self) -> &dyn StateSpaceModel {
        match self {
            ModelSpec::Vpo(m) => m,
            ModelSpec::Battery(m) => m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Vpo(m) => m.validate(),
            ModelSpec::Battery(m) => m.validate(),
        }
    }
}

/// How the filters' initial belief is formed in each run.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialEstimate {
    /// Mean drawn per run from `N(center, cov)`; the filter covariance is `cov`.
    Sampled { center: DVector<f64>, cov: DMatrix<f64> },
    /// The same belief in every run.
    Fixed { mean: DVector<f64>, cov: DMatrix<f64> },
}

impl InitialEstimate {
    pub fn cov(&self) -> &DMatrix<f64> {
        match self {
            InitialEstimate::Sampled { cov, .. } | InitialEstimate::Fixed { cov, .. } => cov,
        }
    }

    fn center(&self) -> &DVector<f64> {
        match self {
            InitialEstimate::Sampled { center, .. } => center,
            InitialEstimate::Fixed { mean, .. } => mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub name: String,
    pub loss: RobustLossConfig,
}

impl FilterSpec {
    pub fn new(name: impl Into<String>, loss: RobustLossConfig) -> Self {
        Self {
            name: name.into(),
            loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub model: ModelSpec,
    pub noise: MixtureNoiseConfig,
    pub horizon: usize,
    pub runs: usize,
    pub base_seed: u64,
    /// True initial state.
    pub x0: DVector<f64>,
    pub initial: InitialEstimate,
    pub filters: Vec<FilterSpec>,
    /// Largest tolerated fraction of failed runs per filter.
    pub max_failed_fraction: f64,
}

impl ScenarioConfig {
    pub fn initial_cov(&self) -> DMatrix<f64> {
        self.initial.cov().clone()
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(FilterError::InvalidConfig("horizon = 0 violates horizon >= 1".into()));
        }
        if self.runs < 1 {
            return Err(FilterError::InvalidConfig("runs = 0 violates runs >= 1".into()));
        }
        self.model.validate()?;
        self.noise.validate()?;
        let model = self.model.model();
        let n = model.state_dim();
        if self.x0.len() != n || self.initial.center().len() != n {
            return Err(FilterError::InvalidConfig(format!(
                "initial state must have length {n}"
            )));
        }
        require_spd("init_cov", self.initial.cov(), n)?;
        if self.noise.r.nrows() != model.meas_dim() {
            return Err(FilterError::InvalidConfig(format!(
                "measurement noise must be {0}x{0}",
                model.meas_dim()
            )));
        }
        if !(0.0..=1.0).contains(&self.max_failed_fraction) {
            return Err(FilterError::InvalidConfig(format!(
                "max_failed = {} violates 0 <= max_failed <= 1",
                self.max_failed_fraction
            )));
        }
        if self.filters.is_empty() {
            return Err(FilterError::InvalidConfig("no filters configured".into()));
        }
        for f in &self.filters {
            f.loss.validate()?;
        }
        Ok(())
    }
}

/// Independent random streams for one Monte-Carlo run.
pub struct RunStreams {
    pub process: ChaCha8Rng,
    pub measurement: ChaCha8Rng,
    pub initial: ChaCha8Rng,
}

impl RunStreams {
    pub fn new(base_seed: u64, run: usize) -> Self {
        let stream = |tag| {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(run as u64));
            rng.set_stream(tag);
            rng
        };
        Self {
            process: stream(STREAM_PROCESS),
            measurement: stream(STREAM_MEASUREMENT),
            initial: stream(STREAM_INITIAL),
        }
    }
}

/// True states `x_1..x_T` and measurements `y_1..y_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub measurements: Vec<DVector<f64>>,
}

pub fn simulate_trajectory(streams: &mut RunStreams, scenario: &ScenarioConfig) -> Result<Trajectory> {
    let model = scenario.model.model();
    let meas_lower = matrix_sqrt(&scenario.noise.r)?;
    let mut states = Vec::with_capacity(scenario.horizon);
    let mut measurements = Vec::with_capacity(scenario.horizon);
    let mut x = scenario.x0.clone();
    for step in 1..=scenario.horizon {
        let q_lower = matrix_sqrt(&model.process_cov(step))?;
        let w = &q_lower * standard_normal(&mut streams.process, x.len());
        x = model.transition(&x, step) + w;
        let v = sample_mixture_with_factor(
            &mut streams.measurement,
            scenario.noise.phi,
            scenario.noise.strength,
            &meas_lower,
        );
        measurements.push(model.measure(&x, step) + v);
        states.push(x.clone());
    }
    Ok(Trajectory {
        states,
        measurements,
    })
}

fn initial_belief(streams: &mut RunStreams, initial: &InitialEstimate) -> Result<GaussianBelief> {
    match initial {
        InitialEstimate::Sampled { center, cov } => {
            let lower = matrix_sqrt(cov)?;
            let mean = center + lower * standard_normal(&mut streams.initial, center.len());
            GaussianBelief::new(mean, cov.clone())
        }
        InitialEstimate::Fixed { mean, cov } => GaussianBelief::new(mean.clone(), cov.clone()),
    }
}

/// Squared errors `[t][k]` and per-step iteration counts of one filter on one run.
struct FilterOutcome {
    sq_err: Vec<Vec<f64>>,
    iterations: Vec<usize>,
}

/// One entry per filter; `None` marks a failed filter run.
type RunOutcome = Vec<Option<FilterOutcome>>;

fn run_once(scenario: &ScenarioConfig, run: usize) -> Result<RunOutcome> {
    let mut streams = RunStreams::new(scenario.base_seed, run);
    let traj = simulate_trajectory(&mut streams, scenario)?;
    let x0 = initial_belief(&mut streams, &scenario.initial)?;
    let model = scenario.model.model();
    let outcomes = scenario
        .filters
        .iter()
        .map(|f| {
            let out = run_filter(&x0, &traj.measurements, model, &f.loss).ok()?;
            if out.beliefs.iter().any(|b| b.mean.iter().any(|v| !v.is_finite())) {
                return None;
            }
            Some(FilterOutcome {
                sq_err: out
                    .beliefs
                    .iter()
                    .zip(&traj.states)
                    .map(|(b, x)| (&b.mean - x).iter().map(|e| e * e).collect())
                    .collect(),
                iterations: out.diagnostics.iter().map(|d| d.iterations).collect(),
            })
        })
        .collect();
    Ok(outcomes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterMetrics {
    pub name: String,
    /// Time-averaged RMSE per state component.
    pub trmse: Vec<f64>,
    /// `rmse[k][t]`: RMSE of component `k` at time `t + 1` across runs.
    pub rmse: Vec<Vec<f64>>,
    pub mean_iterations: f64,
    /// `iteration_histogram[i]` counts steps that took `i` updates.
    pub iteration_histogram: Vec<u64>,
    pub runs_used: usize,
    pub runs_failed: usize,
}

impl FilterMetrics {
    /// Lower median of the per-step iteration counts over all steps and runs.
    pub fn median_iterations(&self) -> usize {
        let total: u64 = self.iteration_histogram.iter().sum();
        let target = total.div_ceil(2).max(1);
        let mut seen = 0;
        for (i, c) in self.iteration_histogram.iter().enumerate() {
            seen += c;
            if seen >= target {
                return i;
            }
        }
        0
    }

    /// Mean RMSE of component `k` over times `from..=T` (1-based).
    pub fn mean_rmse_from(&self, k: usize, from: usize) -> f64 {
        let tail = &self.rmse[k][from.saturating_sub(1)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub scenario: String,
    pub horizon: usize,
    /// Runs attempted.
    pub runs: usize,
    pub filters: Vec<FilterMetrics>,
}

impl MetricsReport {
    pub fn filter(&self, name: &str) -> Option<&FilterMetrics> {
        self.filters.iter().find(|f| f.name == name)
    }
}

/// TRMSE from per-run squared errors: `(1/T) Σ_t √((1/L) Σ_i err²)`, where
/// `L` counts the runs the filter completed.
fn reduce(scenario: &ScenarioConfig, outcomes: &[Option<RunOutcome>]) -> MetricsReport {
    let n = scenario.x0.len();
    let t_len = scenario.horizon;
    let filters = scenario
        .filters
        .iter()
        .enumerate()
        .map(|(fi, spec)| {
            let mut sums = vec![vec![0.0; t_len]; n];
            let mut histogram = Vec::new();
            let mut total_iter = 0usize;
            let mut used = 0usize;
            for o in outcomes.iter().filter_map(|o| o.as_ref()?[fi].as_ref()) {
                used += 1;
                for (t, errs) in o.sq_err.iter().enumerate() {
                    for (k, e) in errs.iter().enumerate() {
                        sums[k][t] += e;
                    }
                }
                for &it in &o.iterations {
                    if histogram.len() <= it {
                        histogram.resize(it + 1, 0u64);
                    }
                    histogram[it] += 1;
                    total_iter += it;
                }
            }
            let runs = used as f64;
            let rmse: Vec<Vec<f64>> = sums
                .into_iter()
                .map(|row| row.into_iter().map(|s| (s / runs).sqrt()).collect())
                .collect();
            let trmse = rmse.iter().map(|row| row.iter().sum::<f64>() / t_len as f64).collect();
            FilterMetrics {
                name: spec.name.clone(),
                trmse,
                rmse,
                mean_iterations: total_iter as f64 / (runs * t_len as f64),
                iteration_histogram: histogram,
                runs_used: used,
                runs_failed: outcomes.len() - used,
            }
        })
        .collect();
    MetricsReport {
        scenario: scenario.name.clone(),
        horizon: t_len,
        runs: outcomes.len(),
        filters,
    }
}

/// Runs the scenario on the global rayon pool.
pub fn run_monte_carlo(scenario: &ScenarioConfig) -> Result<MetricsReport> {
    run_monte_carlo_with_workers(scenario, None)
}

/// Runs the scenario on `workers` threads (`None`: rayon's default).
///
/// A failed filter run is excluded from that filter's metrics and counted in
/// its `runs_failed`. A filter failing on more than `max_failed_fraction` of
/// the runs, or on all of them, is an error.
pub fn run_monte_carlo_with_workers(
    scenario: &ScenarioConfig,
    workers: Option<usize>,
) -> Result<MetricsReport> {
    scenario.validate()?;
    let job = || -> Vec<Option<RunOutcome>> {
        (0..scenario.runs)
            .into_par_iter()
            .map(|run| run_once(scenario, run).ok())
            .collect()
    };
    let outcomes = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| FilterError::InvalidConfig(format!("cannot start worker pool: {e}")))?
            .install(job),
        None => job(),
    };
    let report = reduce(scenario, &outcomes);
    for f in &report.filters {
        let limit = scenario.max_failed_fraction * scenario.runs as f64;
        if f.runs_used == 0 || f.runs_failed as f64 > limit {
            return Err(FilterError::TooManyFailures {
                filter: f.name.clone(),
                failed: f.runs_failed,
                runs: scenario.runs,
                limit: scenario.max_failed_fraction,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::LossKind;

    fn scalar_noise(phi: f64, strength: f64) -> MixtureNoiseConfig {
        MixtureNoiseConfig {
            phi,
            strength,
            r: DMatrix::identity(1, 1),
        }
    }

    fn sample_variance(cfg: &MixtureNoiseConfig, n: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lower = matrix_sqrt(&cfg.r).unwrap();
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = sample_mixture_with_factor(&mut rng, cfg.phi, cfg.strength, &lower)[0];
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        s2 / n as f64 - mean * mean
    }

    #[test]
    fn mixture_noise_variances() {
        let n = 1_000_000;
        assert!((sample_variance(&scalar_noise(0.0, 200.0), n) - 1.0).abs() < 0.02);
        assert!((sample_variance(&scalar_noise(1.0, 200.0), n) / 200.0 - 1.0).abs() < 0.02);
        assert!((sample_variance(&scalar_noise(0.2, 200.0), n) / 40.8 - 1.0).abs() < 0.05);
    }

    #[test]
    fn mixture_noise_public_entry_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = sample_mixture_noise(&mut rng, &scalar_noise(0.5, 10.0)).unwrap();
        assert_eq!(v.len(), 1);
        assert!(v[0].is_finite());
    }

    fn tiny_vpo(phi: f64) -> ScenarioConfig {
        ScenarioConfig {
            name: "test".into(),
            model: ModelSpec::Vpo(VpoConfig::default()),
            noise: scalar_noise(phi, 200.0),
            horizon: 30,
            runs: 8,
            base_seed: 5,
            x0: DVector::from_vec(vec![0.0, -0.5]),
            initial: InitialEstimate::Sampled {
                center: DVector::from_vec(vec![0.0, -0.5]),
                cov: DMatrix::identity(2, 2) * 0.01,
            },
            filters: vec![
                FilterSpec::new("ckf", RobustLossConfig::default()),
                FilterSpec::new("dg", RobustLossConfig::with_kind(LossKind::DgMcl)),
            ],
            max_failed_fraction: 0.01,
        }
    }

    #[test]
    fn noiseless_trajectory_follows_flow() {
        let mut sc = tiny_vpo(0.0);
        let vpo = VpoConfig {
            q: DMatrix::identity(2, 2) * 1e-300,
            ..VpoConfig::default()
        };
        sc.model = ModelSpec::Vpo(vpo.clone());
        sc.noise.r = DMatrix::from_element(1, 1, 1e-300);
        let traj = simulate_trajectory(&mut RunStreams::new(1, 0), &sc).unwrap();
        let mut x = sc.x0.clone();
        for (step, (s, y)) in traj.states.iter().zip(&traj.measurements).enumerate() {
            x = vpo.transition(&x, step + 1);
            assert!((s - &x).norm() < 1e-10);
            assert!((y - vpo.measure(&x, step + 1)).norm() < 1e-10);
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let sc = tiny_vpo(0.3);
        let a = simulate_trajectory(&mut RunStreams::new(9, 4), &sc).unwrap();
        let b = simulate_trajectory(&mut RunStreams::new(9, 4), &sc).unwrap();
        assert_eq!(a, b);
        let c = simulate_trajectory(&mut RunStreams::new(9, 5), &sc).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn reaches_limit_cycle_without_noise() {
        let mut sc = tiny_vpo(0.0);
        sc.model = ModelSpec::Vpo(VpoConfig {
            q: DMatrix::identity(2, 2) * 1e-300,
            ..VpoConfig::default()
        });
        sc.horizon = 400;
        let traj = simulate_trajectory(&mut RunStreams::new(1, 0), &sc).unwrap();
        // the μ=1 limit cycle has |x₁| peaking near 2
        let late = traj.states[200..].iter().map(|x| x[0].abs()).fold(0.0, f64::max);
        assert!((1.9..2.1).contains(&late), "peak {late}");
        let mid = traj.states[100..200].iter().map(|x| x[0].abs()).fold(0.0, f64::max);
        assert!((late - mid).abs() < 0.05);
    }

    #[test]
    fn report_is_worker_independent() {
        let sc = tiny_vpo(0.2);
        let a = run_monte_carlo_with_workers(&sc, Some(1)).unwrap();
        let b = run_monte_carlo_with_workers(&sc, Some(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs, 8);
        for f in &a.filters {
            assert_eq!((f.runs_used, f.runs_failed), (8, 0));
            assert_eq!(f.rmse[0].len(), 30);
            assert!(f.trmse.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn trmse_formula_base_cases() {
        let mut sc = tiny_vpo(0.0);
        sc.horizon = 1;
        sc.filters.truncate(1);
        let one = vec![Some(FilterOutcome {
            sq_err: vec![vec![0.09, 0.0]],
            iterations: vec![1],
        })];
        let report = reduce(&sc, &[Some(one)]);
        let f = &report.filters[0];
        assert!((f.rmse[0][0] - 0.3).abs() < 1e-15);
        assert!((f.trmse[0] - 0.3).abs() < 1e-15);
        assert_eq!(f.trmse[1], 0.0);
        assert_eq!(f.median_iterations(), 1);
    }

    #[test]
    fn median_of_histogram() {
        let f = FilterMetrics {
            name: "x".into(),
            trmse: vec![],
            rmse: vec![],
            mean_iterations: 0.0,
            iteration_histogram: vec![0, 0, 5, 3, 1],
            runs_used: 1,
            runs_failed: 0,
        };
        assert_eq!(f.median_iterations(), 2);
    }

    #[test]
    fn scenario_validation() {
        let mut sc = tiny_vpo(0.0);
        sc.noise.phi = 1.5;
        assert!(sc.validate().unwrap_err().to_string().contains("phi"));
        let mut sc = tiny_vpo(0.0);
        sc.noise.strength = 0.5;
        assert!(sc.validate().is_err());
        let mut sc = tiny_vpo(0.0);
        sc.runs = 0;
        assert!(sc.validate().is_err());
        let mut sc = tiny_vpo(0.0);
        sc.x0 = DVector::zeros(3);
        assert!(sc.validate().is_err());
        let mut sc = tiny_vpo(0.0);
        sc.max_failed_fraction = -0.1;
        assert!(sc.validate().unwrap_err().to_string().contains("max_failed"));
    }

    #[test]
    fn failed_filter_runs_are_excluded_per_filter() {
        let mut sc = tiny_vpo(0.0);
        sc.horizon = 2;
        let ok = || {
            Some(FilterOutcome {
                sq_err: vec![vec![0.04, 0.0], vec![0.04, 0.0]],
                iterations: vec![1, 1],
            })
        };
        let outcomes = vec![Some(vec![ok(), ok()]), Some(vec![ok(), None]), None];
        let report = reduce(&sc, &outcomes);
        assert_eq!(report.runs, 3);
        let (ckf, dg) = (&report.filters[0], &report.filters[1]);
        assert_eq!((ckf.runs_used, ckf.runs_failed), (2, 1));
        assert_eq!((dg.runs_used, dg.runs_failed), (1, 2));
        assert!((dg.trmse[0] - 0.2).abs() < 1e-15);
        assert!((ckf.trmse[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn failure_limit_is_enforced() {
        let mut sc = tiny_vpo(0.0);
        sc.model = ModelSpec::Vpo(VpoConfig {
            dt: 5.0,
            ..VpoConfig::default()
        });
        sc.max_failed_fraction = 0.0;
        match run_monte_carlo(&sc) {
            Err(FilterError::TooManyFailures { failed, runs, .. }) => {
                assert!(failed > 0);
                assert_eq!(runs, 8);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }
}
