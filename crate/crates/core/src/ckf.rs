//! Third-degree spherical-radial cubature Kalman filter.
//!
//! The measurement update is split in two: [`measurement_stats`] propagates
//! the cubature points through `h` once and returns the noise-free innovation
//! covariance, and [`kalman_update`] takes an arbitrary effective measurement
//! covariance. The robust filters call the second half repeatedly with a
//! reweighted covariance without touching the cubature points again.

use nalgebra::{DMatrix, DVector};

use crate::error::{FilterError, Result};
use crate::linalg::{matrix_sqrt, symmetrize};

/// Mean and covariance of a Gaussian state estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 || cov.nrows() != n || cov.ncols() != n {
            return Err(FilterError::InvalidDimension(format!(
                "mean has length {n} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Discrete-time model `x_t = f(x_{t-1}) + w`, `y_t = h(x_t) + v`.
///
/// `step` is the time index `t` of the state being produced (for
/// [`transition`](Self::transition) and [`process_cov`](Self::process_cov))
/// or measured (for [`measure`](Self::measure) and
/// [`meas_cov`](Self::meas_cov)). Time-invariant models ignore it.
pub trait StateSpaceModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn meas_dim(&self) -> usize;
    fn transition(&self, x: &DVector<f64>, step: usize) -> DVector<f64>;
    fn measure(&self, x: &DVector<f64>, step: usize) -> DVector<f64>;
    fn process_cov(&self, step: usize) -> DMatrix<f64>;
    fn meas_cov(&self, step: usize) -> DMatrix<f64>;
}

/// Unit cubature points `√n·[I_n, −I_n]` with equal weights `1/(2n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubatureSet {
    pub points: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
}

impl CubatureSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Maps the unit points onto `N(mean, S·Sᵀ)`.
    fn scatter(&self, mean: &DVector<f64>, sqrt_cov: &DMatrix<f64>) -> Vec<DVector<f64>> {
        self.points.iter().map(|xi| sqrt_cov * xi + mean).collect()
    }
}

pub fn cubature_points(n: usize) -> Result<CubatureSet> {
    if n == 0 {
        return Err(FilterError::InvalidDimension(
            "cubature rule needs state dimension >= 1".into(),
        ));
    }
    let scale = (n as f64).sqrt();
    let mut points = Vec::with_capacity(2 * n);
    for sign in [1.0, -1.0] {
        for i in 0..n {
            let mut p = DVector::zeros(n);
            p[i] = sign * scale;
            points.push(p);
        }
    }
    Ok(CubatureSet {
        points,
        weights: vec![1.0 / (2 * n) as f64; 2 * n],
    })
}

fn weighted_mean(values: &[DVector<f64>], weights: &[f64]) -> DVector<f64> {
    let mut mean = DVector::zeros(values[0].len());
    for (v, w) in values.iter().zip(weights) {
        mean.axpy(*w, v, 1.0);
    }
    mean
}

fn weighted_cross_cov(
    a: &[DVector<f64>],
    a_mean: &DVector<f64>,
    b: &[DVector<f64>],
    b_mean: &DVector<f64>,
    weights: &[f64],
) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(a_mean.len(), b_mean.len());
    for ((ai, bi), w) in a.iter().zip(b).zip(weights) {
        let da = ai - a_mean;
        let db = bi - b_mean;
        acc.ger(*w, &da, &db, 1.0);
    }
    acc
}

/// Time update: propagates `prior` (the belief at `step - 1`) to `step`.
pub fn predict(
    prior: &GaussianBelief,
    model: &dyn StateSpaceModel,
    step: usize,
) -> Result<GaussianBelief> {
    let n = prior.dim();
    check_dim("prior", n, model.state_dim())?;
    let rule = cubature_points(n)?;
    let sqrt_cov = matrix_sqrt(&prior.cov)?;
    let propagated: Vec<_> = rule
        .scatter(&prior.mean, &sqrt_cov)
        .iter()
        .map(|x| model.transition(x, step))
        .collect();
    let mean = weighted_mean(&propagated, &rule.weights);
    let mut cov = weighted_cross_cov(&propagated, &mean, &propagated, &mean, &rule.weights)
        + model.process_cov(step);
    symmetrize(&mut cov);
    Ok(GaussianBelief { mean, cov })
}

/// Predicted measurement statistics at the predicted belief.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementStats {
    /// Predicted measurement `ŷ`.
    pub y_pred: DVector<f64>,
    /// Noise-free part of `P_yy`; the caller adds the effective `R`.
    pub innov_cov: DMatrix<f64>,
    /// State-measurement cross covariance `P_xy`.
    pub cross_cov: DMatrix<f64>,
}

pub fn measurement_stats(
    pred: &GaussianBelief,
    model: &dyn StateSpaceModel,
    step: usize,
) -> Result<MeasurementStats> {
    let n = pred.dim();
    check_dim("predicted belief", n, model.state_dim())?;
    let rule = cubature_points(n)?;
    let sqrt_cov = matrix_sqrt(&pred.cov)?;
    let points = rule.scatter(&pred.mean, &sqrt_cov);
    let measured: Vec<_> = points.iter().map(|x| model.measure(x, step)).collect();
    let y_pred = weighted_mean(&measured, &rule.weights);
    let mut innov_cov = weighted_cross_cov(&measured, &y_pred, &measured, &y_pred, &rule.weights);
    symmetrize(&mut innov_cov);
    let cross_cov = weighted_cross_cov(&points, &pred.mean, &measured, &y_pred, &rule.weights);
    Ok(MeasurementStats {
        y_pred,
        innov_cov,
        cross_cov,
    })
}

/// Measurement update with gain `K = P_xy (S + R_eff)⁻¹`.
pub fn kalman_update(
    pred: &GaussianBelief,
    stats: &MeasurementStats,
    y: &DVector<f64>,
    r_eff: &DMatrix<f64>,
) -> Result<GaussianBelief> {
    let m = stats.y_pred.len();
    check_dim("measurement", y.len(), m)?;
    if r_eff.nrows() != m || r_eff.ncols() != m {
        return Err(FilterError::InvalidDimension(format!(
            "effective measurement covariance is {}x{}, expected {m}x{m}",
            r_eff.nrows(),
            r_eff.ncols()
        )));
    }
    let mut p_yy = &stats.innov_cov + r_eff;
    symmetrize(&mut p_yy);
    // K = P_xy P_yy⁻¹  <=>  P_yy Kᵀ = P_xyᵀ
    let gain_t = match p_yy.clone().cholesky() {
        Some(chol) => chol.solve(&stats.cross_cov.transpose()),
        None => p_yy
            .clone()
            .lu()
            .solve(&stats.cross_cov.transpose())
            .ok_or(FilterError::Singular)?,
    };
    if gain_t.iter().any(|v| !v.is_finite()) {
        return Err(FilterError::Singular);
    }
    let gain = gain_t.transpose();
    let mean = &pred.mean + &gain * (y - &stats.y_pred);
    let mut cov = &pred.cov - &gain * &p_yy * &gain_t;
    symmetrize(&mut cov);
    Ok(GaussianBelief { mean, cov })
}

/// One plain CKF cycle: predict to `step`, then update with `y` and the
/// model's nominal measurement covariance.
pub fn ckf_step(
    prior: &GaussianBelief,
    y: &DVector<f64>,
    model: &dyn StateSpaceModel,
    step: usize,
) -> Result<GaussianBelief> {
    let pred = predict(prior, model, step)?;
    let stats = measurement_stats(&pred, model, step)?;
    kalman_update(&pred, &stats, y, &model.meas_cov(step))
}

fn check_dim(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(FilterError::InvalidDimension(format!(
            "{what} has dimension {got}, model expects {expected}"
        )));
    }
    Ok(())
}
