//! Concrete state-space models: the Van der Pol oscillator (RK4), a
//! lithium-ion battery equivalent circuit (forward Euler), and a generic
//! linear-Gaussian model.

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::ckf::StateSpaceModel;
use crate::error::{FilterError, Result};

pub fn vpo_derivative(x: &Vector2<f64>, mu: f64) -> Vector2<f64> {
    Vector2::new(x[1], mu * (1.0 - x[0] * x[0]) * x[1] - x[0])
}

/// One classical fourth-order Runge-Kutta step of the Van der Pol flow.
pub fn rk4_step(x: &Vector2<f64>, mu: f64, dt: f64) -> Vector2<f64> {
    let k1 = vpo_derivative(x, mu);
    let k2 = vpo_derivative(&(x + k1 * (dt / 2.0)), mu);
    let k3 = vpo_derivative(&(x + k2 * (dt / 2.0)), mu);
    let k4 = vpo_derivative(&(x + k3 * dt), mu);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// `(x₁ − 1)² + 1`
pub fn vpo_measure(x: &Vector2<f64>) -> f64 {
    (x[0] - 1.0).powi(2) + 1.0
}

/// Van der Pol oscillator observed through a shifted parabola in `x₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct VpoConfig {
    pub mu: f64,
    /// Sampling interval in seconds.
    pub dt: f64,
    pub q: DMatrix<f64>,
    /// Nominal measurement variance.
    pub r: f64,
}

impl Default for VpoConfig {
    fn default() -> Self {
        Self {
            mu: 1.0,
            dt: 0.1,
            q: DMatrix::identity(2, 2) * 0.005,
            r: 1.0,
        }
    }
}

impl VpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(FilterError::InvalidConfig(format!("delta = {} violates delta > 0", self.dt)));
        }
        if !(self.r > 0.0) {
            return Err(FilterError::InvalidConfig(format!("r = {} violates r > 0", self.r)));
        }
        require_spd("q", &self.q, 2)
    }

    /// `∂h/∂x` at `x`.
    pub fn measurement_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 2, &[2.0 * (x[0] - 1.0), 0.0])
    }
}

impl StateSpaceModel for VpoConfig {
    fn state_dim(&self) -> usize {
        2
    }

    fn meas_dim(&self) -> usize {
        1
    }

    fn transition(&self, x: &DVector<f64>, _step: usize) -> DVector<f64> {
        let next = rk4_step(&Vector2::new(x[0], x[1]), self.mu, self.dt);
        DVector::from_column_slice(next.as_slice())
    }

    fn measure(&self, x: &DVector<f64>, _step: usize) -> DVector<f64> {
        DVector::from_element(1, vpo_measure(&Vector2::new(x[0], x[1])))
    }

    fn process_cov(&self, _step: usize) -> DMatrix<f64> {
        self.q.clone()
    }

    fn meas_cov(&self, _step: usize) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.r)
    }
}

/// Discharge current as a function of the step index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CurrentProfile {
    Constant(f64),
    /// Per-step currents; the last entry is held beyond the end.
    Steps(Vec<f64>),
}

impl CurrentProfile {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            CurrentProfile::Constant(i) => *i,
            CurrentProfile::Steps(v) => v.get(k).or(v.last()).copied().unwrap_or(0.0),
        }
    }
}

/// Equivalent-circuit battery parameters (SI units).
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryParams {
    /// SoC drop per ampere-second.
    pub beta: f64,
    pub r_d: f64,
    pub c_d: f64,
    pub r_s: f64,
    /// Hysteresis rate coefficient.
    pub gamma: f64,
    /// Euler step in seconds.
    pub dt: f64,
    pub current: CurrentProfile,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self {
            beta: 5.634e-5,
            r_d: 3e-3,
            c_d: 9e3,
            r_s: 5e-3,
            gamma: 2.47e-3,
            dt: 1.0,
            current: CurrentProfile::Constant(5.0),
        }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta", self.beta),
            ("r_d", self.r_d),
            ("c_d", self.c_d),
            ("r_s", self.r_s),
            ("gamma", self.gamma),
            ("delta", self.dt),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FilterError::InvalidConfig(format!("{name} = {v} violates {name} > 0")));
            }
        }
        Ok(())
    }
}

/// Open-circuit voltage as a function of state of charge.
pub fn ocv_curve(a: f64) -> f64 {
    -1.031 * (-35.0 * a).exp() + 3.685 + 0.2156 * a - 0.1178 * a * a + 0.3201 * a * a * a
}

/// Forward-Euler step of `(SoC, RC voltage, hysteresis voltage)` under the
/// current at step `k`.
pub fn battery_step(x: &Vector3<f64>, p: &BatteryParams, k: usize) -> Vector3<f64> {
    let i = p.current.at(k);
    let (a, b, c) = (x[0], x[1], x[2]);
    Vector3::new(
        a - p.dt * p.beta * i,
        b + p.dt * (-b / (p.r_d * p.c_d) + i / p.c_d),
        c - p.dt * p.gamma * i * (0.0755 * (1.0 - a) + c),
    )
}

/// Terminal voltage `ocv(a) − b + c − R_s I`.
pub fn battery_measure(x: &Vector3<f64>, p: &BatteryParams, k: usize) -> f64 {
    ocv_curve(x[0]) - x[1] + x[2] - p.r_s * p.current.at(k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatteryModel {
    pub params: BatteryParams,
    pub q: DMatrix<f64>,
    pub r: f64,
}

impl Default for BatteryModel {
    fn default() -> Self {
        Self {
            params: BatteryParams::default(),
            q: DMatrix::identity(3, 3) * 1e-6,
            r: 1e-2,
        }
    }
}

impl BatteryModel {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.r > 0.0) {
            return Err(FilterError::InvalidConfig(format!("r = {} violates r > 0", self.r)));
        }
        require_spd("q", &self.q, 3)
    }
}

impl StateSpaceModel for BatteryModel {
    fn state_dim(&self) -> usize {
        3
    }

    fn meas_dim(&self) -> usize {
        1
    }

    // the interval (t-1, t] is driven by the current sampled at t-1
    fn transition(&self, x: &DVector<f64>, step: usize) -> DVector<f64> {
        let next = battery_step(&Vector3::new(x[0], x[1], x[2]), &self.params, step.saturating_sub(1));
        DVector::from_column_slice(next.as_slice())
    }

    fn measure(&self, x: &DVector<f64>, step: usize) -> DVector<f64> {
        DVector::from_element(1, battery_measure(&Vector3::new(x[0], x[1], x[2]), &self.params, step))
    }

    fn process_cov(&self, _step: usize) -> DMatrix<f64> {
        self.q.clone()
    }

    fn meas_cov(&self, _step: usize) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.r)
    }
}

/// `x_t = A x_{t−1} + w`, `y_t = H x_t + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    pub a: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl LinearGaussianModel {
    pub fn new(a: DMatrix<f64>, h: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        Self { a, h, q, r }
    }
}

impl StateSpaceModel for LinearGaussianModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn meas_dim(&self) -> usize {
        self.h.nrows()
    }

    fn transition(&self, x: &DVector<f64>, _step: usize) -> DVector<f64> {
        &self.a * x
    }

    fn measure(&self, x: &DVector<f64>, _step: usize) -> DVector<f64> {
        &self.h * x
    }

    fn process_cov(&self, _step: usize) -> DMatrix<f64> {
        self.q.clone()
    }

    fn meas_cov(&self, _step: usize) -> DMatrix<f64> {
        self.r.clone()
    }
}

pub(crate) fn require_spd(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(FilterError::InvalidConfig(format!(
            "{name} must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) || m.clone().cholesky().is_none() {
        return Err(FilterError::InvalidConfig(format!(
            "{name} must be symmetric positive definite"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// RK4 with `substeps` equal substeps, used as a fine-step reference.
    fn integrate(x: Vector2<f64>, mu: f64, dt: f64, substeps: usize) -> Vector2<f64> {
        let h = dt / substeps as f64;
        (0..substeps).fold(x, |acc, _| rk4_step(&acc, mu, h))
    }

    #[test]
    fn derivative_values() {
        assert_eq!(vpo_derivative(&Vector2::new(0.0, 0.0), 1.0), Vector2::new(0.0, 0.0));
        assert_eq!(vpo_derivative(&Vector2::new(1.0, 1.0), 1.0), Vector2::new(1.0, -1.0));
        assert_eq!(vpo_derivative(&Vector2::new(0.0, -0.5), 1.0), Vector2::new(-0.5, -0.5));
    }

    #[test]
    fn rk4_equilibrium() {
        assert_eq!(rk4_step(&Vector2::zeros(), 1.0, 0.1), Vector2::zeros());
    }

    #[test]
    fn rk4_small_step_matches_euler() {
        let x = Vector2::new(0.3, -0.7);
        let dt = 1e-6;
        let euler = x + vpo_derivative(&x, 1.0) * dt;
        assert!((rk4_step(&x, 1.0, dt) - euler).norm() < 1e-10);
    }

    #[test]
    fn rk4_matches_fine_reference() {
        let x = Vector2::new(0.0, -0.5);
        // local truncation error at δ = 0.1 is ≈ 6.0e-8
        let reference = integrate(x, 1.0, 0.1, 1000);
        let err = (rk4_step(&x, 1.0, 0.1) - reference).norm();
        assert!(err < 1e-7, "{err}");
        let reference = integrate(x, 1.0, 0.01, 1000);
        assert!((rk4_step(&x, 1.0, 0.01) - reference).norm() < 1e-8);
    }

    #[test]
    fn rk4_fourth_order_convergence() {
        let x0 = Vector2::new(0.0, -0.5);
        let horizon = 2.0;
        let reference = integrate(x0, 1.0, horizon, 20_000);
        let err = |dt: f64| {
            let steps = (horizon / dt).round() as usize;
            (integrate(x0, 1.0, horizon, steps) - reference).norm()
        };
        let order = (err(0.1) / err(0.05)).log2();
        assert!((3.5..=4.5).contains(&order), "order {order}");
    }

    #[test]
    fn measurement_values() {
        assert_eq!(vpo_measure(&Vector2::new(1.0, 7.0)), 1.0);
        assert_eq!(vpo_measure(&Vector2::new(0.0, 7.0)), 2.0);
        assert_eq!(vpo_measure(&Vector2::new(-1.0, 7.0)), 5.0);
    }

    #[test]
    fn ocv_values() {
        assert!((ocv_curve(0.0) - 2.654).abs() < 1e-12);
        assert!((ocv_curve(1.0) - 4.1029).abs() < 1e-12);
        assert!(ocv_curve(0.9) > ocv_curve(0.5) && ocv_curve(0.5) > ocv_curve(0.1));
    }

    #[test]
    fn battery_zero_current() {
        let p = BatteryParams {
            current: CurrentProfile::Constant(0.0),
            ..BatteryParams::default()
        };
        let x = Vector3::new(0.8, 0.02, 0.01);
        let next = battery_step(&x, &p, 0);
        assert_eq!(next[0], x[0]);
        assert_eq!(next[2], x[2]);
        assert!((next[1] - x[1] * (1.0 - p.dt / (p.r_d * p.c_d))).abs() < 1e-16);
    }

    #[test]
    fn battery_one_step_soc() {
        let p = BatteryParams::default();
        let next = battery_step(&Vector3::new(1.0, 0.0, 0.0), &p, 0);
        assert!((next[0] - (1.0 - 2.817e-4)).abs() < 1e-15);
    }

    #[test]
    fn battery_rc_equilibrium() {
        let p = BatteryParams::default();
        let b_star = 5.0 * p.r_d;
        let next = battery_step(&Vector3::new(0.7, b_star, 0.0), &p, 0);
        assert!((next[1] - b_star).abs() < 1e-16);
    }

    #[test]
    fn battery_rc_contracts() {
        let p = BatteryParams::default();
        let b_star = 5.0 * p.r_d;
        for b in [-0.2, 0.0, 0.01, 0.5] {
            let next = battery_step(&Vector3::new(0.7, b, 0.0), &p, 0);
            assert!((next[1] - b_star).abs() < (b - b_star).abs());
        }
    }

    #[test]
    fn battery_measure_values() {
        let rest = BatteryParams {
            current: CurrentProfile::Constant(0.0),
            ..BatteryParams::default()
        };
        assert!((battery_measure(&Vector3::new(1.0, 0.0, 0.0), &rest, 0) - ocv_curve(1.0)).abs() < 1e-15);
        assert!((battery_measure(&Vector3::new(1.0, 0.1, 0.0), &rest, 0) - (ocv_curve(1.0) - 0.1)).abs() < 1e-15);
        let load = BatteryParams::default();
        assert!((battery_measure(&Vector3::new(1.0, 0.0, 0.0), &load, 0) - (ocv_curve(1.0) - 0.025)).abs() < 1e-15);
    }

    #[test]
    fn current_profile_holds_last_value() {
        let p = CurrentProfile::Steps(vec![1.0, 2.0]);
        assert_eq!((p.at(0), p.at(1), p.at(9)), (1.0, 2.0, 2.0));
        assert_eq!(CurrentProfile::Steps(vec![]).at(3), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(VpoConfig::default().validate().is_ok());
        assert!(VpoConfig { dt: 0.0, ..Default::default() }.validate().is_err());
        assert!(VpoConfig { q: DMatrix::zeros(2, 2), ..Default::default() }.validate().is_err());
        assert!(BatteryModel::default().validate().is_ok());
        let mut bad = BatteryModel::default();
        bad.params.c_d = -1.0;
        assert!(bad.validate().is_err());
    }
}
