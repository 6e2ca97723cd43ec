//! Mixture-correntropy kernels, losses and the diagonal residual weights
//! `Λ` used to reweight the measurement covariance.
//!
//! Two mixtures are supported: double-Gaussian (DG) and Laplace-Gaussian
//! (LG). Both are scaled so that `Λ_ii(0) = 1`, i.e. small residuals are
//! treated exactly as by the quadratic loss. A Huber weight is provided as a
//! baseline in the same form.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FilterError, Result};
use crate::linalg::matrix_sqrt;

/// Lower bound applied to every robust weight.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// Below this magnitude the LG weight takes its analytic limit of 1.
const LG_ZERO_RESIDUAL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Quadratic loss; the plain CKF.
    None,
    DgMcl,
    LgMcl,
    Huber,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::None => "none",
            LossKind::DgMcl => "dg-mcl",
            LossKind::LgMcl => "lg-mcl",
            LossKind::Huber => "huber",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(LossKind::None),
            "dg-mcl" => Ok(LossKind::DgMcl),
            "lg-mcl" => Ok(LossKind::LgMcl),
            "huber" => Ok(LossKind::Huber),
            other => Err(FilterError::InvalidConfig(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// Loss selection and its parameters.
///
/// `alpha` weights the first (Gaussian, width `sigma1`) kernel. The endpoints
/// `alpha = 1` and `alpha = 0` reduce the mixture to a single kernel of width
/// `sigma1` or `sigma2` respectively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustLossConfig {
    pub kind: LossKind,
    pub sigma1: f64,
    pub sigma2: f64,
    pub alpha: f64,
    pub huber_c: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RobustLossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::None,
            sigma1: 4.0,
            sigma2: 5.0,
            alpha: 0.5,
            huber_c: 1.345,
            tol: 1e-6,
            max_iter: 50,
        }
    }
}

impl RobustLossConfig {
    pub fn with_kind(kind: LossKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(FilterError::InvalidConfig(format!(
                    "{name} = {v} violates {name} > 0"
                )))
            }
        };
        positive("sigma1", self.sigma1)?;
        positive("sigma2", self.sigma2)?;
        positive("huber_c", self.huber_c)?;
        positive("tol", self.tol)?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(FilterError::InvalidConfig(format!(
                "alpha = {} violates 0 <= alpha <= 1",
                self.alpha
            )));
        }
        if self.max_iter < 1 {
            return Err(FilterError::InvalidConfig(
                "max_iter = 0 violates max_iter >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Diagonal of the residual weight matrix `Λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub diag: DVector<f64>,
}

impl WeightMatrix {
    pub fn identity(m: usize) -> Self {
        Self {
            diag: DVector::from_element(m, 1.0),
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    fn from_fn(e: &DVector<f64>, mut w: impl FnMut(f64) -> f64) -> Self {
        Self {
            diag: e.map(|ei| w(ei).max(WEIGHT_FLOOR)),
        }
    }
}

pub fn gaussian_kernel(e: f64, sigma: f64) -> f64 {
    (-e * e / (2.0 * sigma * sigma)).exp()
}

pub fn laplace_kernel(e: f64, sigma: f64) -> f64 {
    (-e.abs() / sigma).exp()
}

/// `1 − κ₂(e)` for the second kernel of the mixture: Gaussian for DG,
/// Laplace for LG.
fn second_kernel_gap(kind: LossKind, e: f64, sigma: f64) -> Result<f64> {
    match kind {
        LossKind::DgMcl => Ok(gaussian_gap(e, sigma)),
        LossKind::LgMcl => Ok(-(-e.abs() / sigma).exp_m1()),
        other => Err(FilterError::UnsupportedLoss(other.as_str())),
    }
}

fn gaussian_gap(e: f64, sigma: f64) -> f64 {
    -(-e * e / (2.0 * sigma * sigma)).exp_m1()
}

/// Mixture correntropy loss `1 − (1/m)Σ[α κ₁(e_i) + (1−α) κ₂(e_i)]`,
/// summed as `(1/m)Σ[α(1−κ₁) + (1−α)(1−κ₂)]` to stay accurate near zero.
pub fn mcl_loss(e: &DVector<f64>, cfg: &RobustLossConfig) -> Result<f64> {
    let m = e.len() as f64;
    let mut loss = 0.0;
    for &ei in e.iter() {
        loss += cfg.alpha * gaussian_gap(ei, cfg.sigma1)
            + (1.0 - cfg.alpha) * second_kernel_gap(cfg.kind, ei, cfg.sigma2)?;
    }
    Ok(loss / m)
}

/// DG tradeoff coefficient `λ = m σ₁² σ₂² / (α σ₂² + (1−α) σ₁²)`.
///
/// Chosen so that `λ·L_DG(e) ≈ ½‖e‖²` for small residuals.
pub fn dg_lambda(cfg: &RobustLossConfig, m: usize) -> f64 {
    let s1 = cfg.sigma1 * cfg.sigma1;
    let s2 = cfg.sigma2 * cfg.sigma2;
    m as f64 * s1 * s2 / (cfg.alpha * s2 + (1.0 - cfg.alpha) * s1)
}

/// `Λ_ii = (λ/m)[α κ₁(e_i)/σ₁² + (1−α) κ₂(e_i)/σ₂²]`, floored at
/// [`WEIGHT_FLOOR`].
pub fn dg_weights(e: &DVector<f64>, cfg: &RobustLossConfig) -> WeightMatrix {
    let m = e.len();
    let scale = dg_lambda(cfg, m) / m as f64;
    let s1 = cfg.sigma1 * cfg.sigma1;
    let s2 = cfg.sigma2 * cfg.sigma2;
    WeightMatrix::from_fn(e, |ei| {
        scale
            * (cfg.alpha * gaussian_kernel(ei, cfg.sigma1) / s1
                + (1.0 - cfg.alpha) * gaussian_kernel(ei, cfg.sigma2) / s2)
    })
}

/// LG weights with per-component tradeoff `λ_i`.
///
/// Written as the convex combination `w κ_G + (1−w) κ_L` with
/// `w = (α/σ₁²) / (α/σ₁² + 2(1−α)/(σ₂|e_i|))`, which is the product of `λ_i/m`
/// and the bracketed kernel-derivative term, free of the `1/|e_i|` blow-up.
pub fn lg_weights(e: &DVector<f64>, cfg: &RobustLossConfig) -> WeightMatrix {
    let gauss_coef = cfg.alpha / (cfg.sigma1 * cfg.sigma1);
    WeightMatrix::from_fn(e, |ei| {
        let abs_e = ei.abs();
        if abs_e < LG_ZERO_RESIDUAL {
            return 1.0;
        }
        let laplace_coef = 2.0 * (1.0 - cfg.alpha) / (cfg.sigma2 * abs_e);
        let w = gauss_coef / (gauss_coef + laplace_coef);
        w * gaussian_kernel(ei, cfg.sigma1) + (1.0 - w) * laplace_kernel(ei, cfg.sigma2)
    })
}

/// Per-component LG tradeoff `λ_i = m (α/σ₁² + 2(1−α)/(σ₂|e_i|))⁻¹`.
pub fn lg_lambda(e_i: f64, cfg: &RobustLossConfig, m: usize) -> f64 {
    let denom = cfg.alpha / (cfg.sigma1 * cfg.sigma1)
        + 2.0 * (1.0 - cfg.alpha) / (cfg.sigma2 * e_i.abs());
    m as f64 / denom
}

/// Huber M-estimator weight `min(1, c/|e_i|)`.
pub fn huber_weights(e: &DVector<f64>, c: f64) -> WeightMatrix {
    WeightMatrix::from_fn(e, |ei| if ei.abs() <= c { 1.0 } else { c / ei.abs() })
}

/// Dispatches on `cfg.kind`; the quadratic loss yields `Λ = I`.
pub fn robust_weights(e: &DVector<f64>, cfg: &RobustLossConfig) -> WeightMatrix {
    match cfg.kind {
        LossKind::None => WeightMatrix::identity(e.len()),
        LossKind::DgMcl => dg_weights(e, cfg),
        LossKind::LgMcl => lg_weights(e, cfg),
        LossKind::Huber => huber_weights(e, cfg.huber_c),
    }
}

/// Reweighted measurement covariance `R̄ = L Λ⁻¹ Lᵀ` with `R = L Lᵀ`.
///
/// `L` is the lower factor that whitens residuals (`e = L⁻¹ r`), so the
/// weighted quadratic `eᵀ Λ e` equals `rᵀ R̄⁻¹ r`.
pub fn effective_measurement_cov(r: &DMatrix<f64>, weights: &WeightMatrix) -> Result<DMatrix<f64>> {
    if r.nrows() != weights.len() {
        return Err(FilterError::InvalidDimension(format!(
            "R is {}x{} but there are {} weights",
            r.nrows(),
            r.ncols(),
            weights.len()
        )));
    }
    let lower = matrix_sqrt(r)?;
    let mut scaled = lower.clone();
    for (j, w) in weights.diag.iter().enumerate() {
        scaled.column_mut(j).unscale_mut(*w);
    }
    let mut r_bar = scaled * lower.transpose();
    crate::linalg::symmetrize(&mut r_bar);
    Ok(r_bar)
}
