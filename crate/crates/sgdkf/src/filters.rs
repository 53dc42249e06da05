//! Extended Kalman filter building blocks for the cell model.
//!
//! Two filters share the kernels in this module: a state filter that
//! tracks the five electrochemical states through the nonlinear voltage
//! map, and a random-walk parameter filter that nudges the five physical
//! parameters using the post-update voltage residual. Both consume the
//! model's Jacobians and keep covariances symmetric after every update;
//! the state filter defaults to the Joseph covariance form, with the
//! short form available behind a switch.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::{
    self, CellParameters, ElectrochemicalState, ModelError, ThetaVector,
};
use crate::numerics::symmetrize;

/// Hard physical ranges the parameter estimate is clamped into after
/// every update, indexed in filter order `[d_p, d_n, q_all, x_sp0, x_sn0]`.
pub const THETA_BOUNDS: [(f64, f64); 5] = [
    (1.0e-9, f64::INFINITY),
    (1.0e-9, f64::INFINITY),
    (1.0, f64::INFINITY),
    (1.0e-3, 0.999),
    (1.0e-3, 0.999),
];

const THETA_FIELDS: [&str; 5] = ["d_p", "d_n", "q_all", "x_sp0", "x_sn0"];

/// A clamp that moves an entry by more than this fraction of its raw
/// magnitude is treated as filter failure rather than a gentle projection.
const CLAMP_REJECT_FRACTION: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error(transparent)]
    Model(#[from] ModelError),
    /// The scalar innovation covariance lost positivity.
    #[error("innovation covariance {0} is not positive")]
    DegenerateInnovation(f64),
    /// A filter mean or covariance picked up NaN or infinity.
    #[error("filter state became non-finite")]
    NonFiniteFilterState,
    /// The parameter update left a physical range so violently that
    /// clamping would rewrite the estimate rather than project it.
    #[error("parameter `{field}` updated to {raw} — outside its physical range")]
    ThetaOutOfRange { field: &'static str, raw: f64, clamped: f64 },
}

/// Mean and covariance of a Gaussian belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianEstimate {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianEstimate {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        assert_eq!(cov.nrows(), cov.ncols(), "covariance must be square");
        assert_eq!(mean.len(), cov.nrows(), "mean/covariance dimension mismatch");
        Self { mean, cov }
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite()) && self.cov.iter().all(|v| v.is_finite())
    }
}

/// Process and measurement noise for the dual filter.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    /// State process covariance (5×5).
    pub q_state: DMatrix<f64>,
    /// Scalar voltage measurement variance.
    pub r_meas: f64,
    /// Parameter random-walk covariance (5×5).
    pub q_theta: DMatrix<f64>,
}

impl NoiseConfig {
    pub fn from_diagonals(q_state: [f64; 5], r_meas: f64, q_theta: [f64; 5]) -> Self {
        Self {
            q_state: DMatrix::from_diagonal(&DVector::from_row_slice(&q_state)),
            r_meas,
            q_theta: DMatrix::from_diagonal(&DVector::from_row_slice(&q_theta)),
        }
    }
}

/// Which covariance update the state filter applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceForm {
    /// `(I−KC) P (I−KC)ᵀ + K R Kᵀ` — symmetric and stable by construction.
    Joseph,
    /// `(I−KC) P` — cheaper, less robust to rounding.
    Short,
}

impl Default for CovarianceForm {
    fn default() -> Self {
        CovarianceForm::Joseph
    }
}

/// Covariance propagation `A P Aᵀ + Q`, re-symmetrized.
pub fn predict_covariance(a: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(a * p * a.transpose() + q))
}

/// Scalar-measurement Kalman gain: returns `(K, S)` with
/// `S = C P Cᵀ + R` and `K = P Cᵀ / S`.
pub fn kalman_gain(
    p_pred: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r_meas: f64,
) -> Result<(DVector<f64>, f64), FilterError> {
    let pct = p_pred * c.transpose();
    let s = (c * &pct)[(0, 0)] + r_meas;
    if !(s.is_finite() && s > 0.0) {
        return Err(FilterError::DegenerateInnovation(s));
    }
    Ok((DVector::from_column_slice(pct.column(0).as_slice()) / s, s))
}

/// Joseph-form covariance update for a scalar measurement.
pub fn joseph_update(
    p_pred: &DMatrix<f64>,
    gain: &DVector<f64>,
    c: &DMatrix<f64>,
    r_meas: f64,
) -> DMatrix<f64> {
    let n = p_pred.nrows();
    let ikc = DMatrix::identity(n, n) - gain * c;
    symmetrize(&(&ikc * p_pred * ikc.transpose() + gain * gain.transpose() * r_meas))
}

/// Short-form covariance update `(I−KC) P` for a scalar measurement.
pub fn short_update(
    p_pred: &DMatrix<f64>,
    gain: &DVector<f64>,
    c: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = p_pred.nrows();
    symmetrize(&((DMatrix::identity(n, n) - gain * c) * p_pred))
}

/// Everything one state-filter step produces, kept for the supervisor:
/// prior and posterior beliefs, the innovation and gain that formed them,
/// and the Jacobians evaluated along the way.
#[derive(Debug, Clone)]
pub struct StateStepResult {
    pub prior: GaussianEstimate,
    pub posterior: GaussianEstimate,
    /// Voltage innovation `E = y − h(x̂_pred, θ̂, I)`, volts.
    pub innovation: f64,
    /// Predicted terminal voltage before the update, volts.
    pub predicted_voltage: f64,
    /// Kalman gain column (5×1).
    pub gain: DVector<f64>,
    /// Scalar innovation covariance `C P Cᵀ + R`.
    pub innovation_cov: f64,
    /// State Jacobian used for covariance propagation.
    pub jacobian_a: DMatrix<f64>,
    /// Measurement Jacobian at the predicted state (1×5).
    pub jacobian_c: DMatrix<f64>,
}

/// One predict/update cycle of the state filter at fixed parameters.
pub fn state_ekf_step(
    previous: &GaussianEstimate,
    theta: &ThetaVector,
    params: &CellParameters,
    current_a: f64,
    measured_v: f64,
    noise: &NoiseConfig,
    form: CovarianceForm,
) -> Result<StateStepResult, FilterError> {
    let x_prev = ElectrochemicalState::from_vector(&previous.mean);
    let x_pred = battery::step_state(&x_prev, theta, params, current_a)?;
    let a = battery::jacobian_a_analytic(params);
    let p_pred = predict_covariance(&a, &previous.cov, &noise.q_state);
    let prior = GaussianEstimate::new(x_pred.to_vector(), p_pred);

    let c = battery::jacobian_c(&x_pred, theta, params, current_a)?;
    let predicted_voltage = battery::terminal_voltage(&x_pred, theta, params, current_a)?;
    let innovation = measured_v - predicted_voltage;

    let (gain, innovation_cov) = kalman_gain(&prior.cov, &c, noise.r_meas)?;
    let mean = &prior.mean + &gain * innovation;
    let cov = match form {
        CovarianceForm::Joseph => joseph_update(&prior.cov, &gain, &c, noise.r_meas),
        CovarianceForm::Short => short_update(&prior.cov, &gain, &c),
    };
    let posterior = GaussianEstimate::new(mean, cov);
    if !posterior.is_finite() {
        return Err(FilterError::NonFiniteFilterState);
    }

    Ok(StateStepResult {
        prior,
        posterior,
        innovation,
        predicted_voltage,
        gain,
        innovation_cov,
        jacobian_a: a,
        jacobian_c: c,
    })
}

/// Everything one parameter-filter step produces.
#[derive(Debug, Clone)]
pub struct ParamStepResult {
    pub posterior: GaussianEstimate,
    /// Post-update voltage residual `r = y − h(x̂_post, θ̂_prior, I)`, volts.
    pub residual: f64,
    /// Parameter gain column (5×1).
    pub gain: DVector<f64>,
    /// True when a physical-range clamp adjusted the updated mean.
    pub clamped: bool,
}

/// Projects a raw parameter mean into the physical ranges. A small
/// overshoot is clamped quietly (`true` in the result flags it); a move
/// beyond half the raw magnitude is rejected as divergence.
pub fn clamp_parameters(raw: &DVector<f64>) -> Result<(DVector<f64>, bool), FilterError> {
    assert_eq!(raw.len(), 5, "parameter vector has five entries");
    let mut out = raw.clone();
    let mut clamped = false;
    for i in 0..5 {
        let (lo, hi) = THETA_BOUNDS[i];
        let v = raw[i];
        if !v.is_finite() {
            return Err(FilterError::NonFiniteFilterState);
        }
        let projected = v.clamp(lo, hi);
        if projected != v {
            if (projected - v).abs() > CLAMP_REJECT_FRACTION * v.abs() {
                return Err(FilterError::ThetaOutOfRange {
                    field: THETA_FIELDS[i],
                    raw: v,
                    clamped: projected,
                });
            }
            out[i] = projected;
            clamped = true;
        }
    }
    Ok((out, clamped))
}

/// One random-walk predict/update cycle of the parameter filter, holding
/// the freshly updated state fixed. The updated mean is clamped into the
/// physical parameter ranges.
pub fn param_ekf_step(
    previous: &GaussianEstimate,
    state_post: &ElectrochemicalState,
    params: &CellParameters,
    current_a: f64,
    measured_v: f64,
    noise: &NoiseConfig,
) -> Result<ParamStepResult, FilterError> {
    let p_pred = symmetrize(&(&previous.cov + &noise.q_theta));
    let theta = ThetaVector::from_vector(&previous.mean);

    let c_theta = battery::jacobian_c_theta(state_post, &theta, params, current_a)?;
    let predicted_voltage = battery::terminal_voltage(state_post, &theta, params, current_a)?;
    let residual = measured_v - predicted_voltage;

    let (gain, _s) = kalman_gain(&p_pred, &c_theta, noise.r_meas)?;
    let raw_mean = &previous.mean + &gain * residual;
    let (mean, clamped) = clamp_parameters(&raw_mean)?;
    let cov = joseph_update(&p_pred, &gain, &c_theta, noise.r_meas);

    let posterior = GaussianEstimate::new(mean, cov);
    if !posterior.is_finite() {
        return Err(FilterError::NonFiniteFilterState);
    }
    Ok(ParamStepResult { posterior, residual, gain, clamped })
}
