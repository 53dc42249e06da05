//! Gated dual-filter supervision.
//!
//! The supervisor couples the state and parameter filters and decides,
//! step by step, whether the parameter filter is allowed to learn. The
//! decision comes from a quadratic error certificate: a constant matrix
//! `P` solving the discrete Lyapunov equation `AᵀPA − P = −Q` for the
//! (possibly damped) state Jacobian yields constants `α, β > 0` such that
//! along the error dynamics `z_{k+1} = A z_k + w_k`,
//!
//! ```text
//! ΔV ≤ −α‖z‖² + β‖w‖²,   V(z) = zᵀPz,
//! α = λ_min(Q) − ε‖AᵀPA‖,   β = (1 + 1/ε)‖P‖.
//! ```
//!
//! Whenever the voltage innovation is small enough to be explained by the
//! residual state error and process disturbance consistent with that
//! certificate, adapting the parameters is safe; larger innovations are
//! treated as transient state error and the parameter belief is frozen
//! bit for bit until the state filter has absorbed them.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::battery::{CellParameters, ElectrochemicalState, InvalidParameter, ThetaVector};
use crate::filters::{
    self, CovarianceForm, FilterError, GaussianEstimate, NoiseConfig, StateStepResult,
};
use crate::numerics::{self, NumericsError};

/// Relative damping applied to a state Jacobian whose spectral radius
/// reaches the Lyapunov solvability boundary.
pub const DEFAULT_KAPPA: f64 = 1.0e-3;
/// Steps between refreshes of the stability constants.
pub const DEFAULT_RECOMPUTE_EVERY: usize = 100;
/// Spectral radii at or above this trigger damping; matches the margin
/// the Lyapunov solver itself enforces.
pub const DAMPING_TRIGGER: f64 = 1.0 - 1.0e-9;
/// Gain norms below this make the dead-zone threshold meaningless; the
/// gate is left open instead.
pub const ZERO_GAIN_NORM: f64 = 1.0e-15;
/// Young-inequality weight bounds.
const EPSILON_FLOOR: f64 = 1.0e-6;
const EPSILON_CAP: f64 = 1.0e6;

#[derive(Debug, Error)]
pub enum SupervisorError {
    #[error(transparent)]
    Parameters(#[from] InvalidParameter),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("stability analysis failed: {0}")]
    Numerics(#[from] NumericsError),
    /// The certificate degenerated: no positive `α` exists for the
    /// supplied dynamics and process noise.
    #[error("no positive decrease rate exists for these dynamics")]
    DegenerateCertificate,
    /// The innovation stayed above the divergence level for the
    /// configured number of consecutive steps.
    #[error("innovation exceeded the divergence level for {consecutive} consecutive steps at step {step}")]
    Divergence { step: usize, consecutive: usize },
}

/// Constants of the quadratic decrease certificate, kept alongside the
/// session and exported with run metadata.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityConstants {
    /// Solution of `A_stabᵀ P A_stab − P = −Q`.
    pub p_lyap: DMatrix<f64>,
    /// The dynamics matrix the certificate was built for (damped when
    /// the raw Jacobian sits on the unit circle).
    pub a_stab: DMatrix<f64>,
    /// Spectral radius of the raw, undamped Jacobian.
    pub rho_raw: f64,
    /// True when damping was applied before solving.
    pub damped: bool,
    /// Young-inequality weight.
    pub epsilon: f64,
    /// Guaranteed quadratic decrease rate (positive).
    pub alpha: f64,
    /// Disturbance amplification bound (positive).
    pub beta: f64,
    /// Smallest eigenvalue of the certificate's `Q`.
    pub lambda_min_q: f64,
    /// Trace of the certificate's `Q`.
    pub trace_q: f64,
    /// `‖I + P‖₂`, the normalizer of the dead-zone error term.
    pub norm_i_plus_p: f64,
    /// `‖A_stabᵀ P A_stab‖₂`.
    pub norm_atpa: f64,
}

/// Builds the decrease certificate for dynamics `a` and process noise
/// `q`. A spectral radius at or beyond the solvability margin is damped
/// by `kappa` first; `ε` maximizes the guaranteed rate `α = λ_min(Q)/2`
/// and is nudged into `[1e−6, 1e6]` only when that keeps `α` positive.
pub fn compute_stability_constants(
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
    kappa: f64,
) -> Result<StabilityConstants, SupervisorError> {
    assert!(kappa > 0.0 && kappa < 1.0, "damping strength must lie in (0, 1)");
    let rho_raw = numerics::spectral_radius(a)?;
    let (a_stab, damped) = if rho_raw >= DAMPING_TRIGGER {
        (a * ((1.0 - kappa) / rho_raw.max(1.0)), true)
    } else {
        (a.clone(), false)
    };

    let p_lyap = numerics::solve_discrete_lyapunov(&a_stab, q)?;
    let lambda_min_q = numerics::lambda_min_symmetric(q)?;
    let atpa = a_stab.transpose() * &p_lyap * &a_stab;
    let norm_atpa = numerics::two_norm(&atpa)?;
    let p_norm = numerics::two_norm(&p_lyap)?;
    let n = a.nrows();
    let norm_i_plus_p = numerics::two_norm(&(DMatrix::identity(n, n) + &p_lyap))?;

    let epsilon = if norm_atpa == 0.0 {
        // Degenerate dynamics: any weight certifies; pin the floor.
        EPSILON_FLOOR
    } else {
        let raw = lambda_min_q / (2.0 * norm_atpa);
        let capped = raw.min(EPSILON_CAP);
        if capped < EPSILON_FLOOR && lambda_min_q - EPSILON_FLOOR * norm_atpa > 0.0 {
            EPSILON_FLOOR
        } else {
            capped
        }
    };
    let alpha = lambda_min_q - epsilon * norm_atpa;
    let beta = (1.0 + 1.0 / epsilon) * p_norm;
    if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(SupervisorError::DegenerateCertificate);
    }

    Ok(StabilityConstants {
        p_lyap,
        a_stab,
        rho_raw,
        damped,
        epsilon,
        alpha,
        beta,
        lambda_min_q,
        trace_q: q.trace(),
        norm_i_plus_p,
        norm_atpa,
    })
}

/// Dead-zone threshold for one step:
///
/// ```text
/// δ = (√(λ_min(Q)/‖I+P‖) · √trace(P_post) + √trace(Q)) / ‖K‖₂
/// ```
///
/// The numerator bounds the innovation magnitude explainable by the
/// certified residual state error plus one step of process disturbance;
/// dividing by the gain norm converts it to the voltage scale the
/// innovation lives on. A vanishing gain (below [`ZERO_GAIN_NORM`])
/// yields `+∞`: no update can destabilize anything through a dead gain,
/// so the gate stays open.
pub fn innovation_threshold(
    constants: &StabilityConstants,
    state_cov_trace: f64,
    gain_norm: f64,
) -> f64 {
    if gain_norm < ZERO_GAIN_NORM {
        return f64::INFINITY;
    }
    let error_term =
        (constants.lambda_min_q / constants.norm_i_plus_p).sqrt() * state_cov_trace.max(0.0).sqrt();
    let noise_term = constants.trace_q.sqrt();
    (error_term + noise_term) / gain_norm
}

/// Gate law: the parameter filter may adapt only while the innovation is
/// strictly inside the dead zone.
pub fn gate_open(innovation: f64, delta: f64) -> bool {
    innovation.abs() < delta
}

/// Everything one supervised step produces. Posterior beliefs are copied
/// in full (parameter covariance included) so freeze behavior can be
/// audited bit for bit from the records alone.
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// Zero-based step index.
    pub step: usize,
    /// End-of-interval time, seconds.
    pub time_s: f64,
    pub current_a: f64,
    pub measured_v: f64,
    /// Voltage predicted before the state update.
    pub predicted_v: f64,
    /// Innovation `E = measured − predicted`, volts.
    pub innovation: f64,
    /// Dead-zone threshold δ for this step, volts.
    pub delta: f64,
    /// 1 when the parameter filter updated, 0 when frozen.
    pub sigma: u8,
    /// Error term of the threshold numerator.
    pub delta_error_term: f64,
    /// Disturbance term of the threshold numerator.
    pub delta_noise_term: f64,
    /// Euclidean norm of the state-filter gain.
    pub gain_norm: f64,
    /// Posterior state mean `[soc, dx_sp, dx_sn, dc1, dc2]`.
    pub state_mean: DVector<f64>,
    /// Trace of the posterior state covariance.
    pub state_cov_trace: f64,
    /// Parameter mean after this step `[d_p, d_n, q_all, x_sp0, x_sn0]`.
    pub theta_mean: DVector<f64>,
    /// Parameter covariance after this step.
    pub theta_cov: DMatrix<f64>,
    /// Post-update voltage residual seen by the parameter filter.
    pub residual: f64,
    /// True when the parameter update had to be projected back into its
    /// physical range.
    pub theta_clamped: bool,
}

/// Session knobs. `Default` gives the Joseph covariance form, the stock
/// damping and refresh cadence, the state process noise as the
/// certificate's `Q`, and a 1 V / 50-step divergence trip.
#[derive(Debug, Clone)]
pub struct SessionSettings {
    pub covariance_form: CovarianceForm,
    /// Damping strength applied to marginal dynamics.
    pub kappa: f64,
    /// Steps between stability-constant refreshes.
    pub recompute_every: usize,
    /// Override for the certificate's `Q`; `None` uses the state process
    /// noise.
    pub lyapunov_q: Option<DMatrix<f64>>,
    /// Innovation magnitude treated as divergent, volts.
    pub divergence_volts: f64,
    /// Consecutive divergent steps before the session trips.
    pub divergence_steps: usize,
}

impl Default for SessionSettings {
    fn default() -> Self {
        Self {
            covariance_form: CovarianceForm::Joseph,
            kappa: DEFAULT_KAPPA,
            recompute_every: DEFAULT_RECOMPUTE_EVERY,
            lyapunov_q: None,
            divergence_volts: 1.0,
            divergence_steps: 50,
        }
    }
}

/// A running dual-filter estimation session over one cell.
pub struct Session {
    params: CellParameters,
    noise: NoiseConfig,
    settings: SessionSettings,
    state: GaussianEstimate,
    theta: GaussianEstimate,
    constants: StabilityConstants,
    step_index: usize,
    freeze_count: usize,
    consecutive_divergent: usize,
    tripped: bool,
}

impl Session {
    /// Validates the cell description and both initial beliefs, then
    /// builds the decrease certificate from the model's state Jacobian.
    pub fn new(
        params: CellParameters,
        noise: NoiseConfig,
        initial_state: GaussianEstimate,
        initial_theta: GaussianEstimate,
        settings: SessionSettings,
    ) -> Result<Self, SupervisorError> {
        params.validate()?;
        assert_eq!(initial_state.mean.len(), 5, "state belief has five entries");
        assert_eq!(initial_theta.mean.len(), 5, "parameter belief has five entries");
        ThetaVector::from_vector(&initial_theta.mean).validate()?;
        let a = crate::battery::jacobian_a_analytic(&params);
        let q = settings.lyapunov_q.clone().unwrap_or_else(|| noise.q_state.clone());
        let constants = compute_stability_constants(&a, &q, settings.kappa)?;
        Ok(Self {
            params,
            noise,
            settings,
            state: initial_state,
            theta: initial_theta,
            constants,
            step_index: 0,
            freeze_count: 0,
            consecutive_divergent: 0,
            tripped: false,
        })
    }

    pub fn constants(&self) -> &StabilityConstants {
        &self.constants
    }

    pub fn state_estimate(&self) -> &GaussianEstimate {
        &self.state
    }

    pub fn theta_estimate(&self) -> &GaussianEstimate {
        &self.theta
    }

    pub fn freeze_count(&self) -> usize {
        self.freeze_count
    }

    pub fn steps_taken(&self) -> usize {
        self.step_index
    }

    /// One gated step: the parameter filter runs only while the
    /// innovation sits strictly inside the dead zone.
    pub fn gated_step(&mut self, current_a: f64, measured_v: f64) -> Result<StepRecord, SupervisorError> {
        self.step_inner(current_a, measured_v, true)
    }

    /// One unguarded step: the parameter filter always runs. The
    /// threshold is still evaluated and recorded for comparison, but it
    /// never freezes anything.
    pub fn unguarded_step(
        &mut self,
        current_a: f64,
        measured_v: f64,
    ) -> Result<StepRecord, SupervisorError> {
        self.step_inner(current_a, measured_v, false)
    }

    fn refresh_constants(&mut self, jacobian_a: &DMatrix<f64>) -> Result<(), SupervisorError> {
        let q = self
            .settings
            .lyapunov_q
            .clone()
            .unwrap_or_else(|| self.noise.q_state.clone());
        self.constants = compute_stability_constants(jacobian_a, &q, self.settings.kappa)?;
        Ok(())
    }

    fn step_inner(
        &mut self,
        current_a: f64,
        measured_v: f64,
        gated: bool,
    ) -> Result<StepRecord, SupervisorError> {
        if self.tripped {
            return Err(SupervisorError::Divergence {
                step: self.step_index,
                consecutive: self.consecutive_divergent,
            });
        }
        let theta_vec = ThetaVector::from_vector(&self.theta.mean);
        let step: StateStepResult = filters::state_ekf_step(
            &self.state,
            &theta_vec,
            &self.params,
            current_a,
            measured_v,
            &self.noise,
            self.settings.covariance_form,
        )?;

        if self.step_index > 0 && self.step_index % self.settings.recompute_every == 0 {
            self.refresh_constants(&step.jacobian_a)?;
        }

        let state_cov_trace = step.posterior.cov.trace();
        let gain_norm = step.gain.norm();
        let delta = innovation_threshold(&self.constants, state_cov_trace, gain_norm);
        if delta.is_infinite() {
            warn!(
                "step {}: state gain norm {:.3e} below {:.0e}; dead zone disabled for this step",
                self.step_index, gain_norm, ZERO_GAIN_NORM
            );
        }
        let open = gate_open(step.innovation, delta);
        let sigma: u8 = if gated {
            open as u8
        } else {
            1
        };

        let x_post = ElectrochemicalState::from_vector(&step.posterior.mean);
        let (residual, theta_clamped) = if sigma == 1 {
            let p = filters::param_ekf_step(
                &self.theta,
                &x_post,
                &self.params,
                current_a,
                measured_v,
                &self.noise,
            )?;
            let clamped = p.clamped;
            let residual = p.residual;
            self.theta = p.posterior;
            (residual, clamped)
        } else {
            self.freeze_count += 1;
            // The parameter belief is untouched; the residual is still
            // evaluated (a pure function of existing estimates) so the
            // record stays informative.
            let u = crate::battery::terminal_voltage(&x_post, &theta_vec, &self.params, current_a)
                .map_err(FilterError::from)?;
            (measured_v - u, false)
        };

        self.state = step.posterior.clone();

        if step.innovation.abs() > self.settings.divergence_volts {
            self.consecutive_divergent += 1;
        } else {
            self.consecutive_divergent = 0;
        }
        let record = StepRecord {
            step: self.step_index,
            time_s: (self.step_index as f64 + 1.0) * self.params.dt,
            current_a,
            measured_v,
            predicted_v: step.predicted_voltage,
            innovation: step.innovation,
            delta,
            sigma,
            delta_error_term: (self.constants.lambda_min_q / self.constants.norm_i_plus_p).sqrt()
                * state_cov_trace.max(0.0).sqrt(),
            delta_noise_term: self.constants.trace_q.sqrt(),
            gain_norm,
            state_mean: self.state.mean.clone(),
            state_cov_trace,
            theta_mean: self.theta.mean.clone(),
            theta_cov: self.theta.cov.clone(),
            residual,
            theta_clamped,
        };
        self.step_index += 1;
        if self.consecutive_divergent >= self.settings.divergence_steps {
            self.tripped = true;
            return Err(SupervisorError::Divergence {
                step: record.step,
                consecutive: self.consecutive_divergent,
            });
        }
        Ok(record)
    }
}

/// Result of auditing a sequence of estimation errors against the
/// certificate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DescentAudit {
    /// Steps where the disturbance was small enough for the certificate
    /// to demand strict decrease.
    pub checked: usize,
    /// Checked steps where the decrease inequality failed beyond rounding.
    pub violations: usize,
    /// Largest observed excess over the certified bound (positive means
    /// violation).
    pub max_excess: f64,
}

/// Audits estimation errors `z_k` against the decrease certificate.
/// The per-step disturbance is reconstructed as `w_k = z_{k+1} − A_stab
/// z_k`; wherever `‖w‖² < (α/β)·‖z‖²` the certificate demands
///
/// ```text
/// V(z_{k+1}) − V(z_k) ≤ −α‖z‖² + β‖w‖²
/// ```
///
/// up to a rounding allowance scaled to the magnitudes involved.
pub fn descent_audit(constants: &StabilityConstants, errors: &[DVector<f64>]) -> DescentAudit {
    let p = &constants.p_lyap;
    let a = &constants.a_stab;
    let mut checked = 0;
    let mut violations = 0;
    let mut max_excess = f64::NEG_INFINITY;
    for pair in errors.windows(2) {
        let z = &pair[0];
        let z_next = &pair[1];
        let w = z_next - a * z;
        let z2 = z.norm_squared();
        let w2 = w.norm_squared();
        if w2 >= constants.alpha / constants.beta * z2 {
            continue;
        }
        checked += 1;
        let v_now = (z.transpose() * p * z)[(0, 0)];
        let v_next = (z_next.transpose() * p * z_next)[(0, 0)];
        let bound = -constants.alpha * z2 + constants.beta * w2;
        let slack = 1.0e-12 * v_now.abs().max(v_next.abs()).max(1.0);
        let excess = (v_next - v_now) - bound;
        if excess > max_excess {
            max_excess = excess;
        }
        if excess > slack {
            violations += 1;
        }
    }
    if !max_excess.is_finite() {
        max_excess = 0.0;
    }
    DescentAudit { checked, violations, max_excess }
}
