//! Reduced-order electrochemical cell model.
//!
//! The cell is described by five states — state of charge, one surface
//! stoichiometry deviation per electrode, and one electrolyte concentration
//! deviation per collector — plus five slowly varying physical parameters
//! (solid-phase coefficients, total capacity, and the stoichiometry
//! anchors). Terminal voltage combines the open-circuit potentials of the
//! two electrodes with concentration and reaction overpotentials and an
//! ohmic drop.
//!
//! Sign conventions: positive current discharges the cell, raises the
//! positive-electrode surface stoichiometry, and lowers the negative one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, NumericsError};

/// Ideal gas constant, J·mol⁻¹·K⁻¹.
pub const GAS_CONSTANT: f64 = 8.314;
/// Faraday constant, C·mol⁻¹.
pub const FARADAY: f64 = 96485.0;

/// Surface stoichiometries are clamped into this band before entering
/// square roots and open-circuit-voltage lookups.
pub const SURFACE_CLAMP_MIN: f64 = 0.001;
pub const SURFACE_CLAMP_MAX: f64 = 0.999;
/// Beyond this pre-clamp band the state is considered physically broken.
const SURFACE_HARD_MIN: f64 = -0.05;
const SURFACE_HARD_MAX: f64 = 1.05;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    /// A state recursion or voltage evaluation produced NaN or infinity.
    #[error("model evaluation produced a non-finite value")]
    NonFiniteState,
    /// The electrolyte concentration argument of the logarithm fell to or
    /// below zero.
    #[error("concentration overpotential log argument is out of domain")]
    LogDomain,
    /// A surface stoichiometry left the physically meaningful band before
    /// clamping.
    #[error("surface stoichiometry {value:.4} is outside the physical band")]
    SurfaceSaturation { value: f64 },
    /// A finite-difference probe failed while building a Jacobian.
    #[error("non-finite evaluation while differencing the model")]
    NonFiniteEvaluation,
}

/// A parameter failed validation; `field` names the offender.
#[derive(Debug, Error, PartialEq)]
#[error("invalid parameter `{field}`: {reason}")]
pub struct InvalidParameter {
    pub field: &'static str,
    pub reason: String,
}

/// Piecewise-linear open-circuit-voltage curve over electrode
/// stoichiometry, with flat extrapolation outside the breakpoint range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcvCurve {
    /// Strictly increasing stoichiometry breakpoints (at least four).
    pub breakpoints: Vec<f64>,
    /// Voltage at each breakpoint.
    pub voltages: Vec<f64>,
}

impl OcvCurve {
    pub fn validate(&self, field: &'static str) -> Result<(), InvalidParameter> {
        let err = |reason: String| Err(InvalidParameter { field, reason });
        if self.breakpoints.len() < 4 {
            return err(format!("needs at least 4 breakpoints, got {}", self.breakpoints.len()));
        }
        if self.breakpoints.len() != self.voltages.len() {
            return err(format!(
                "breakpoint/voltage length mismatch: {} vs {}",
                self.breakpoints.len(),
                self.voltages.len()
            ));
        }
        if self.breakpoints.iter().chain(self.voltages.iter()).any(|v| !v.is_finite()) {
            return err("entries must be finite".into());
        }
        if self.breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return err("breakpoints must be strictly increasing".into());
        }
        Ok(())
    }

    /// Linear interpolation with flat extrapolation beyond either end.
    pub fn eval(&self, x: f64) -> f64 {
        let bp = &self.breakpoints;
        let v = &self.voltages;
        if x <= bp[0] {
            return v[0];
        }
        if x >= bp[bp.len() - 1] {
            return v[v.len() - 1];
        }
        // Index of the first breakpoint strictly above x; x lies in
        // [bp[i-1], bp[i]).
        let i = bp.partition_point(|&b| b <= x);
        let t = (x - bp[i - 1]) / (bp[i] - bp[i - 1]);
        v[i - 1] + t * (v[i] - v[i - 1])
    }
}

/// Static cell description: geometry-free lumped constants, the sampling
/// period, and the two open-circuit-voltage tables. The five entries that
/// the parameter filter estimates (`d_p`, `d_n`, `q_all`, `x_sp0`,
/// `x_sn0`) also appear here as the nominal values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParameters {
    /// Total capacity, coulombs.
    pub q_all: f64,
    /// Positive-electrode diffusion time constant, seconds.
    pub tau_sp: f64,
    /// Negative-electrode diffusion time constant, seconds.
    pub tau_sn: f64,
    /// Electrolyte relaxation time constant, seconds.
    pub tau_e: f64,
    /// Cation transference number, dimensionless in (0, 1).
    pub t_plus: f64,
    /// Rest electrolyte concentration, mol·m⁻³.
    pub c0: f64,
    /// Cell temperature, kelvin.
    pub temperature: f64,
    /// Ohmic resistance, ohms.
    pub r_ohm: f64,
    /// Nominal positive-electrode charge-balance coefficient
    /// (stoichiometry span over a full discharge).
    pub d_p: f64,
    /// Nominal negative-electrode charge-balance coefficient.
    pub d_n: f64,
    /// Positive-electrode stoichiometry at full charge.
    pub x_sp0: f64,
    /// Negative-electrode stoichiometry at full charge.
    pub x_sn0: f64,
    /// Peukert exponent, ≥ 1.
    pub peukert_n: f64,
    /// Reference C-rate for the Peukert law, 1/h.
    pub c_ref: f64,
    /// Surface-deviation input gain, positive electrode, 1/A.
    pub g_p: f64,
    /// Surface-deviation input gain, negative electrode, 1/A.
    pub g_n: f64,
    /// Electrolyte forcing coefficient toward collector a, mol·m⁻³/A.
    pub p_con_a: f64,
    /// Electrolyte forcing coefficient toward collector b, mol·m⁻³/A.
    pub p_con_b: f64,
    /// Positive-electrode kinetic constant, dimensionless.
    pub v_p: f64,
    /// Negative-electrode kinetic constant, dimensionless.
    pub v_n: f64,
    /// Positive-electrode reaction coefficient, dimensionless.
    pub p_rxn_p: f64,
    /// Negative-electrode reaction coefficient, dimensionless.
    pub p_rxn_n: f64,
    /// Sampling period, seconds; must stay below every time constant.
    pub dt: f64,
    /// Positive-electrode open-circuit voltage over stoichiometry.
    pub ocv_p: OcvCurve,
    /// Negative-electrode open-circuit voltage over stoichiometry.
    pub ocv_n: OcvCurve,
}

impl CellParameters {
    /// Amperes corresponding to a 1C discharge at the reference rate.
    pub fn one_c_amps(&self) -> f64 {
        self.c_ref * self.q_all / 3600.0
    }

    pub fn validate(&self) -> Result<(), InvalidParameter> {
        fn positive(field: &'static str, v: f64) -> Result<(), InvalidParameter> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(InvalidParameter { field, reason: format!("must be finite and > 0, got {v}") })
            }
        }
        fn unit_open(field: &'static str, v: f64) -> Result<(), InvalidParameter> {
            if v.is_finite() && v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(InvalidParameter { field, reason: format!("must lie in (0, 1), got {v}") })
            }
        }
        positive("q_all", self.q_all)?;
        positive("tau_sp", self.tau_sp)?;
        positive("tau_sn", self.tau_sn)?;
        positive("tau_e", self.tau_e)?;
        unit_open("t_plus", self.t_plus)?;
        positive("c0", self.c0)?;
        positive("temperature", self.temperature)?;
        if !self.r_ohm.is_finite() || self.r_ohm < 0.0 {
            return Err(InvalidParameter {
                field: "r_ohm",
                reason: format!("must be finite and >= 0, got {}", self.r_ohm),
            });
        }
        positive("d_p", self.d_p)?;
        positive("d_n", self.d_n)?;
        unit_open("x_sp0", self.x_sp0)?;
        unit_open("x_sn0", self.x_sn0)?;
        if !self.peukert_n.is_finite() || self.peukert_n < 1.0 {
            return Err(InvalidParameter {
                field: "peukert_n",
                reason: format!("must be >= 1, got {}", self.peukert_n),
            });
        }
        positive("c_ref", self.c_ref)?;
        for (field, v) in [("g_p", self.g_p), ("g_n", self.g_n)] {
            if !v.is_finite() {
                return Err(InvalidParameter { field, reason: "must be finite".into() });
            }
        }
        positive("p_con_a", self.p_con_a)?;
        positive("p_con_b", self.p_con_b)?;
        positive("v_p", self.v_p)?;
        positive("v_n", self.v_n)?;
        positive("p_rxn_p", self.p_rxn_p)?;
        positive("p_rxn_n", self.p_rxn_n)?;
        positive("dt", self.dt)?;
        let tau_min = self.tau_sp.min(self.tau_sn).min(self.tau_e);
        if self.dt >= tau_min {
            return Err(InvalidParameter {
                field: "dt",
                reason: format!(
                    "sampling period {} must stay below the fastest time constant {}",
                    self.dt, tau_min
                ),
            });
        }
        self.ocv_p.validate("ocv_p")?;
        self.ocv_n.validate("ocv_n")?;
        Ok(())
    }
}

/// The five estimated physical parameters, in filter ordering
/// `[d_p, d_n, q_all, x_sp0, x_sn0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub d_p: f64,
    pub d_n: f64,
    pub q_all: f64,
    pub x_sp0: f64,
    pub x_sn0: f64,
}

impl ThetaVector {
    /// Nominal parameter vector copied out of the static cell description.
    pub fn nominal(params: &CellParameters) -> Self {
        Self {
            d_p: params.d_p,
            d_n: params.d_n,
            q_all: params.q_all,
            x_sp0: params.x_sp0,
            x_sn0: params.x_sn0,
        }
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_row_slice(&[self.d_p, self.d_n, self.q_all, self.x_sp0, self.x_sn0])
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        assert_eq!(v.len(), 5, "parameter vector has five entries");
        Self { d_p: v[0], d_n: v[1], q_all: v[2], x_sp0: v[3], x_sn0: v[4] }
    }

    pub fn validate(&self) -> Result<(), InvalidParameter> {
        let entries = [
            ("d_p", self.d_p, false),
            ("d_n", self.d_n, false),
            ("q_all", self.q_all, false),
            ("x_sp0", self.x_sp0, true),
            ("x_sn0", self.x_sn0, true),
        ];
        for (field, v, unit) in entries {
            if !v.is_finite() || v <= 0.0 || (unit && v >= 1.0) {
                return Err(InvalidParameter {
                    field,
                    reason: format!(
                        "must be finite and {} got {v}",
                        if unit { "in (0, 1)," } else { "> 0," }
                    ),
                });
            }
        }
        Ok(())
    }
}

/// The five model states, in filter ordering
/// `[soc, dx_sp, dx_sn, dc1, dc2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElectrochemicalState {
    /// State of charge, dimensionless.
    pub soc: f64,
    /// Positive-electrode surface stoichiometry deviation.
    pub dx_sp: f64,
    /// Negative-electrode surface stoichiometry deviation.
    pub dx_sn: f64,
    /// Electrolyte concentration deviation at collector a, mol·m⁻³.
    pub dc1: f64,
    /// Electrolyte concentration deviation at collector b, mol·m⁻³.
    pub dc2: f64,
}

impl ElectrochemicalState {
    /// Equilibrium state at a given state of charge (all deviations zero).
    pub fn rest(soc: f64) -> Self {
        Self { soc, dx_sp: 0.0, dx_sn: 0.0, dc1: 0.0, dc2: 0.0 }
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_row_slice(&[self.soc, self.dx_sp, self.dx_sn, self.dc1, self.dc2])
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        assert_eq!(v.len(), 5, "state vector has five entries");
        Self { soc: v[0], dx_sp: v[1], dx_sn: v[2], dc1: v[3], dc2: v[4] }
    }

    pub fn is_finite(&self) -> bool {
        [self.soc, self.dx_sp, self.dx_sn, self.dc1, self.dc2].iter().all(|v| v.is_finite())
    }
}

/// One sampling-period step of the state recursion under constant current.
pub fn step_state(
    state: &ElectrochemicalState,
    theta: &ThetaVector,
    params: &CellParameters,
    current_a: f64,
) -> Result<ElectrochemicalState, ModelError> {
    let dt = params.dt;
    let a_p = (-dt / params.tau_sp).exp();
    let a_n = (-dt / params.tau_sn).exp();
    let ke = dt / params.tau_e;
    let next = ElectrochemicalState {
        soc: state.soc - current_a * dt / theta.q_all,
        dx_sp: a_p * state.dx_sp + params.g_p * (1.0 - a_p) * current_a,
        dx_sn: a_n * state.dx_sn + params.g_n * (1.0 - a_n) * current_a,
        dc1: state.dc1 + ke * (params.p_con_a * current_a - state.dc1),
        dc2: state.dc2 + ke * (params.p_con_b * current_a - state.dc2),
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(ModelError::NonFiniteState)
    }
}

/// Bulk (averaged) stoichiometries implied by the state of charge.
///
/// The charge-balance recursion for the averaged stoichiometries advances
/// by `d · I · dt / q_all` per step — the same increment that moves the
/// state of charge — so its exact integral from the full-charge anchor is
/// available in closed form and no hidden accumulator state is needed.
pub fn averaged_stoichiometries(soc: f64, theta: &ThetaVector) -> (f64, f64) {
    let x_sp_avg = theta.x_sp0 + theta.d_p * (1.0 - soc);
    let x_sn_avg = theta.x_sn0 - theta.d_n * (1.0 - soc);
    (x_sp_avg, x_sn_avg)
}

/// Surface stoichiometries before clamping: bulk value plus the diffusion
/// deviation state.
pub fn surface_stoichiometries(
    state: &ElectrochemicalState,
    theta: &ThetaVector,
) -> (f64, f64) {
    let (x_sp_avg, x_sn_avg) = averaged_stoichiometries(state.soc, theta);
    (x_sp_avg + state.dx_sp, x_sn_avg + state.dx_sn)
}

/// Clamps a surface stoichiometry into the evaluable band, rejecting
/// values that are broken rather than merely saturated.
fn clamp_surface(x: f64) -> Result<f64, ModelError> {
    if !x.is_finite() || x < SURFACE_HARD_MIN || x > SURFACE_HARD_MAX {
        return Err(ModelError::SurfaceSaturation { value: x });
    }
    Ok(x.clamp(SURFACE_CLAMP_MIN, SURFACE_CLAMP_MAX))
}

/// Rate-dependent usable capacity from the Peukert law:
/// `Q_eff = q_all · (c_ref / C_now)^(n−1)` with the present C-rate clamped
/// below at one hundredth of the reference rate. Zero current returns the
/// rated capacity unchanged.
pub fn effective_capacity(theta: &ThetaVector, params: &CellParameters, current_a: f64) -> f64 {
    if current_a == 0.0 {
        return theta.q_all;
    }
    let c_now = (current_a.abs() * 3600.0 / theta.q_all).max(0.01 * params.c_ref);
    theta.q_all * (params.c_ref / c_now).powf(params.peukert_n - 1.0)
}

/// Concentration overpotential from the electrolyte deviation pair:
/// `(2RT/F)(1 − t₊) · ln((c0 + dc1)/(c0 − dc2))`.
pub fn concentration_overpotential(
    state: &ElectrochemicalState,
    params: &CellParameters,
) -> Result<f64, ModelError> {
    let num = params.c0 + state.dc1;
    let den = params.c0 - state.dc2;
    if num <= 0.0 || den <= 0.0 {
        return Err(ModelError::LogDomain);
    }
    let thermal = 2.0 * GAS_CONSTANT * params.temperature / FARADAY;
    Ok(thermal * (1.0 - params.t_plus) * (num / den).ln())
}

/// Reaction (kinetic) overpotential:
/// `(2RT/F)·[asinh(m_p) + asinh(m_n)]` with per-electrode intensities
/// `m = d · P_rxn · I / (6 · Q_eff · √v · √(1 − x_surf))`.
pub fn reaction_overpotential(
    state: &ElectrochemicalState,
    theta: &ThetaVector,
    params: &CellParameters,
    current_a: f64,
) -> Result<f64, ModelError> {
    let (x_sp_raw, x_sn_raw) = surface_stoichiometries(state, theta);
    let x_sp = clamp_surface(x_sp_raw)?;
    let x_sn = clamp_surface(x_sn_raw)?;
    let q_eff = effective_capacity(theta, params, current_a);
    let m_p = theta.d_p * params.p_rxn_p * current_a
        / (6.0 * q_eff * params.v_p.sqrt() * (1.0 - x_sp).sqrt());
    let m_n = theta.d_n * params.p_rxn_n * current_a
        / (6.0 * q_eff * params.v_n.sqrt() * (1.0 - x_sn).sqrt());
    let thermal = 2.0 * GAS_CONSTANT * params.temperature / FARADAY;
    let eta = thermal * (m_p.asinh() + m_n.asinh());
    if eta.is_finite() {
        Ok(eta)
    } else {
        Err(ModelError::NonFiniteState)
    }
}

/// Terminal voltage under load: electrode open-circuit difference minus
/// the concentration, reaction, and ohmic drops.
pub fn terminal_voltage(
    state: &ElectrochemicalState,
    theta: &ThetaVector,
    params: &CellParameters,
    current_a: f64,
) -> Result<f64, ModelError> {
    let (x_sp_raw, x_sn_raw) = surface_stoichiometries(state, theta);
    let x_sp = clamp_surface(x_sp_raw)?;
    let x_sn = clamp_surface(x_sn_raw)?;
    let eta_con = concentration_overpotential(state, params)?;
    let eta_rxn = reaction_overpotential(state, theta, params, current_a)?;
    let u = params.ocv_p.eval(x_sp) - params.ocv_n.eval(x_sn) - eta_con - eta_rxn
        - params.r_ohm * current_a;
    if u.is_finite() {
        Ok(u)
    } else {
        Err(ModelError::NonFiniteState)
    }
}

/// Analytic state Jacobian of the recursion: the dynamics are linear in
/// the state, so the Jacobian is the constant diagonal
/// `diag(1, e^{−dt/τ_sp}, e^{−dt/τ_sn}, 1−dt/τ_e, 1−dt/τ_e)`.
pub fn jacobian_a_analytic(params: &CellParameters) -> DMatrix<f64> {
    let dt = params.dt;
    DMatrix::from_diagonal(&DVector::from_row_slice(&[
        1.0,
        (-dt / params.tau_sp).exp(),
        (-dt / params.tau_sn).exp(),
        1.0 - dt / params.tau_e,
        1.0 - dt / params.tau_e,
    ]))
}

fn map_fd(err: NumericsError) -> ModelError {
    match err {
        NumericsError::NonFiniteEvaluation => ModelError::NonFiniteEvaluation,
        _ => ModelError::NonFiniteEvaluation,
    }
}

/// Finite-difference state Jacobian; agrees with
/// [`jacobian_a_analytic`] and exists as an independent cross-check.
pub fn jacobian_a_fd(
    state: &ElectrochemicalState,
    theta: &ThetaVector,
    params: &CellParameters,
    current_a: f64,
) -> Result<DMatrix<f64>, ModelError> {
    let f = |x: &DVector<f64>| {
        step_state(&ElectrochemicalState::from_vector(x), theta, params, current_a)
            .ok()
            .map(|s| s.to_vector())
    };
    numerics::numeric_jacobian(f, &state.to_vector(), numerics::DEFAULT_REL_STEP).map_err(map_fd)
}

/// Measurement Jacobian `∂U/∂x` (1×5) by central differences at the given
/// operating point.
pub fn jacobian_c(
    state: &ElectrochemicalState,
    theta: &ThetaVector,
    params: &CellParameters,
    current_a: f64,
) -> Result<DMatrix<f64>, ModelError> {
    let f = |x: &DVector<f64>| {
        terminal_voltage(&ElectrochemicalState::from_vector(x), theta, params, current_a)
            .ok()
            .map(|u| DVector::from_row_slice(&[u]))
    };
    numerics::numeric_jacobian(f, &state.to_vector(), numerics::DEFAULT_REL_STEP).map_err(map_fd)
}

/// Parameter-measurement Jacobian `∂U/∂θ` (1×5) by central differences at
/// a fixed state.
pub fn jacobian_c_theta(
    state: &ElectrochemicalState,
    theta: &ThetaVector,
    params: &CellParameters,
    current_a: f64,
) -> Result<DMatrix<f64>, ModelError> {
    let f = |t: &DVector<f64>| {
        terminal_voltage(state, &ThetaVector::from_vector(t), params, current_a)
            .ok()
            .map(|u| DVector::from_row_slice(&[u]))
    };
    numerics::numeric_jacobian(f, &theta.to_vector(), numerics::DEFAULT_REL_STEP).map_err(map_fd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn nmc_like() -> OcvCurve {
        OcvCurve {
            breakpoints: vec![0.0, 0.08, 0.16, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.93, 1.0],
            voltages: vec![4.30, 4.18, 4.08, 3.98, 3.88, 3.79, 3.70, 3.60, 3.49, 3.36, 3.20, 3.00],
        }
    }

    fn graphite_like() -> OcvCurve {
        OcvCurve {
            breakpoints: vec![0.0, 0.05, 0.10, 0.18, 0.28, 0.40, 0.52, 0.64, 0.76, 0.86, 0.94, 1.0],
            voltages: vec![0.60, 0.44, 0.32, 0.24, 0.19, 0.155, 0.13, 0.115, 0.10, 0.085, 0.07, 0.05],
        }
    }

    fn test_params() -> CellParameters {
        CellParameters {
            q_all: 10440.0,
            tau_sp: 250.0,
            tau_sn: 300.0,
            tau_e: 50.0,
            t_plus: 0.4,
            c0: 1000.0,
            temperature: 298.15,
            r_ohm: 0.03,
            d_p: 0.55,
            d_n: 0.60,
            x_sp0: 0.30,
            x_sn0: 0.85,
            peukert_n: 1.05,
            c_ref: 1.0,
            g_p: 2.0e-4,
            g_n: -2.0e-4,
            p_con_a: 15.0,
            p_con_b: 12.0,
            v_p: 1.0e-4,
            v_n: 1.0e-4,
            p_rxn_p: 35.0,
            p_rxn_n: 30.0,
            dt: 1.0,
            ocv_p: nmc_like(),
            ocv_n: graphite_like(),
        }
    }

    fn theta() -> ThetaVector {
        ThetaVector::nominal(&test_params())
    }

    #[test]
    fn parameters_validate() {
        test_params().validate().unwrap();
        let mut p = test_params();
        p.dt = 75.0; // not below tau_e = 50
        assert_eq!(p.validate().unwrap_err().field, "dt");
        let mut p = test_params();
        p.q_all = -1.0;
        assert_eq!(p.validate().unwrap_err().field, "q_all");
    }

    #[test]
    fn ocv_interpolates_and_extrapolates_flat() {
        let c = nmc_like();
        // Exactly on a breakpoint.
        assert_relative_eq!(c.eval(0.25), 3.98, max_relative = 1e-15);
        // Midway between 0.25 and 0.35.
        assert_relative_eq!(c.eval(0.30), (3.98 + 3.88) / 2.0, max_relative = 1e-14);
        // Flat extrapolation on both sides.
        assert_relative_eq!(c.eval(-0.4), 4.30, max_relative = 1e-15);
        assert_relative_eq!(c.eval(1.7), 3.00, max_relative = 1e-15);
    }

    #[test]
    fn ocv_validation_rejects_bad_tables() {
        let short = OcvCurve { breakpoints: vec![0.0, 0.5, 1.0], voltages: vec![4.0, 3.5, 3.0] };
        assert!(short.validate("ocv_p").is_err());
        let unsorted = OcvCurve {
            breakpoints: vec![0.0, 0.5, 0.4, 1.0],
            voltages: vec![4.0, 3.5, 3.4, 3.0],
        };
        assert!(unsorted.validate("ocv_p").is_err());
    }

    #[test]
    fn step_moves_soc_by_coulomb_increment() {
        // One second at 2.9 A out of 10440 C removes 2.9/10440 of the charge.
        let s0 = ElectrochemicalState::rest(0.8);
        let s1 = step_state(&s0, &theta(), &test_params(), 2.9).unwrap();
        assert_relative_eq!(s1.soc, 0.8 - 2.9 / 10440.0, max_relative = 1e-15);
    }

    #[test]
    fn step_preserves_equilibrium_at_zero_current() {
        let s0 = ElectrochemicalState::rest(0.5);
        let s1 = step_state(&s0, &theta(), &test_params(), 0.0).unwrap();
        assert_eq!(s0, s1);
    }

    #[test]
    fn electrolyte_deviation_approaches_forced_fixed_point() {
        // Under constant current the dc recursion relaxes toward
        // p_con · I; after ten relaxation times it must sit within 1%.
        let params = test_params();
        let mut s = ElectrochemicalState::rest(0.9);
        let steps = (10.0 * params.tau_e / params.dt) as usize;
        for _ in 0..steps {
            s = step_state(&s, &theta(), &params, 2.0).unwrap();
        }
        let target = params.p_con_a * 2.0;
        assert!((s.dc1 - target).abs() / target < 0.01, "dc1 = {}, target = {target}", s.dc1);
        let target_b = params.p_con_b * 2.0;
        assert!((s.dc2 - target_b).abs() / target_b < 0.01);
    }

    #[test]
    fn averaged_stoichiometries_hit_anchors() {
        // Full charge returns the anchor pair.
        let (xp, xn) = averaged_stoichiometries(1.0, &theta());
        assert_relative_eq!(xp, 0.30, max_relative = 1e-15);
        assert_relative_eq!(xn, 0.85, max_relative = 1e-15);
        // Full discharge sweeps the whole span: x_sp0 + d_p.
        let th = ThetaVector { d_p: 0.6, x_sp0: 0.3, ..theta() };
        let (xp, _) = averaged_stoichiometries(0.0, &th);
        assert_relative_eq!(xp, 0.9, max_relative = 1e-15);
    }

    #[test]
    fn averaged_stoichiometry_closed_form_matches_step_recursion() {
        // Iterating the per-step charge-balance increment d_p·I·dt/q_all
        // over an arbitrary profile must land on the closed form within
        // 1e−12.
        let params = test_params();
        let th = theta();
        let profile: Vec<f64> =
            (0..1500).map(|k| 2.9 * (1.0 + 0.5 * ((k % 7) as f64 - 3.0) / 3.0)).collect();
        let mut soc = 1.0;
        let mut x_sp_avg = th.x_sp0;
        let mut x_sn_avg = th.x_sn0;
        for &i in &profile {
            x_sp_avg += th.d_p * i * params.dt / th.q_all;
            x_sn_avg -= th.d_n * i * params.dt / th.q_all;
            soc -= i * params.dt / th.q_all;
        }
        let (xp, xn) = averaged_stoichiometries(soc, &th);
        assert!((xp - x_sp_avg).abs() < 1e-12, "positive drift {}", (xp - x_sp_avg).abs());
        assert!((xn - x_sn_avg).abs() < 1e-12, "negative drift {}", (xn - x_sn_avg).abs());
    }

    #[test]
    fn peukert_capacity_examples() {
        let params = test_params();
        let th = theta();
        // Reference rate: the rated capacity up to rounding in the
        // C-rate round trip.
        let i_ref = params.one_c_amps();
        assert_relative_eq!(effective_capacity(&th, &params, i_ref), th.q_all, max_relative = 1e-12);
        // Twice the reference rate with n = 1.1 shrinks capacity by 2^−0.1.
        let mut p2 = params.clone();
        p2.peukert_n = 1.1;
        let q2 = effective_capacity(&th, &p2, 2.0 * i_ref);
        assert_relative_eq!(q2, 10440.0 * 2.0_f64.powf(-0.1), max_relative = 1e-12);
        assert_relative_eq!(q2, 9740.86, max_relative = 1e-4);
        // Unit exponent disables the rate dependence entirely.
        let mut p1 = params.clone();
        p1.peukert_n = 1.0;
        assert_eq!(effective_capacity(&th, &p1, 7.3), th.q_all);
        // Zero current returns the rated capacity.
        assert_eq!(effective_capacity(&th, &params, 0.0), th.q_all);
    }

    #[test]
    fn concentration_overpotential_matches_hand_evaluation() {
        let params = test_params();
        let s = ElectrochemicalState { dc1: 100.0, dc2: 100.0, ..ElectrochemicalState::rest(0.5) };
        let eta = concentration_overpotential(&s, &params).unwrap();
        let expected =
            2.0 * GAS_CONSTANT * 298.15 / FARADAY * (1.0 - 0.4) * (1100.0_f64 / 900.0).ln();
        assert_relative_eq!(eta, expected, max_relative = 1e-14);
        assert_relative_eq!(eta, 6.19e-3, max_relative = 1e-2);
    }

    #[test]
    fn concentration_overpotential_is_antisymmetric_under_deviation_swap() {
        let params = test_params();
        let s = ElectrochemicalState { dc1: 37.0, dc2: 81.0, ..ElectrochemicalState::rest(0.5) };
        let swapped =
            ElectrochemicalState { dc1: -81.0, dc2: -37.0, ..ElectrochemicalState::rest(0.5) };
        let a = concentration_overpotential(&s, &params).unwrap();
        let b = concentration_overpotential(&swapped, &params).unwrap();
        assert_relative_eq!(a, -b, max_relative = 1e-14);
    }

    #[test]
    fn concentration_overpotential_rejects_depleted_electrolyte() {
        let params = test_params();
        let s = ElectrochemicalState { dc2: 1000.0, ..ElectrochemicalState::rest(0.5) };
        assert_eq!(concentration_overpotential(&s, &params).unwrap_err(), ModelError::LogDomain);
    }

    #[test]
    fn reaction_overpotential_at_unit_intensity() {
        // Constructed so m_p = 1 exactly and m_n vanishes:
        // q_all = 1 C, n = 1 (no rate dependence), v_p = 1,
        // 1 − x_sp_surf = 0.25, d_p·p_rxn_p = 3, I = 1 A
        // → m_p = 3·1/(6·1·1·0.5) = 1.
        let mut params = test_params();
        params.q_all = 1.0;
        params.peukert_n = 1.0;
        params.v_p = 1.0;
        params.p_rxn_p = 3.0;
        let th = ThetaVector {
            d_p: 1.0,
            d_n: 1e-300,
            q_all: 1.0,
            x_sp0: 0.75,
            x_sn0: 0.5,
        };
        // Rest at full charge keeps the surfaces at the anchors.
        let s = ElectrochemicalState::rest(1.0);
        let eta = reaction_overpotential(&s, &th, &params, 1.0).unwrap();
        let expected = 2.0 * GAS_CONSTANT * 298.15 / FARADAY * (1.0 + 2.0_f64.sqrt()).ln();
        assert_relative_eq!(eta, expected, max_relative = 1e-12);
        assert_relative_eq!(eta, 0.04529, max_relative = 1e-3);
    }

    #[test]
    fn reaction_overpotential_vanishes_at_rest_and_is_odd_in_current() {
        let params = test_params();
        let s = ElectrochemicalState::rest(0.6);
        assert_eq!(reaction_overpotential(&s, &theta(), &params, 0.0).unwrap(), 0.0);
        let fwd = reaction_overpotential(&s, &theta(), &params, 4.0).unwrap();
        let rev = reaction_overpotential(&s, &theta(), &params, -4.0).unwrap();
        assert_relative_eq!(fwd, -rev, max_relative = 1e-14);
        assert!(fwd > 0.0);
    }

    #[test]
    fn terminal_voltage_at_rest_is_ocv_difference() {
        let params = test_params();
        let th = theta();
        let s = ElectrochemicalState::rest(0.7);
        let (xp, xn) = averaged_stoichiometries(0.7, &th);
        let u = terminal_voltage(&s, &th, &params, 0.0).unwrap();
        assert_relative_eq!(u, params.ocv_p.eval(xp) - params.ocv_n.eval(xn), max_relative = 1e-14);
    }

    #[test]
    fn terminal_voltage_matches_term_by_term_assembly() {
        let params = test_params();
        let th = theta();
        let s = ElectrochemicalState {
            soc: 0.55,
            dx_sp: 3.0e-4,
            dx_sn: -2.5e-4,
            dc1: 22.0,
            dc2: 18.0,
        };
        let i = 5.8;
        let u = terminal_voltage(&s, &th, &params, i).unwrap();
        let (xp, xn) = surface_stoichiometries(&s, &th);
        let assembled = params.ocv_p.eval(xp) - params.ocv_n.eval(xn)
            - concentration_overpotential(&s, &params).unwrap()
            - reaction_overpotential(&s, &th, &params, i).unwrap()
            - params.r_ohm * i;
        assert_relative_eq!(u, assembled, max_relative = 1e-14);
    }

    #[test]
    fn terminal_voltage_ohmic_term_is_linear_in_current() {
        // With the overpotential couplings removed, voltage differences
        // across currents reduce to the ohmic drop: craft near-zero
        // reaction/concentration sensitivity via tiny coefficients.
        let mut params = test_params();
        params.p_rxn_p = 1e-12;
        params.p_rxn_n = 1e-12;
        let th = theta();
        let s = ElectrochemicalState::rest(0.6);
        let u0 = terminal_voltage(&s, &th, &params, 0.0).unwrap();
        let u1 = terminal_voltage(&s, &th, &params, 2.0).unwrap();
        assert_relative_eq!(u0 - u1, params.r_ohm * 2.0, max_relative = 1e-9);
    }

    #[test]
    fn terminal_voltage_flags_saturated_surface() {
        let th = theta();
        let params = test_params();
        // Deep overdischarge pushes the positive surface far beyond 1.05.
        let s = ElectrochemicalState { soc: -0.6, ..ElectrochemicalState::rest(0.0) };
        match terminal_voltage(&s, &th, &params, 0.0) {
            Err(ModelError::SurfaceSaturation { value }) => assert!(value > 1.05),
            other => panic!("expected saturation, got {other:?}"),
        }
        // Mild overshoot stays evaluable thanks to the clamp.
        let s = ElectrochemicalState { soc: -0.02, ..ElectrochemicalState::rest(0.0) };
        terminal_voltage(&s, &th, &params, 0.0).unwrap();
    }

    #[test]
    fn analytic_state_jacobian_matches_finite_differences() {
        let params = test_params();
        let th = theta();
        let a = jacobian_a_analytic(&params);
        let expected = [
            1.0,
            (-1.0_f64 / 250.0).exp(),
            (-1.0_f64 / 300.0).exp(),
            1.0 - 1.0 / 50.0,
            1.0 - 1.0 / 50.0,
        ];
        for (i, e) in expected.iter().enumerate() {
            assert_relative_eq!(a[(i, i)], *e, max_relative = 1e-15);
        }
        let s = ElectrochemicalState {
            soc: 0.42,
            dx_sp: 1.0e-4,
            dx_sn: -1.0e-4,
            dc1: 12.0,
            dc2: 9.0,
        };
        let fd = jacobian_a_fd(&s, &th, &params, 3.3).unwrap();
        assert!((fd - &a).norm() <= 1e-6 * a.norm(), "finite differences disagree");
    }

    #[test]
    fn measurement_jacobian_electrolyte_entry_matches_closed_form() {
        // At dc = 0 the dc1 sensitivity of the voltage is
        // −(2RT/F)(1 − t₊)/c0 ≈ −3.08e−5 V per mol·m⁻³. The entry is
        // five orders below the voltage itself, so the default probe
        // carries cancellation noise near 1e−4 relative; a coarser probe
        // pins the closed form tightly.
        let params = test_params();
        let th = theta();
        let s = ElectrochemicalState::rest(0.5);
        let expected = -2.0 * GAS_CONSTANT * params.temperature / FARADAY * (1.0 - params.t_plus)
            / params.c0;
        let c = jacobian_c(&s, &th, &params, 0.0).unwrap();
        assert_relative_eq!(c[(0, 3)], expected, max_relative = 1e-3);
        let f = |x: &nalgebra::DVector<f64>| {
            terminal_voltage(&ElectrochemicalState::from_vector(x), &th, &params, 0.0)
                .ok()
                .map(|u| nalgebra::DVector::from_row_slice(&[u]))
        };
        let coarse = numerics::numeric_jacobian(f, &s.to_vector(), 1e-4).unwrap();
        assert_relative_eq!(coarse[(0, 3)], expected, max_relative = 1e-6);
    }

    #[test]
    fn measurement_jacobian_soc_entry_vanishes_on_flat_segments() {
        // Flat open-circuit tables remove every stoichiometry sensitivity,
        // and zero current removes the kinetic one.
        let mut params = test_params();
        params.ocv_p =
            OcvCurve { breakpoints: vec![0.0, 0.3, 0.7, 1.0], voltages: vec![3.8; 4] };
        params.ocv_n =
            OcvCurve { breakpoints: vec![0.0, 0.3, 0.7, 1.0], voltages: vec![0.1; 4] };
        let c = jacobian_c(&ElectrochemicalState::rest(0.5), &theta(), &params, 0.0).unwrap();
        assert_relative_eq!(c[(0, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn parameter_jacobian_anchor_entry_tracks_ocv_slope() {
        // ∂U/∂x_sp0 equals the positive-electrode OCV slope at the
        // operating point when kinetics are negligible (zero current).
        let params = test_params();
        let th = theta();
        let s = ElectrochemicalState::rest(0.5);
        let ct = jacobian_c_theta(&s, &th, &params, 0.0).unwrap();
        let (xp, _) = averaged_stoichiometries(0.5, &th);
        // Slope of the segment containing xp = 0.575: (3.60−3.70)/0.10.
        let h = 1e-7;
        let slope = (params.ocv_p.eval(xp + h) - params.ocv_p.eval(xp - h)) / (2.0 * h);
        assert_relative_eq!(ct[(0, 3)], slope, max_relative = 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig { failure_persistence: None, cases: 48, .. ProptestConfig::default() })]

        /// Coulomb counting: the state of charge after any profile equals
        /// the initial value minus the summed increments, to 1e−12.
        #[test]
        fn soc_is_exact_coulomb_count(
            currents in proptest::collection::vec(-6.0_f64..9.0, 1..400)
        ) {
            let params = test_params();
            let th = theta();
            let mut s = ElectrochemicalState::rest(1.0);
            let mut ledger = 0.0;
            for &i in &currents {
                s = step_state(&s, &th, &params, i).unwrap();
                ledger += i * params.dt / th.q_all;
            }
            prop_assert!((s.soc - (1.0 - ledger)).abs() < 1e-12);
        }

        /// The diffusion deviations are bounded-input bounded-output:
        /// |dx| never exceeds |g| · max|I| plus the decayed start value.
        #[test]
        fn surface_deviation_is_bibo_stable(
            currents in proptest::collection::vec(-8.7_f64..8.7, 1..300)
        ) {
            let params = test_params();
            let th = theta();
            let mut s = ElectrochemicalState::rest(0.9);
            let bound = params.g_p.abs() * 8.7 + 1e-12;
            for &i in &currents {
                s = step_state(&s, &th, &params, i).unwrap();
                prop_assert!(s.dx_sp.abs() <= bound);
                prop_assert!(s.dx_sn.abs() <= params.g_n.abs() * 8.7 + 1e-12);
            }
        }

        /// Discharge current strictly lowers terminal voltage relative to
        /// rest at the same state.
        #[test]
        fn discharge_load_depresses_voltage(i in 0.5_f64..8.0, soc in 0.15_f64..0.95) {
            let params = test_params();
            let th = theta();
            let s = ElectrochemicalState::rest(soc);
            let u_rest = terminal_voltage(&s, &th, &params, 0.0).unwrap();
            let u_load = terminal_voltage(&s, &th, &params, i).unwrap();
            prop_assert!(u_load < u_rest);
        }
    }
}
