//! Synthetic-twin experiment harness.
//!
//! A scenario pairs a current profile with a truth simulation of the cell
//! (optionally noisier than the estimator believes), then replays the
//! measured voltages through an estimator — gated or unguarded — and
//! scores the tracking error. The harness is fully deterministic: every
//! random element (profile shape, measurement noise) is derived from an
//! explicit seed.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::{self, CellParameters, ElectrochemicalState, ModelError, ThetaVector};
use crate::filters::{GaussianEstimate, NoiseConfig};
use crate::supervisor::{Session, SessionSettings, StepRecord, SupervisorError};

/// Fraction of profile steps allowed to carry charging (negative)
/// current.
pub const CHARGE_DUTY_CAP: f64 = 0.20;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Supervisor(#[from] SupervisorError),
    #[error("profile file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("profile file parse error: {0}")]
    Csv(#[from] csv::Error),
    #[error("profile file is missing a `current_a` column")]
    MissingCurrentColumn,
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("runs are not comparable: {0}")]
    TraceMismatch(String),
}

/// How the load profile is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    /// Constant current at a fixed C-rate for a fixed duration.
    Constant { c_rate: f64, duration_s: f64 },
    /// Piecewise-constant random drive: segment lengths of 5–60 s,
    /// discharge amplitudes of 0.2–2.5 C, charge amplitudes of 0–1.5 C
    /// occurring with probability 0.15 and capped at a 20% duty share.
    PulseDynamic { duration_s: f64, seed: u64 },
    /// Currents read from a CSV file with a `current_a` column.
    FromFile { path: PathBuf },
}

/// Expands a profile specification into one current per sampling period.
pub fn generate_profile(
    spec: &ProfileSpec,
    params: &CellParameters,
) -> Result<Vec<f64>, ScenarioError> {
    match spec {
        ProfileSpec::Constant { c_rate, duration_s } => {
            let n = steps_for(*duration_s, params.dt)?;
            Ok(vec![c_rate * params.one_c_amps(); n])
        }
        ProfileSpec::PulseDynamic { duration_s, seed } => {
            let n = steps_for(*duration_s, params.dt)?;
            let one_c = params.one_c_amps();
            let mut rng = ChaCha12Rng::seed_from_u64(*seed);
            let mut currents = Vec::with_capacity(n);
            let mut charge_steps = 0usize;
            while currents.len() < n {
                let seg_s: f64 = rng.gen_range(5.0..60.0);
                let seg_steps = ((seg_s / params.dt).round() as usize).max(1);
                let wants_charge = rng.gen_bool(0.15);
                // The duty cap is enforced deterministically: a charge
                // segment that would push the share past the cap becomes
                // a discharge segment instead.
                let charging = wants_charge
                    && (charge_steps + seg_steps) as f64
                        <= CHARGE_DUTY_CAP * (currents.len() + seg_steps) as f64;
                let amp = if charging {
                    -rng.gen_range(0.0..1.5) * one_c
                } else {
                    rng.gen_range(0.2..2.5) * one_c
                };
                for _ in 0..seg_steps {
                    if currents.len() == n {
                        break;
                    }
                    currents.push(amp);
                    if charging {
                        charge_steps += 1;
                    }
                }
            }
            Ok(currents)
        }
        ProfileSpec::FromFile { path } => {
            let mut reader = csv::Reader::from_path(path)?;
            let idx = reader
                .headers()?
                .iter()
                .position(|h| h == "current_a")
                .ok_or(ScenarioError::MissingCurrentColumn)?;
            let mut currents = Vec::new();
            for row in reader.records() {
                let row = row?;
                let field = row.get(idx).ok_or(ScenarioError::MissingCurrentColumn)?;
                let value: f64 = field.trim().parse().map_err(|_| {
                    ScenarioError::Invalid(format!("bad current value `{field}` in {path:?}"))
                })?;
                currents.push(value);
            }
            if currents.is_empty() {
                return Err(ScenarioError::Invalid(format!("{path:?} holds no current rows")));
            }
            Ok(currents)
        }
    }
}

fn steps_for(duration_s: f64, dt: f64) -> Result<usize, ScenarioError> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(ScenarioError::Invalid(format!(
            "profile duration must be positive, got {duration_s}"
        )));
    }
    Ok(((duration_s / dt).round() as usize).max(1))
}

/// A simulated ground-truth run: the full state trajectory plus clean and
/// noise-corrupted terminal voltages, one row per sampling period.
///
/// Row `k` covers the interval ending at `time_s[k] = (k+1)·dt`: the
/// current `current_a[k]` was applied across the interval and the voltage
/// was read at its end.
#[derive(Debug, Clone)]
pub struct TruthTrace {
    pub label: String,
    /// State at time zero, before the first interval.
    pub initial_state: ElectrochemicalState,
    /// Parameters the truth was generated with.
    pub truth_theta: ThetaVector,
    pub time_s: Vec<f64>,
    pub current_a: Vec<f64>,
    pub states: Vec<ElectrochemicalState>,
    pub clean_v: Vec<f64>,
    pub measured_v: Vec<f64>,
    /// True when the run stopped early because the cell was exhausted
    /// (state of charge fell below −0.05).
    pub early_termination: bool,
}

impl TruthTrace {
    pub fn len(&self) -> usize {
        self.time_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_s.is_empty()
    }
}

/// State-of-charge floor below which a truth simulation stops.
pub const EXHAUSTION_SOC: f64 = -0.05;

/// Simulates the cell under a current profile and corrupts the clean
/// terminal voltage with zero-mean Gaussian noise of the given standard
/// deviation, drawn from a stream seeded by `noise_seed`.
pub fn simulate_truth(
    params: &CellParameters,
    truth_theta: &ThetaVector,
    profile: &[f64],
    initial_soc: f64,
    noise_std_v: f64,
    noise_seed: u64,
    label: &str,
) -> Result<TruthTrace, ScenarioError> {
    if profile.is_empty() {
        return Err(ScenarioError::Invalid("empty current profile".into()));
    }
    if !(noise_std_v.is_finite() && noise_std_v >= 0.0) {
        return Err(ScenarioError::Invalid(format!(
            "measurement noise level must be ≥ 0, got {noise_std_v}"
        )));
    }
    let initial_state = ElectrochemicalState::rest(initial_soc);
    let mut rng = ChaCha12Rng::seed_from_u64(noise_seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal is well formed");

    let mut trace = TruthTrace {
        label: label.to_string(),
        initial_state,
        truth_theta: *truth_theta,
        time_s: Vec::with_capacity(profile.len()),
        current_a: Vec::with_capacity(profile.len()),
        states: Vec::with_capacity(profile.len()),
        clean_v: Vec::with_capacity(profile.len()),
        measured_v: Vec::with_capacity(profile.len()),
        early_termination: false,
    };
    let mut x = initial_state;
    for (k, &i_k) in profile.iter().enumerate() {
        let next = battery::step_state(&x, truth_theta, params, i_k)?;
        if next.soc < EXHAUSTION_SOC {
            trace.early_termination = true;
            break;
        }
        x = next;
        let clean = battery::terminal_voltage(&x, truth_theta, params, i_k)?;
        let noise = noise_std_v * normal.sample(&mut rng);
        trace.time_s.push((k as f64 + 1.0) * params.dt);
        trace.current_a.push(i_k);
        trace.states.push(x);
        trace.clean_v.push(clean);
        trace.measured_v.push(clean + noise);
    }
    if trace.is_empty() {
        return Err(ScenarioError::Invalid(
            "profile exhausted the cell before producing a single row".into(),
        ));
    }
    Ok(trace)
}

/// Which estimator runs against a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Both filters update at every step.
    DualEkf,
    /// Parameter updates pass through the innovation dead zone.
    SgDkf,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::DualEkf => "dual_ekf",
            Algorithm::SgDkf => "sg_dkf",
        }
    }

    pub const ALL: [Algorithm; 2] = [Algorithm::DualEkf, Algorithm::SgDkf];
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dual_ekf" => Ok(Algorithm::DualEkf),
            "sg_dkf" => Ok(Algorithm::SgDkf),
            other => Err(format!("unknown algorithm `{other}` (expected dual_ekf or sg_dkf)")),
        }
    }
}

/// How an estimator is initialized relative to the truth.
#[derive(Debug, Clone)]
pub struct EstimatorSettings {
    /// Initial state-of-charge error, percent: the estimate starts at
    /// `soc_true · (1 − pct/100)`.
    pub init_soc_error_pct: f64,
    /// Uniform relative offset applied to every initial parameter:
    /// `θ̂₀ = θ_true · (1 + rel)`.
    pub init_theta_error_rel: f64,
    /// Initial state covariance diagonal.
    pub p0_state_diag: [f64; 5],
    /// Initial parameter standard deviation, relative to each parameter.
    pub p0_theta_rel: f64,
    pub session: SessionSettings,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            init_soc_error_pct: 0.0,
            init_theta_error_rel: 0.0,
            p0_state_diag: [4.0e-5, 1.0e-8, 1.0e-8, 2.5e-3, 2.5e-3],
            p0_theta_rel: 0.005,
            session: SessionSettings::default(),
        }
    }
}

/// Accuracy summary of one estimator run against a truth trace.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    /// Trace label the run scored against.
    pub condition: String,
    pub init_soc_error_pct: f64,
    pub algorithm: Algorithm,
    /// Root-mean-square state-of-charge error, percentage points.
    pub rmse_pct: f64,
    /// Largest absolute state-of-charge error, percentage points.
    pub max_err_pct: f64,
    /// First step index after which the absolute error stays below 1
    /// percentage point; −1 if it never settles.
    pub convergence_step: i64,
    /// Fraction of steps with the parameter filter frozen.
    pub freeze_fraction: f64,
    pub n_steps: usize,
}

/// One completed estimator run: the per-step records, the score, and the
/// step at which the session tripped its divergence breaker, if it did.
#[derive(Debug, Clone)]
pub struct EstimatorRun {
    pub algorithm: Algorithm,
    pub records: Vec<StepRecord>,
    pub soc_err_pct: Vec<f64>,
    pub metrics: RunMetrics,
    pub diverged_at: Option<usize>,
}

/// First index after which every error stays strictly below `tol_pct` in
/// magnitude; −1 when the sequence never settles (or is empty).
pub fn convergence_step(err_pct: &[f64], tol_pct: f64) -> i64 {
    let mut candidate: Option<usize> = None;
    for (k, e) in err_pct.iter().enumerate() {
        if e.abs() < tol_pct {
            candidate.get_or_insert(k);
        } else {
            candidate = None;
        }
    }
    candidate.map_or(-1, |k| k as i64)
}

/// Replays a truth trace through the chosen estimator.
pub fn run_estimator(
    params: &CellParameters,
    trace: &TruthTrace,
    algorithm: Algorithm,
    settings: &EstimatorSettings,
    noise: &NoiseConfig,
) -> Result<EstimatorRun, ScenarioError> {
    let init_soc =
        (trace.initial_state.soc * (1.0 - settings.init_soc_error_pct / 100.0)).clamp(0.001, 1.0);
    let initial_state = GaussianEstimate::new(
        ElectrochemicalState::rest(init_soc).to_vector(),
        DMatrix::from_diagonal(&DVector::from_row_slice(&settings.p0_state_diag)),
    );
    let theta0: DVector<f64> =
        trace.truth_theta.to_vector() * (1.0 + settings.init_theta_error_rel);
    let theta_cov = DMatrix::from_diagonal(&DVector::from_iterator(
        5,
        theta0.iter().map(|t| (settings.p0_theta_rel * t).powi(2)),
    ));
    let initial_theta = GaussianEstimate::new(theta0, theta_cov);

    let mut session = Session::new(
        params.clone(),
        noise.clone(),
        initial_state,
        initial_theta,
        settings.session.clone(),
    )?;

    let mut records = Vec::with_capacity(trace.len());
    let mut diverged_at = None;
    for k in 0..trace.len() {
        let result = match algorithm {
            Algorithm::SgDkf => session.gated_step(trace.current_a[k], trace.measured_v[k]),
            Algorithm::DualEkf => session.unguarded_step(trace.current_a[k], trace.measured_v[k]),
        };
        match result {
            Ok(record) => records.push(record),
            Err(SupervisorError::Divergence { step, .. }) => {
                diverged_at = Some(step);
                break;
            }
            Err(other) => return Err(other.into()),
        }
    }

    let soc_err_pct: Vec<f64> = records
        .iter()
        .zip(&trace.states)
        .map(|(r, truth)| (r.state_mean[0] - truth.soc) * 100.0)
        .collect();
    let n = records.len();
    let rmse_pct = if n == 0 {
        f64::NAN
    } else {
        (soc_err_pct.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt()
    };
    let max_err_pct = soc_err_pct.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
    let freeze_fraction = if n == 0 {
        0.0
    } else {
        records.iter().filter(|r| r.sigma == 0).count() as f64 / n as f64
    };
    let metrics = RunMetrics {
        condition: trace.label.clone(),
        init_soc_error_pct: settings.init_soc_error_pct,
        algorithm,
        rmse_pct,
        max_err_pct,
        convergence_step: convergence_step(&soc_err_pct, 1.0),
        freeze_fraction,
        n_steps: n,
    };
    Ok(EstimatorRun { algorithm, records, soc_err_pct, metrics, diverged_at })
}

/// Error-reduction percentage of run `b` relative to run `a`:
/// `(rmse_a − rmse_b)/rmse_a · 100`. The runs must describe the same
/// condition.
pub fn error_reduction_pct(a: &RunMetrics, b: &RunMetrics) -> Result<f64, ScenarioError> {
    if a.condition != b.condition {
        return Err(ScenarioError::TraceMismatch(format!(
            "conditions differ: `{}` vs `{}`",
            a.condition, b.condition
        )));
    }
    if a.init_soc_error_pct != b.init_soc_error_pct {
        return Err(ScenarioError::TraceMismatch(format!(
            "initial errors differ: {}% vs {}%",
            a.init_soc_error_pct, b.init_soc_error_pct
        )));
    }
    if !(a.rmse_pct.is_finite() && a.rmse_pct > 0.0) {
        return Err(ScenarioError::TraceMismatch(format!(
            "reference error {} admits no reduction percentage",
            a.rmse_pct
        )));
    }
    Ok((a.rmse_pct - b.rmse_pct) / a.rmse_pct * 100.0)
}
