//! Run configuration: one JSON document pinning the cell, the noise
//! densities, the estimator tuning, and the scenario table for a whole
//! experiment suite.
//!
//! The document carries an explicit schema `version` and rejects unknown
//! fields, so a stale or misspelled config fails loudly instead of running
//! with silently ignored settings. [`RunConfig::synthetic_default`] is the
//! built-in suite: a synthetic NMC/graphite-like cell, four scenario
//! conditions (pulse and constant-current, each with and without a 30 %
//! initial state-of-charge error), and the estimator tuning the library is
//! calibrated around. The same document is bundled at
//! `examples/default_config.json` for use as a starting point.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::{CellParameters, OcvCurve, ThetaVector};
use crate::filters::{CovarianceForm, NoiseConfig};
use crate::scenario::{EstimatorSettings, ProfileSpec};
use crate::supervisor::SessionSettings;

/// Schema version this build reads and writes.
pub const CONFIG_VERSION: u32 = 1;

/// Odd 64-bit mixing constant used to spread scenario indices across the
/// seed space, so each scenario gets an independent noise stream from one
/// master seed.
const SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

/// Why a configuration could not be loaded.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), reason: reason.into() }
}

/// Noise densities, stored as diagonals so the JSON stays readable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Diagonal of the state process-noise covariance.
    pub q_state_diag: [f64; 5],
    /// Measurement-noise variance assumed by the filter, volts².
    pub r_meas: f64,
    /// Parameter random-walk intensity relative to each nominal value: the
    /// walk variance for parameter `i` is `(q_theta_rel · θᵢ)²`.
    pub q_theta_rel: f64,
    /// Standard deviation of the synthetic voltage sensor, volts.
    pub truth_noise_std_v: f64,
}

/// Estimator initialisation and supervisor tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    /// Diagonal of the initial state covariance.
    pub p0_state_diag: [f64; 5],
    /// Initial parameter standard deviation relative to each nominal value.
    pub p0_theta_rel: f64,
    /// Relative offset applied to every parameter at estimator start, so the
    /// parameter filter has something to correct.
    pub init_theta_error_rel: f64,
    /// Covariance update form used by both filters.
    pub covariance_form: CovarianceForm,
    /// Damping strength applied to marginally stable dynamics before the
    /// certificate is computed.
    pub kappa: f64,
    /// Steps between stability-constant refreshes.
    pub recompute_every: usize,
    /// Innovation magnitude treated as divergent, volts.
    pub divergence_volts: f64,
    /// Consecutive divergent steps before a run is abandoned.
    pub divergence_steps: usize,
}

/// One experiment condition: a load profile plus the estimator's starting
/// error for that run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    /// Unique label used in output file names and summary rows.
    pub name: String,
    /// Load profile driving the simulated cell.
    pub profile: ProfileSpec,
    /// True state of charge at the start of the run, in (0, 1].
    pub initial_soc: f64,
    /// Initial state-of-charge error handed to the estimator, percent of the
    /// true value.
    pub init_soc_error_pct: f64,
}

/// Complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Schema version; must equal [`CONFIG_VERSION`].
    pub version: u32,
    /// Master seed for every random stream in the suite.
    pub seed: u64,
    /// Static cell description, including both open-circuit-voltage curves.
    pub cell: CellParameters,
    pub noise: NoiseSpec,
    pub estimator: EstimatorSpec,
    /// Conditions to run, in order.
    pub scenarios: Vec<ScenarioSpec>,
}

impl RunConfig {
    /// The built-in suite: synthetic cell, calibrated tuning, and four
    /// conditions crossing two load profiles with initial state-of-charge
    /// errors of 0 % and 30 %.
    pub fn synthetic_default() -> Self {
        let ocv_p = OcvCurve {
            breakpoints: vec![
                0.0, 0.08, 0.16, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.93, 1.0,
            ],
            voltages: vec![
                4.30, 4.18, 4.08, 3.98, 3.88, 3.79, 3.70, 3.60, 3.49, 3.36, 3.20, 3.00,
            ],
        };
        let ocv_n = OcvCurve {
            breakpoints: vec![
                0.0, 0.05, 0.10, 0.18, 0.28, 0.40, 0.52, 0.64, 0.76, 0.86, 0.94, 1.0,
            ],
            voltages: vec![
                0.60, 0.44, 0.32, 0.24, 0.19, 0.155, 0.13, 0.115, 0.10, 0.085, 0.07, 0.05,
            ],
        };
        let cell = CellParameters {
            q_all: 10_440.0,
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
            ocv_p,
            ocv_n,
        };
        let pulse = ProfileSpec::PulseDynamic { duration_s: 2400.0, seed: 42 };
        let constant = ProfileSpec::Constant { c_rate: 1.0, duration_s: 3600.0 };
        Self {
            version: CONFIG_VERSION,
            seed: 1000,
            cell,
            noise: NoiseSpec {
                q_state_diag: [1.0e-10, 1.0e-12, 1.0e-12, 1.0e-4, 1.0e-4],
                r_meas: 2.5e-5,
                q_theta_rel: 1.0e-6,
                truth_noise_std_v: 5.0e-3,
            },
            estimator: EstimatorSpec {
                p0_state_diag: [4.0e-5, 1.0e-8, 1.0e-8, 2.5e-3, 2.5e-3],
                p0_theta_rel: 0.005,
                init_theta_error_rel: 0.05,
                covariance_form: CovarianceForm::Joseph,
                kappa: 1.0e-3,
                recompute_every: 100,
                divergence_volts: 1.0,
                divergence_steps: 50,
            },
            scenarios: vec![
                ScenarioSpec {
                    name: "pulse_0".into(),
                    profile: pulse.clone(),
                    initial_soc: 1.0,
                    init_soc_error_pct: 0.0,
                },
                ScenarioSpec {
                    name: "pulse_30".into(),
                    profile: pulse,
                    initial_soc: 1.0,
                    init_soc_error_pct: 30.0,
                },
                ScenarioSpec {
                    name: "cc1c_0".into(),
                    profile: constant.clone(),
                    initial_soc: 1.0,
                    init_soc_error_pct: 0.0,
                },
                ScenarioSpec {
                    name: "cc1c_30".into(),
                    profile: constant,
                    initial_soc: 1.0,
                    init_soc_error_pct: 30.0,
                },
            ],
        }
    }

    /// Parse and validate a JSON document.
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Read and validate a JSON config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    /// Pretty-printed JSON with a trailing newline, suitable for writing to
    /// a file.
    pub fn to_json_pretty(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        let _ = writeln!(text);
        text
    }

    /// Check every field, naming the offending one in the error.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(invalid(
                "version",
                format!("this build reads version {CONFIG_VERSION}, got {}", self.version),
            ));
        }
        self.cell
            .validate()
            .map_err(|e| invalid(format!("cell.{}", e.field), e.reason))?;

        for (i, q) in self.noise.q_state_diag.iter().enumerate() {
            if !q.is_finite() || *q <= 0.0 {
                return Err(invalid(
                    format!("noise.q_state_diag[{i}]"),
                    format!("must be finite and positive, got {q}"),
                ));
            }
        }
        if !self.noise.r_meas.is_finite() || self.noise.r_meas <= 0.0 {
            return Err(invalid(
                "noise.r_meas",
                format!("must be finite and positive, got {}", self.noise.r_meas),
            ));
        }
        if !self.noise.q_theta_rel.is_finite() || self.noise.q_theta_rel < 0.0 {
            return Err(invalid(
                "noise.q_theta_rel",
                format!("must be finite and non-negative, got {}", self.noise.q_theta_rel),
            ));
        }
        if !self.noise.truth_noise_std_v.is_finite() || self.noise.truth_noise_std_v < 0.0 {
            return Err(invalid(
                "noise.truth_noise_std_v",
                format!("must be finite and non-negative, got {}", self.noise.truth_noise_std_v),
            ));
        }

        let est = &self.estimator;
        for (i, p) in est.p0_state_diag.iter().enumerate() {
            if !p.is_finite() || *p <= 0.0 {
                return Err(invalid(
                    format!("estimator.p0_state_diag[{i}]"),
                    format!("must be finite and positive, got {p}"),
                ));
            }
        }
        if !est.p0_theta_rel.is_finite() || est.p0_theta_rel <= 0.0 {
            return Err(invalid(
                "estimator.p0_theta_rel",
                format!("must be finite and positive, got {}", est.p0_theta_rel),
            ));
        }
        if !est.init_theta_error_rel.is_finite() || est.init_theta_error_rel <= -1.0 {
            return Err(invalid(
                "estimator.init_theta_error_rel",
                format!("must be finite and above -1, got {}", est.init_theta_error_rel),
            ));
        }
        if !est.kappa.is_finite() || est.kappa <= 0.0 || est.kappa >= 1.0 {
            return Err(invalid(
                "estimator.kappa",
                format!("must lie strictly inside (0, 1), got {}", est.kappa),
            ));
        }
        if est.recompute_every == 0 {
            return Err(invalid("estimator.recompute_every", "must be at least 1"));
        }
        if !est.divergence_volts.is_finite() || est.divergence_volts <= 0.0 {
            return Err(invalid(
                "estimator.divergence_volts",
                format!("must be finite and positive, got {}", est.divergence_volts),
            ));
        }
        if est.divergence_steps == 0 {
            return Err(invalid("estimator.divergence_steps", "must be at least 1"));
        }

        if self.scenarios.is_empty() {
            return Err(invalid("scenarios", "at least one scenario is required"));
        }
        for (i, scenario) in self.scenarios.iter().enumerate() {
            if scenario.name.is_empty() {
                return Err(invalid(format!("scenarios[{i}].name"), "must not be empty"));
            }
            if scenario.name.contains(|c: char| !c.is_ascii_alphanumeric() && c != '_' && c != '-')
            {
                return Err(invalid(
                    format!("scenarios[{i}].name"),
                    format!(
                        "`{}` may only contain ASCII letters, digits, `_`, and `-` \
                         (it becomes part of output file names)",
                        scenario.name
                    ),
                ));
            }
            if self.scenarios[..i].iter().any(|other| other.name == scenario.name) {
                return Err(invalid(
                    format!("scenarios[{i}].name"),
                    format!("duplicate scenario name `{}`", scenario.name),
                ));
            }
            if !scenario.initial_soc.is_finite()
                || scenario.initial_soc <= 0.0
                || scenario.initial_soc > 1.0
            {
                return Err(invalid(
                    format!("scenarios[{i}].initial_soc"),
                    format!("must lie in (0, 1], got {}", scenario.initial_soc),
                ));
            }
            if !scenario.init_soc_error_pct.is_finite()
                || scenario.init_soc_error_pct.abs() >= 100.0
            {
                return Err(invalid(
                    format!("scenarios[{i}].init_soc_error_pct"),
                    format!("must lie strictly inside (-100, 100), got {}", scenario.init_soc_error_pct),
                ));
            }
            match &scenario.profile {
                ProfileSpec::Constant { c_rate, duration_s } => {
                    if !c_rate.is_finite() || *c_rate == 0.0 {
                        return Err(invalid(
                            format!("scenarios[{i}].profile.c_rate"),
                            format!("must be finite and non-zero, got {c_rate}"),
                        ));
                    }
                    if !duration_s.is_finite() || *duration_s <= 0.0 {
                        return Err(invalid(
                            format!("scenarios[{i}].profile.duration_s"),
                            format!("must be finite and positive, got {duration_s}"),
                        ));
                    }
                }
                ProfileSpec::PulseDynamic { duration_s, .. } => {
                    if !duration_s.is_finite() || *duration_s <= 0.0 {
                        return Err(invalid(
                            format!("scenarios[{i}].profile.duration_s"),
                            format!("must be finite and positive, got {duration_s}"),
                        ));
                    }
                }
                ProfileSpec::FromFile { path } => {
                    if path.as_os_str().is_empty() {
                        return Err(invalid(
                            format!("scenarios[{i}].profile.path"),
                            "must not be empty",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Nominal parameter vector implied by the cell description.
    pub fn theta_nominal(&self) -> ThetaVector {
        ThetaVector::nominal(&self.cell)
    }

    /// Filter noise covariances implied by the noise spec and the nominal
    /// parameters.
    pub fn noise_config(&self) -> NoiseConfig {
        let theta = self.theta_nominal().to_vector();
        let mut q_theta = [0.0; 5];
        for (slot, nominal) in q_theta.iter_mut().zip(theta.iter()) {
            *slot = (self.noise.q_theta_rel * nominal).powi(2);
        }
        NoiseConfig::from_diagonals(self.noise.q_state_diag, self.noise.r_meas, q_theta)
    }

    /// Estimator settings for one scenario of this suite.
    pub fn estimator_settings(&self, scenario: &ScenarioSpec) -> EstimatorSettings {
        let est = &self.estimator;
        EstimatorSettings {
            init_soc_error_pct: scenario.init_soc_error_pct,
            init_theta_error_rel: est.init_theta_error_rel,
            p0_state_diag: est.p0_state_diag,
            p0_theta_rel: est.p0_theta_rel,
            session: SessionSettings {
                covariance_form: est.covariance_form,
                kappa: est.kappa,
                recompute_every: est.recompute_every,
                lyapunov_q: None,
                divergence_volts: est.divergence_volts,
                divergence_steps: est.divergence_steps,
            },
        }
    }

    /// Measurement-noise seed for the scenario at `index`, derived from the
    /// master seed so two scenarios never share a noise stream.
    pub fn scenario_noise_seed(&self, index: usize) -> u64 {
        self.seed ^ (index as u64).wrapping_mul(SEED_MIX)
    }

    /// Look up a scenario by name, returning its position as well.
    pub fn find_scenario(&self, name: &str) -> Option<(usize, &ScenarioSpec)> {
        self.scenarios.iter().enumerate().find(|(_, s)| s.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn builtin_suite_is_valid_and_round_trips_through_json() {
        let config = RunConfig::synthetic_default();
        config.validate().expect("built-in config must validate");
        let text = config.to_json_pretty();
        let back = RunConfig::from_json_str(&text).expect("round trip");
        assert_eq!(back, config);
    }

    #[test]
    fn bundled_config_file_matches_the_builtin_suite() {
        let text = include_str!("../examples/default_config.json");
        let bundled = RunConfig::from_json_str(text).expect("bundled config must parse");
        assert_eq!(bundled, RunConfig::synthetic_default());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut value: serde_json::Value =
            serde_json::from_str(&RunConfig::synthetic_default().to_json_pretty()).unwrap();
        value["bogus_knob"] = serde_json::json!(1);
        let err = RunConfig::from_json_str(&value.to_string()).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("bogus_knob"), "error must name the field: {message}");

        // Nested structs reject unknown fields too.
        let mut value: serde_json::Value =
            serde_json::from_str(&RunConfig::synthetic_default().to_json_pretty()).unwrap();
        value["noise"]["r_measurement"] = serde_json::json!(1.0);
        let err = RunConfig::from_json_str(&value.to_string()).unwrap_err();
        assert!(err.to_string().contains("r_measurement"));
    }

    #[test]
    fn version_mismatch_is_named() {
        let mut config = RunConfig::synthetic_default();
        config.version = 2;
        match config.validate().unwrap_err() {
            ConfigError::Invalid { field, .. } => assert_eq!(field, "version"),
            other => panic!("expected Invalid, got {other}"),
        }
    }

    #[test]
    fn validation_errors_name_the_offending_field() {
        let cases: Vec<(Box<dyn Fn(&mut RunConfig)>, &str)> = vec![
            (Box::new(|c| c.noise.r_meas = 0.0), "noise.r_meas"),
            (Box::new(|c| c.noise.q_state_diag[2] = -1.0), "noise.q_state_diag[2]"),
            (Box::new(|c| c.noise.truth_noise_std_v = f64::NAN), "noise.truth_noise_std_v"),
            (Box::new(|c| c.estimator.kappa = 1.0), "estimator.kappa"),
            (Box::new(|c| c.estimator.p0_theta_rel = -0.1), "estimator.p0_theta_rel"),
            (Box::new(|c| c.estimator.recompute_every = 0), "estimator.recompute_every"),
            (Box::new(|c| c.scenarios[1].initial_soc = 0.0), "scenarios[1].initial_soc"),
            (
                Box::new(|c| c.scenarios[3].init_soc_error_pct = 100.0),
                "scenarios[3].init_soc_error_pct",
            ),
            (Box::new(|c| c.scenarios[2].name = "pulse_0".into()), "scenarios[2].name"),
            (Box::new(|c| c.scenarios[0].name = "pulse/0".into()), "scenarios[0].name"),
            (Box::new(|c| c.cell.t_plus = 1.5), "cell.t_plus"),
            (Box::new(|c| c.scenarios.clear()), "scenarios"),
        ];
        for (mutate, expected_field) in cases {
            let mut config = RunConfig::synthetic_default();
            mutate(&mut config);
            match config.validate().unwrap_err() {
                ConfigError::Invalid { field, .. } => assert_eq!(field, expected_field),
                other => panic!("expected Invalid for {expected_field}, got {other}"),
            }
        }
    }

    #[test]
    fn noise_config_squares_the_relative_walk_intensity() {
        let config = RunConfig::synthetic_default();
        let noise = config.noise_config();
        // Walk variance for each parameter is (rel · nominal)².
        let expected_qall = (1.0e-6_f64 * 10_440.0).powi(2);
        assert_relative_eq!(noise.q_theta[(2, 2)], expected_qall, max_relative = 1e-15);
        let expected_dp = (1.0e-6_f64 * 0.55).powi(2);
        assert_relative_eq!(noise.q_theta[(0, 0)], expected_dp, max_relative = 1e-15);
        assert_relative_eq!(noise.r_meas, 2.5e-5, max_relative = 1e-15);
        for i in 0..5 {
            assert_relative_eq!(
                noise.q_state[(i, i)],
                config.noise.q_state_diag[i],
                max_relative = 1e-15
            );
        }
    }

    #[test]
    fn estimator_settings_carry_the_scenario_error() {
        let config = RunConfig::synthetic_default();
        let (_, thirty) = config.find_scenario("pulse_30").expect("scenario exists");
        let settings = config.estimator_settings(thirty);
        assert_eq!(settings.init_soc_error_pct, 30.0);
        assert_eq!(settings.init_theta_error_rel, 0.05);
        assert_eq!(settings.p0_state_diag, config.estimator.p0_state_diag);
        assert_eq!(settings.session.recompute_every, 100);
        assert_eq!(settings.session.lyapunov_q, None);
    }

    #[test]
    fn scenario_noise_seeds_are_distinct_and_deterministic() {
        let config = RunConfig::synthetic_default();
        // Index 0 collapses to the master seed itself (0 · mix = 0).
        assert_eq!(config.scenario_noise_seed(0), config.seed);
        let seeds: Vec<u64> = (0..4).map(|i| config.scenario_noise_seed(i)).collect();
        for i in 0..seeds.len() {
            for j in 0..i {
                assert_ne!(seeds[i], seeds[j], "seeds {i} and {j} collide");
            }
        }
        assert_eq!(seeds, (0..4).map(|i| config.scenario_noise_seed(i)).collect::<Vec<_>>());
    }

    #[test]
    fn lookup_by_name_returns_position() {
        let config = RunConfig::synthetic_default();
        let (idx, scenario) = config.find_scenario("cc1c_30").unwrap();
        assert_eq!(idx, 3);
        assert_eq!(scenario.init_soc_error_pct, 30.0);
        assert!(config.find_scenario("missing").is_none());
    }
}
