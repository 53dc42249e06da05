//! Command-line front end: `simulate`, `estimate`, and `sweep` subcommands
//! over a JSON run configuration.
//!
//! Exit codes are part of the interface:
//!
//! | code | meaning |
//! |------|---------|
//! | 0    | success |
//! | 2    | bad invocation or invalid configuration (nothing was run) |
//! | 3    | runtime failure: file I/O or model evaluation |
//! | 4    | at least one estimator run tripped its divergence breaker; all output files were still written |
//!
//! Every output file is written atomically (to a `.tmp` sibling, then
//! renamed), so a crash never leaves a half-written CSV behind. Setting the
//! `SGDKF_SEED` environment variable overrides the config's master seed
//! without editing the file.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::battery;
use crate::config::{ConfigError, RunConfig, ScenarioSpec};
use crate::scenario::{self, Algorithm, EstimatorRun, TruthTrace};
use crate::supervisor;

pub const EXIT_OK: i32 = 0;
pub const EXIT_BAD_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

/// Environment variable that overrides the config's master seed.
pub const SEED_ENV_VAR: &str = "SGDKF_SEED";

/// Tuning parameters the `sweep` subcommand can vary.
pub const SWEEPABLE_PARAMS: [&str; 4] =
    ["init_soc_error_pct", "init_theta_error_rel", "p0_theta_rel", "kappa"];

#[derive(Debug, Parser)]
#[command(
    name = "sgdkf",
    version,
    about = "Gated dual Kalman filtering on a reduced-order lithium-ion cell model",
    subcommand_required = true,
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate ground truth for each scenario and write one truth CSV per
    /// scenario.
    Simulate {
        /// JSON run configuration; omit to use the built-in synthetic suite.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Run only the named scenario.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Run estimators against simulated truth; write per-run records,
    /// summary.csv, and metadata.json.
    Estimate {
        /// JSON run configuration; omit to use the built-in synthetic suite.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Run only the named scenario.
        #[arg(long)]
        scenario: Option<String>,
        /// Run only one algorithm (`dual_ekf` or `sg_dkf`); default is both.
        #[arg(long)]
        algo: Option<String>,
    },
    /// Re-run the whole estimate suite once per value of a swept tuning
    /// parameter and write sweep_summary.csv.
    Sweep {
        /// JSON run configuration; omit to use the built-in synthetic suite.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Parameter to vary: one of init_soc_error_pct,
        /// init_theta_error_rel, p0_theta_rel, kappa.
        #[arg(long)]
        param: String,
        /// Comma-separated values to sweep over.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

/// Failures that map onto the non-zero exit codes.
#[derive(Debug)]
enum CliError {
    /// Invalid configuration or invocation — exit 2.
    BadConfig(String),
    /// Runtime failure while producing output — exit 3.
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(err: ConfigError) -> Self {
        CliError::BadConfig(err.to_string())
    }
}

impl From<scenario::ScenarioError> for CliError {
    fn from(err: scenario::ScenarioError) -> Self {
        CliError::Runtime(err.to_string())
    }
}

impl From<supervisor::SupervisorError> for CliError {
    fn from(err: supervisor::SupervisorError) -> Self {
        CliError::Runtime(err.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(err: io::Error) -> Self {
        CliError::Runtime(err.to_string())
    }
}

/// Parse `std::env::args`, execute, and return the process exit code.
pub fn run() -> i32 {
    let _ = env_logger::Builder::from_default_env().format_timestamp(None).try_init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(Outcome::Clean) => EXIT_OK,
        Ok(Outcome::Diverged) => {
            eprintln!(
                "warning: at least one run tripped the divergence breaker; \
                 partial records were written"
            );
            EXIT_DIVERGED
        }
        Err(CliError::BadConfig(message)) => {
            eprintln!("error: {message}");
            EXIT_BAD_CONFIG
        }
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            EXIT_RUNTIME
        }
    }
}

#[derive(Debug, PartialEq, Eq)]
enum Outcome {
    Clean,
    Diverged,
}

fn execute(command: Command) -> Result<Outcome, CliError> {
    match command {
        Command::Simulate { config, out, scenario } => {
            let config = load_config(config.as_deref())?;
            cmd_simulate(&config, &out, scenario.as_deref())
        }
        Command::Estimate { config, out, scenario, algo } => {
            let config = load_config(config.as_deref())?;
            let algo = algo
                .as_deref()
                .map(|text| text.parse::<Algorithm>().map_err(CliError::BadConfig))
                .transpose()?;
            cmd_estimate(&config, &out, scenario.as_deref(), algo)
        }
        Command::Sweep { config, out, param, values } => {
            let config = load_config(config.as_deref())?;
            cmd_sweep(&config, &out, &param, &values)
        }
    }
}

/// Load the config file (or the built-in suite) and apply the seed override.
fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let mut config = match path {
        Some(path) => RunConfig::load(path)
            .map_err(|e| CliError::BadConfig(format!("{}: {e}", path.display())))?,
        None => RunConfig::synthetic_default(),
    };
    if let Some(raw) = std::env::var_os(SEED_ENV_VAR) {
        let text = raw.to_string_lossy();
        let seed: u64 = text.trim().parse().map_err(|_| {
            CliError::BadConfig(format!("{SEED_ENV_VAR} must be an unsigned integer, got `{text}`"))
        })?;
        config.seed = seed;
    }
    Ok(config)
}

/// Resolve `--scenario` to the subset of the suite to run.
fn select_scenarios<'a>(
    config: &'a RunConfig,
    name: Option<&str>,
) -> Result<Vec<(usize, &'a ScenarioSpec)>, CliError> {
    match name {
        None => Ok(config.scenarios.iter().enumerate().collect()),
        Some(name) => config.find_scenario(name).map(|found| vec![found]).ok_or_else(|| {
            let known: Vec<&str> = config.scenarios.iter().map(|s| s.name.as_str()).collect();
            CliError::BadConfig(format!(
                "unknown scenario `{name}` (config defines: {})",
                known.join(", ")
            ))
        }),
    }
}

/// Apply one sweep assignment, then re-validate the config.
fn apply_sweep_value(config: &mut RunConfig, param: &str, value: f64) -> Result<(), CliError> {
    match param {
        "init_soc_error_pct" => {
            for scenario in &mut config.scenarios {
                scenario.init_soc_error_pct = value;
            }
        }
        "init_theta_error_rel" => config.estimator.init_theta_error_rel = value,
        "p0_theta_rel" => config.estimator.p0_theta_rel = value,
        "kappa" => config.estimator.kappa = value,
        other => {
            return Err(CliError::BadConfig(format!(
                "unknown sweep parameter `{other}` (expected one of: {})",
                SWEEPABLE_PARAMS.join(", ")
            )));
        }
    }
    config
        .validate()
        .map_err(|e| CliError::BadConfig(format!("sweep value {param}={value} is invalid: {e}")))
}

// ---------------------------------------------------------------------------
// Output rows
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TruthRow {
    time_s: f64,
    current_a: f64,
    true_soc: f64,
    clean_v: f64,
    measured_v: f64,
}

#[derive(Serialize)]
struct RecordRow {
    step: usize,
    time_s: f64,
    current_a: f64,
    measured_v: f64,
    soc_true: f64,
    soc_est: f64,
    soc_err_pct: f64,
    innovation_v: f64,
    delta_k: f64,
    sigma: u8,
    theta_dp: f64,
    theta_dn: f64,
    theta_qall: f64,
    theta_xsp0: f64,
    theta_xsn0: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    condition: String,
    init_soc_err_pct: f64,
    algorithm: &'static str,
    rmse_pct: f64,
    max_err_pct: f64,
    convergence_step: i64,
    freeze_fraction: f64,
}

// The csv crate rejects `#[serde(flatten)]`, so the summary fields are
// repeated here instead of embedded.
#[derive(Serialize)]
struct SweepRow {
    param: &'static str,
    value: f64,
    condition: String,
    init_soc_err_pct: f64,
    algorithm: &'static str,
    rmse_pct: f64,
    max_err_pct: f64,
    convergence_step: i64,
    freeze_fraction: f64,
}

impl SweepRow {
    fn new(param: &'static str, value: f64, summary: SummaryRow) -> Self {
        Self {
            param,
            value,
            condition: summary.condition,
            init_soc_err_pct: summary.init_soc_err_pct,
            algorithm: summary.algorithm,
            rmse_pct: summary.rmse_pct,
            max_err_pct: summary.max_err_pct,
            convergence_step: summary.convergence_step,
            freeze_fraction: summary.freeze_fraction,
        }
    }
}

impl SummaryRow {
    fn from_run(run: &EstimatorRun) -> Self {
        let m = &run.metrics;
        Self {
            condition: m.condition.clone(),
            init_soc_err_pct: m.init_soc_error_pct,
            algorithm: m.algorithm.as_str(),
            rmse_pct: m.rmse_pct,
            max_err_pct: m.max_err_pct,
            convergence_step: m.convergence_step,
            freeze_fraction: m.freeze_fraction,
        }
    }
}

fn record_rows(trace: &TruthTrace, run: &EstimatorRun) -> Vec<RecordRow> {
    run.records
        .iter()
        .zip(&trace.states)
        .zip(&run.soc_err_pct)
        .map(|((record, truth), err)| RecordRow {
            step: record.step,
            time_s: record.time_s,
            current_a: record.current_a,
            measured_v: record.measured_v,
            soc_true: truth.soc,
            soc_est: record.state_mean[0],
            soc_err_pct: *err,
            innovation_v: record.innovation,
            delta_k: record.delta,
            sigma: record.sigma,
            theta_dp: record.theta_mean[0],
            theta_dn: record.theta_mean[1],
            theta_qall: record.theta_mean[2],
            theta_xsp0: record.theta_mean[3],
            theta_xsn0: record.theta_mean[4],
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Atomic file writing
// ---------------------------------------------------------------------------

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)
        .map_err(|e| CliError::Runtime(format!("renaming into {}: {e}", path.display())))?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| CliError::Runtime(format!("encoding {}: {e}", path.display())))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| CliError::Runtime(format!("encoding {}: {e}", path.display())))?;
    write_atomic(path, &bytes)
}

// ---------------------------------------------------------------------------
// Metadata
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct MetadataConstants {
    alpha: f64,
    beta: f64,
    epsilon: f64,
    lambda_min_q: f64,
    trace_q: f64,
    norm_i_plus_p: f64,
    norm_atpa: f64,
    rho_raw: f64,
    damped: bool,
}

#[derive(Serialize)]
struct RunMetadataEntry {
    condition: String,
    algorithm: &'static str,
    n_steps: usize,
    freeze_count: usize,
    diverged_at: Option<usize>,
}

#[derive(Serialize)]
struct Metadata {
    seed: u64,
    config_version: u32,
    stability: MetadataConstants,
    runs: Vec<RunMetadataEntry>,
}

/// Certificate scalars for the suite. Every run shares one certificate
/// because the dynamics Jacobian and the process noise are fixed by the
/// config, not by the scenario.
fn metadata_constants(config: &RunConfig) -> Result<MetadataConstants, CliError> {
    let a = battery::jacobian_a_analytic(&config.cell);
    let noise = config.noise_config();
    let constants =
        supervisor::compute_stability_constants(&a, &noise.q_state, config.estimator.kappa)?;
    Ok(MetadataConstants {
        alpha: constants.alpha,
        beta: constants.beta,
        epsilon: constants.epsilon,
        lambda_min_q: constants.lambda_min_q,
        trace_q: constants.trace_q,
        norm_i_plus_p: constants.norm_i_plus_p,
        norm_atpa: constants.norm_atpa,
        rho_raw: constants.rho_raw,
        damped: constants.damped,
    })
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn simulate_scenario(
    config: &RunConfig,
    index: usize,
    spec: &ScenarioSpec,
) -> Result<TruthTrace, CliError> {
    let profile = scenario::generate_profile(&spec.profile, &config.cell)?;
    let trace = scenario::simulate_truth(
        &config.cell,
        &config.theta_nominal(),
        &profile,
        spec.initial_soc,
        config.noise.truth_noise_std_v,
        config.scenario_noise_seed(index),
        &spec.name,
    )?;
    Ok(trace)
}

fn cmd_simulate(
    config: &RunConfig,
    out: &Path,
    scenario_name: Option<&str>,
) -> Result<Outcome, CliError> {
    let selected = select_scenarios(config, scenario_name)?;
    fs::create_dir_all(out)?;
    for (index, spec) in selected {
        let trace = simulate_scenario(config, index, spec)?;
        let rows: Vec<TruthRow> = (0..trace.states.len())
            .map(|k| TruthRow {
                time_s: trace.time_s[k],
                current_a: trace.current_a[k],
                true_soc: trace.states[k].soc,
                clean_v: trace.clean_v[k],
                measured_v: trace.measured_v[k],
            })
            .collect();
        let path = out.join(format!("{}_truth.csv", spec.name));
        write_csv(&path, &rows)?;
        log::info!(
            "{}: {} steps{} -> {}",
            spec.name,
            rows.len(),
            if trace.early_termination { " (cell exhausted early)" } else { "" },
            path.display()
        );
    }
    Ok(Outcome::Clean)
}

/// Run the full (or filtered) suite and write records + summary rows.
/// Returns the summary rows and whether any run diverged.
fn run_suite(
    config: &RunConfig,
    out: Option<&Path>,
    scenario_name: Option<&str>,
    algo: Option<Algorithm>,
) -> Result<(Vec<SummaryRow>, Vec<RunMetadataEntry>, bool), CliError> {
    let selected = select_scenarios(config, scenario_name)?;
    let algorithms: Vec<Algorithm> = match algo {
        Some(one) => vec![one],
        None => Algorithm::ALL.to_vec(),
    };
    let noise = config.noise_config();
    let mut summaries = Vec::new();
    let mut entries = Vec::new();
    let mut any_diverged = false;
    for (index, spec) in selected {
        let trace = simulate_scenario(config, index, spec)?;
        let settings = config.estimator_settings(spec);
        for algorithm in &algorithms {
            let run = scenario::run_estimator(&config.cell, &trace, *algorithm, &settings, &noise)?;
            any_diverged |= run.diverged_at.is_some();
            if let Some(dir) = out {
                let path = dir.join(format!("{}_{}.csv", spec.name, algorithm.as_str()));
                write_csv(&path, &record_rows(&trace, &run))?;
            }
            log::info!(
                "{} / {}: rmse {:.3} pp, max {:.3} pp, frozen {:.1}%{}",
                spec.name,
                algorithm,
                run.metrics.rmse_pct,
                run.metrics.max_err_pct,
                100.0 * run.metrics.freeze_fraction,
                run.diverged_at.map(|k| format!(", DIVERGED at step {k}")).unwrap_or_default()
            );
            entries.push(RunMetadataEntry {
                condition: spec.name.clone(),
                algorithm: algorithm.as_str(),
                n_steps: run.metrics.n_steps,
                freeze_count: run.records.iter().filter(|r| r.sigma == 0).count(),
                diverged_at: run.diverged_at,
            });
            summaries.push(SummaryRow::from_run(&run));
        }
    }
    Ok((summaries, entries, any_diverged))
}

fn cmd_estimate(
    config: &RunConfig,
    out: &Path,
    scenario_name: Option<&str>,
    algo: Option<Algorithm>,
) -> Result<Outcome, CliError> {
    // Reject a bad scenario name before touching the filesystem.
    select_scenarios(config, scenario_name)?;
    fs::create_dir_all(out)?;
    let (summaries, entries, any_diverged) = run_suite(config, Some(out), scenario_name, algo)?;
    write_csv(&out.join("summary.csv"), &summaries)?;
    let metadata = Metadata {
        seed: config.seed,
        config_version: config.version,
        stability: metadata_constants(config)?,
        runs: entries,
    };
    let mut text = serde_json::to_string_pretty(&metadata)
        .map_err(|e| CliError::Runtime(format!("encoding metadata: {e}")))?;
    text.push('\n');
    write_atomic(&out.join("metadata.json"), text.as_bytes())?;
    Ok(if any_diverged { Outcome::Diverged } else { Outcome::Clean })
}

fn cmd_sweep(
    config: &RunConfig,
    out: &Path,
    param: &str,
    values: &[f64],
) -> Result<Outcome, CliError> {
    // Resolve the static name once so every row shares the same spelling,
    // and reject unknown parameters before any work happens.
    let param: &'static str = SWEEPABLE_PARAMS
        .iter()
        .find(|known| **known == param)
        .copied()
        .ok_or_else(|| {
            CliError::BadConfig(format!(
                "unknown sweep parameter `{param}` (expected one of: {})",
                SWEEPABLE_PARAMS.join(", ")
            ))
        })?;
    if values.is_empty() {
        return Err(CliError::BadConfig("--values must list at least one value".into()));
    }
    // Validate every point up front: a bad value should fail the whole
    // sweep before any runs happen, not halfway through.
    for value in values {
        let mut probe = config.clone();
        apply_sweep_value(&mut probe, param, *value)?;
    }
    fs::create_dir_all(out)?;
    let mut rows: Vec<SweepRow> = Vec::new();
    let mut any_diverged = false;
    for value in values {
        let mut point = config.clone();
        apply_sweep_value(&mut point, param, *value)?;
        let (summaries, _, diverged) = run_suite(&point, None, None, None)?;
        any_diverged |= diverged;
        rows.extend(summaries.into_iter().map(|summary| SweepRow::new(param, *value, summary)));
    }
    write_csv(&out.join("sweep_summary.csv"), &rows)?;
    Ok(if any_diverged { Outcome::Diverged } else { Outcome::Clean })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_selection_covers_all_or_one() {
        let config = RunConfig::synthetic_default();
        let all = select_scenarios(&config, None).unwrap();
        assert_eq!(all.len(), 4);
        assert_eq!(all[0].0, 0);
        let one = select_scenarios(&config, Some("cc1c_0")).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].0, 2);
        let err = select_scenarios(&config, Some("nope")).unwrap_err();
        match err {
            CliError::BadConfig(message) => {
                assert!(message.contains("nope"));
                assert!(message.contains("pulse_0"), "must list known names: {message}");
            }
            other => panic!("expected BadConfig, got {other:?}"),
        }
    }

    #[test]
    fn sweep_assignment_reaches_the_right_field() {
        let mut config = RunConfig::synthetic_default();
        apply_sweep_value(&mut config, "kappa", 0.01).unwrap();
        assert_eq!(config.estimator.kappa, 0.01);
        apply_sweep_value(&mut config, "init_soc_error_pct", 12.5).unwrap();
        assert!(config.scenarios.iter().all(|s| s.init_soc_error_pct == 12.5));
        apply_sweep_value(&mut config, "p0_theta_rel", 0.01).unwrap();
        assert_eq!(config.estimator.p0_theta_rel, 0.01);
        apply_sweep_value(&mut config, "init_theta_error_rel", 0.1).unwrap();
        assert_eq!(config.estimator.init_theta_error_rel, 0.1);
    }

    #[test]
    fn sweep_rejects_unknown_parameter_and_out_of_range_values() {
        let mut config = RunConfig::synthetic_default();
        assert!(matches!(
            apply_sweep_value(&mut config, "gain_schedule", 1.0),
            Err(CliError::BadConfig(_))
        ));
        // kappa = 1 violates the (0, 1) bound and must be caught by
        // re-validation, not silently accepted.
        assert!(matches!(
            apply_sweep_value(&mut config, "kappa", 1.0),
            Err(CliError::BadConfig(_))
        ));
    }

    #[test]
    fn config_error_maps_to_bad_config_exit() {
        let err: CliError = ConfigError::Invalid { field: "x".into(), reason: "y".into() }.into();
        assert!(matches!(err, CliError::BadConfig(_)));
    }

    #[test]
    fn record_rows_align_records_with_truth() {
        let config = RunConfig::synthetic_default();
        let mut short = config.clone();
        short.scenarios.truncate(1);
        short.scenarios[0].profile = crate::scenario::ProfileSpec::Constant {
            c_rate: 1.0,
            duration_s: 30.0,
        };
        let trace = simulate_scenario(&short, 0, &short.scenarios[0]).unwrap();
        let settings = short.estimator_settings(&short.scenarios[0]);
        let run = scenario::run_estimator(
            &short.cell,
            &trace,
            Algorithm::SgDkf,
            &settings,
            &short.noise_config(),
        )
        .unwrap();
        let rows = record_rows(&trace, &run);
        assert_eq!(rows.len(), 30);
        for (k, row) in rows.iter().enumerate() {
            assert_eq!(row.step, k);
            assert_eq!(row.soc_true, trace.states[k].soc);
            assert_eq!(row.soc_est, run.records[k].state_mean[0]);
            assert_eq!(row.theta_qall, run.records[k].theta_mean[2]);
        }
    }
}
