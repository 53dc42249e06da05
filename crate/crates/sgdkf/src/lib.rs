//! Stability-guaranteed dual Kalman filtering for lithium-ion state-of-charge
//! estimation.
//!
//! The crate pairs a state extended Kalman filter over a five-state
//! reduced-order electrochemical cell model with a random-walk parameter
//! filter, and gates the parameter updates behind a Lyapunov-derived
//! innovation dead zone: while the measurement innovation exceeds a
//! stability threshold the parameter estimate is frozen bit-exactly, so
//! large state transients cannot be absorbed into the slowly varying
//! physical parameters.
//!
//! Module map:
//!
//! * [`numerics`] — dense linear-algebra kernel: discrete Lyapunov solver,
//!   spectral radius, matrix two-norm, smallest symmetric eigenvalue, and a
//!   central-difference Jacobian.
//! * [`battery`] — the reduced-order cell model: state recursion, averaged
//!   and surface stoichiometries, concentration and reaction overpotentials,
//!   terminal voltage, and its Jacobians.
//! * [`filters`] — generic scalar-measurement EKF machinery instantiated
//!   twice: the state filter and the random-walk parameter filter.
//! * [`supervisor`] — stability constants from the Lyapunov equation, the
//!   innovation dead-zone threshold, the gate, and the per-step session
//!   driver for the gated and ungated estimators.
//! * [`scenario`] — synthetic-twin experiment harness: current profiles,
//!   truth simulation with injected measurement noise, estimator runs, and
//!   accuracy metrics.
//! * [`config`] — JSON run configuration with strict validation.
//! * [`cli`] — `simulate` / `estimate` / `sweep` commands and the CSV
//!   report writers behind the `sgdkf` binary.
//!
//! Runnable walkthroughs live in `examples/` (one per capability):
//!
//! ```text
//! cargo run --example stability_constants   # Lyapunov constants + dead-zone shape
//! cargo run --example simulate_discharge    # truth-twin constant-current discharge
//! cargo run --example nominal_tracking      # exact-init run: innovations stay at zero
//! cargo run --example soc_error_recovery    # 30% SOC init error, gated vs ungated
//! cargo run --example table_summary         # full 8-run comparison table
//! cargo run --example profile_sweep         # initial-error sweep
//! ```

pub mod battery;
pub mod cli;
pub mod config;
pub mod filters;
pub mod numerics;
pub mod scenario;
pub mod supervisor;

pub use battery::{CellParameters, ElectrochemicalState, ModelError, OcvCurve, ThetaVector};
pub use config::{ConfigError, EstimatorSpec, NoiseSpec, RunConfig, ScenarioSpec, CONFIG_VERSION};
pub use filters::{CovarianceForm, FilterError, GaussianEstimate, NoiseConfig};
pub use scenario::{
    Algorithm, EstimatorRun, EstimatorSettings, ProfileSpec, RunMetrics, ScenarioError,
    TruthTrace,
};
pub use supervisor::{
    DescentAudit, Session, SessionSettings, StabilityConstants, StepRecord, SupervisorError,
};
