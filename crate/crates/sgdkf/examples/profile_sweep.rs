//! Sweeps the initial state-of-charge error from 0 % to 40 % on the
//! constant-current condition and prints how each algorithm degrades.
//!
//! ```text
//! cargo run --release --example profile_sweep
//! ```
//!
//! The gated filter's cost is flat: past the point where the gate engages,
//! larger initial errors just freeze the parameter filter for longer. The
//! unguarded filter degrades with the size of the transient because all of
//! it leaks into the parameter estimates.

use sgdkf::scenario::{generate_profile, run_estimator, simulate_truth, Algorithm};
use sgdkf::RunConfig;

fn main() {
    let config = RunConfig::synthetic_default();
    let (index, base) = config.find_scenario("cc1c_0").expect("built-in scenario");

    // One shared truth trace: only the estimator's starting point varies.
    let profile = generate_profile(&base.profile, &config.cell).unwrap();
    let trace = simulate_truth(
        &config.cell,
        &config.theta_nominal(),
        &profile,
        base.initial_soc,
        config.noise.truth_noise_std_v,
        config.scenario_noise_seed(index),
        &base.name,
    )
    .unwrap();
    let noise = config.noise_config();

    println!(
        "{:>6} {:>12} {:>12} {:>12} {:>10}",
        "err0", "rmse gated", "rmse plain", "ratio", "frozen"
    );
    for err_pct in [0.0, 5.0, 10.0, 20.0, 30.0, 40.0] {
        let mut spec = base.clone();
        spec.init_soc_error_pct = err_pct;
        let settings = config.estimator_settings(&spec);
        let gated =
            run_estimator(&config.cell, &trace, Algorithm::SgDkf, &settings, &noise).unwrap();
        let plain =
            run_estimator(&config.cell, &trace, Algorithm::DualEkf, &settings, &noise).unwrap();
        println!(
            "{:>5}% {:>12.4} {:>12.4} {:>12.3} {:>10.4}",
            err_pct,
            gated.metrics.rmse_pct,
            plain.metrics.rmse_pct,
            gated.metrics.rmse_pct / plain.metrics.rmse_pct,
            gated.metrics.freeze_fraction
        );
    }
}
