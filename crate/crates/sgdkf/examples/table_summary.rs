//! Runs the complete built-in suite — two load profiles crossed with 0 % and
//! 30 % initial state-of-charge errors, both algorithms on shared truth —
//! and prints the summary table.
//!
//! ```text
//! cargo run --release --example table_summary
//! ```
//!
//! On correctly initialized rows the two algorithms agree (the gate stays
//! out of the way); on the 30 % rows the gated filter recovers while the
//! unguarded dual filter is left with corrupted parameters.

use std::time::Instant;

use sgdkf::scenario::{generate_profile, run_estimator, simulate_truth, Algorithm};
use sgdkf::RunConfig;

fn main() {
    let config = RunConfig::synthetic_default();
    let noise = config.noise_config();
    let start = Instant::now();

    println!(
        "{:<10} {:>6} {:<9} {:>10} {:>10} {:>10} {:>8}",
        "condition", "err0", "algo", "rmse[pp]", "max[pp]", "conv", "frozen"
    );
    for (index, spec) in config.scenarios.iter().enumerate() {
        let profile = generate_profile(&spec.profile, &config.cell).unwrap();
        let trace = simulate_truth(
            &config.cell,
            &config.theta_nominal(),
            &profile,
            spec.initial_soc,
            config.noise.truth_noise_std_v,
            config.scenario_noise_seed(index),
            &spec.name,
        )
        .unwrap();
        let settings = config.estimator_settings(spec);
        for algorithm in Algorithm::ALL {
            let run = run_estimator(&config.cell, &trace, algorithm, &settings, &noise).unwrap();
            let m = &run.metrics;
            println!(
                "{:<10} {:>5}% {:<9} {:>10.4} {:>10.4} {:>10} {:>8.4}",
                m.condition,
                m.init_soc_error_pct,
                m.algorithm.as_str(),
                m.rmse_pct,
                m.max_err_pct,
                m.convergence_step,
                m.freeze_fraction
            );
        }
    }
    println!();
    println!("suite wall time: {:.1} ms", start.elapsed().as_secs_f64() * 1e3);
}
