//! Filters the bundled 20-sample stream with a random-walk EKF (q = r = 0.1)
//! and compares the spread of estimates and measurements.
//!
//! cargo run --example ekf_scalar_stream

use std::path::PathBuf;

use pipeline_fusion::ekf::{run_filter, FilterState, ProcessModel};
use pipeline_fusion::trace::{load_trace, SensorKind};

fn variance(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/traces/ekf_fixture_20.csv");
    let trace = load_trace(&path, "fixture", SensorKind::Temperature)?;
    let model = ProcessModel::random_walk(0.1, 0.1)?;
    let init = FilterState::scalar(trace.readings()[0].value, 1.0)?;
    let steps = run_filter(&model, &init, &trace)?;

    println!(
        "{:>4} {:>10} {:>10} {:>9} {:>10}",
        "tick", "measured", "estimate", "P", "|innov|"
    );
    for s in &steps {
        println!(
            "{:>4} {:>10.4} {:>10.4} {:>9.5} {:>10.4}",
            s.timestamp,
            s.measurement[0],
            s.posterior.x_hat[0],
            s.posterior.covariance[(0, 0)],
            s.innovation_magnitude()
        );
    }
    let measured: Vec<f64> = trace.values().collect();
    let estimated: Vec<f64> = steps.iter().map(|s| s.posterior.x_hat[0]).collect();
    println!(
        "sample variance: measured {:.4}, estimated {:.4}",
        variance(&measured),
        variance(&estimated)
    );
    Ok(())
}
