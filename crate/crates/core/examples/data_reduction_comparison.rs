//! Runs the bundled scenario twice with the same seed: the full pipeline and
//! a baseline that relays every raw sample. Prints traffic, energy and
//! accuracy side by side.
//!
//! cargo run --example data_reduction_comparison

use std::path::PathBuf;

use pipeline_fusion::sim::config::{ClusterMode, ScenarioConfig};
use pipeline_fusion::sim::run_simulation;
use pipeline_fusion::trace::SensorKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/scenarios/pipeline_10n2c.toml");
    let fused = ScenarioConfig::load(&path, &[])?;
    let mut baseline = fused.clone();
    baseline.fusion.node_ekf = false;
    baseline.fusion.cluster = ClusterMode::Relay;

    let a = run_simulation(&fused)?.metrics;
    let b = run_simulation(&baseline)?.metrics;
    println!("{:<22} {:>14} {:>14}", "", "pipeline", "raw relay");
    println!(
        "{:<22} {:>14} {:>14}",
        "messages", a.total.messages, b.total.messages
    );
    println!("{:<22} {:>14} {:>14}", "bits", a.total.bits, b.total.bits);
    println!(
        "{:<22} {:>14.3e} {:>14.3e}",
        "radio energy", a.energy.radio, b.energy.radio
    );
    println!(
        "{:<22} {:>14.3e} {:>14.3e}",
        "compute energy", a.energy.compute, b.energy.compute
    );
    for kind in SensorKind::ALL.into_iter().filter(|k| !k.is_binary()) {
        if let (Some(x), Some(y)) = (a.rmse_of(kind), b.rmse_of(kind)) {
            println!("{:<22} {:>14.4} {:>14.4}", format!("rmse {kind}"), x, y);
        }
    }
    println!(
        "bits kept: {:.1}%",
        100.0 * a.total.bits as f64 / b.total.bits as f64
    );
    Ok(())
}
