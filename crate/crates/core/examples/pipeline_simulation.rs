//! Runs the bundled ten-node scenario and prints its summary.
//!
//! cargo run --example pipeline_simulation [-- path/to/scenario.toml]

use std::path::PathBuf;

use pipeline_fusion::sim::config::ScenarioConfig;
use pipeline_fusion::sim::output::summary;
use pipeline_fusion::sim::run_simulation;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/scenarios/pipeline_10n2c.toml")
        });
    let config = ScenarioConfig::load(&path, &[])?;
    let run = run_simulation(&config)?;
    print!("{}", summary(&run, &[]));

    for d in &run.detections {
        println!(
            "{} at {} tick {} ({}{})",
            d.kind,
            config.topology.clusters[d.cluster].id,
            d.tick,
            if d.event.is_some() {
                "matched"
            } else {
                "false positive"
            },
            if d.validated() { ", UAV validated" } else { "" },
        );
    }
    for c in &run.clusters {
        for k in &c.kinds {
            for s in &k.suspected {
                println!(
                    "{} suspects {} {} from tick {}",
                    c.id, s.node, s.kind, s.tick
                );
            }
        }
    }
    Ok(())
}
