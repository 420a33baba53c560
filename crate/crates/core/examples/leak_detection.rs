//! Sweeps leak magnitude on the bundled scenario and reports whether and how
//! fast the leak is detected.
//!
//! cargo run --example leak_detection

use std::path::PathBuf;

use pipeline_fusion::sim::config::{EventKind, ScenarioConfig};
use pipeline_fusion::sim::run_simulation;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/scenarios/pipeline_10n2c.toml");
    let base = ScenarioConfig::load(&path, &[])?;
    let leak = base
        .events
        .iter()
        .position(|e| e.kind == EventKind::Leak)
        .ok_or("scenario has no leak")?;
    let threshold = base.detection.leak_threshold;
    println!("threshold {threshold}, window {} ticks", base.fusion.window);
    println!(
        "{:>10} {:>8} {:>9} {:>8} {:>6}",
        "magnitude", "onset", "detected", "latency", "fp"
    );
    for factor in [0.5, 1.0, 1.5, 2.0, 3.0, 4.0] {
        let config =
            base.with_overrides(&[format!("events.{leak}.magnitude={}", factor * threshold)])?;
        let run = run_simulation(&config)?;
        let e = &run.events[leak];
        let show = |v: Option<u64>| v.map_or("-".to_string(), |v| v.to_string());
        println!(
            "{:>10.1} {:>8} {:>9} {:>8} {:>6}",
            factor * threshold,
            show(e.onset),
            show(e.detected_tick),
            show(e.latency),
            run.metrics.false_positives
        );
    }
    Ok(())
}
