//! Replays two temperature nodes through FUSVAF and checks that every fused
//! value stays inside the envelope of validated readings and the prediction.
//!
//! cargo run --example fusvaf_two_nodes

use std::path::PathBuf;

use pipeline_fusion::fusvaf::{fusvaf_stream, EkfPredictor, FusvafConfig};
use pipeline_fusion::trace::{load_trace, SensorKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/traces");
    let traces = vec![
        load_trace(
            data.join("temperature_node1.csv"),
            "node1",
            SensorKind::Temperature,
        )?,
        load_trace(
            data.join("temperature_node2.csv"),
            "node2",
            SensorKind::Temperature,
        )?,
    ];
    let steps = fusvaf_stream(
        &traces,
        FusvafConfig::default(),
        Box::new(EkfPredictor::new(0.1, 0.1)?),
    )?;

    let mut outside = 0;
    println!(
        "{:>4} {:>8} {:>8} {:>8} {:>6} {:>8} {:>6}",
        "tick", "fused", "pred", "z1", "s1", "z2", "s2"
    );
    for s in &steps {
        let (z1, s1) = s.inputs[0].unwrap();
        let (z2, s2) = s.inputs[1].unwrap();
        println!(
            "{:>4} {:>8.3} {:>8.3} {:>8.3} {:>6.3} {:>8.3} {:>6.3}",
            s.tick, s.fused, s.prediction, z1, s1, z2, s2
        );
        let lo = s.valid_values().fold(s.prediction, f64::min);
        let hi = s.valid_values().fold(s.prediction, f64::max);
        if s.fused < lo - 1e-9 || s.fused > hi + 1e-9 {
            outside += 1;
        }
    }
    println!("{} ticks, {outside} outside the envelope", steps.len());
    Ok(())
}
