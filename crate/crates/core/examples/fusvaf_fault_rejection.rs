//! Injects a single large spike into one of three nodes and compares the
//! fused stream with the spike-free run.
//!
//! cargo run --example fusvaf_fault_rejection

use pipeline_fusion::fusvaf::{fusvaf_stream, ConstantVelocityPredictor, FusvafConfig};
use pipeline_fusion::trace::{SensorKind, Trace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let noise = Normal::new(0.0, 0.5)?;
    let spike_tick = 40usize;
    let nodes: Vec<Vec<(u64, f64)>> = (0..3)
        .map(|_| {
            (0..60)
                .map(|t| (t, 500.0 + 0.05 * t as f64 + noise.sample(&mut rng)))
                .collect()
        })
        .collect();
    let build = |spike: f64| -> Result<Vec<Trace>, Box<dyn std::error::Error>> {
        let mut out = Vec::new();
        for (i, samples) in nodes.iter().enumerate() {
            let mut s = samples.clone();
            if i == 2 {
                s[spike_tick].1 += spike;
            }
            out.push(Trace::from_samples(
                format!("n{i}"),
                SensorKind::Pressure,
                &s,
            )?);
        }
        Ok(out)
    };
    let run = |traces: &[Trace]| {
        let predictor = ConstantVelocityPredictor::new(0.1, 0.01, 0.1).expect("valid noise");
        fusvaf_stream(traces, FusvafConfig::default(), Box::new(predictor))
    };

    let clean = run(&build(0.0)?)?;
    let at = &clean[spike_tick];
    let spike = 5.0 * at.gate.width();
    let faulty = run(&build(spike)?)?;
    let hit = &faulty[spike_tick];
    println!("gate width at tick {spike_tick}: {:.3}", at.gate.width());
    println!(
        "spike of {spike:.3} gets confidence {}",
        hit.inputs[2].unwrap().1
    );
    println!(
        "fused with spike {:.4}, without {:.4}, relative change {:.2e}",
        hit.fused,
        at.fused,
        ((hit.fused - at.fused) / at.fused).abs()
    );
    Ok(())
}
