//! Average consensus on a ring of ten cluster heads and on the bundled
//! triangle; prints the dispersion after each round.
//!
//! cargo run --example consensus_decay

use std::fs::File;
use std::path::PathBuf;

use pipeline_fusion::consensus::{read_edge_list, run_consensus, CommGraph, ConsensusState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 10;
    let ring = CommGraph::new(n, (0..n).map(|i| (i, (i + 1) % n)))?;
    let start: Vec<f64> = (0..n)
        .map(|i| 20.0 + (i as f64 * 1.7).sin() * 3.0)
        .collect();
    let state = ConsensusState::new(start)?;
    let out = run_consensus(&state, &ring, 1e-9, 1000)?;
    println!(
        "ring of {n}: mean {:.6}, {} rounds",
        state.mean(),
        out.iterations
    );
    for (k, mse) in out.mse_history.iter().enumerate().step_by(5) {
        println!("  {k:>4} {mse:.3e}");
    }
    println!(
        "  final {:?}",
        out.estimates
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect::<Vec<_>>()
    );

    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/graphs/k3.csv");
    let k3 = read_edge_list(File::open(path)?, 3)?;
    let out = run_consensus(&ConsensusState::new(vec![1.0, 2.0, 3.0])?, &k3, 1e-12, 10)?;
    println!(
        "triangle: {:?} after {} round, history {:?}",
        out.estimates.as_slice(),
        out.iterations,
        out.mse_history
    );
    Ok(())
}
