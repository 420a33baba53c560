//! On-demand agreement among cluster heads.

use crate::consensus::{run_consensus, CommGraph, ConsensusError, ConsensusState};

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementResult {
    /// Mean of the final estimates; `None` when the stage was skipped.
    pub agreed: Option<f64>,
    pub rounds: usize,
    pub converged: bool,
    pub mse_history: Vec<f64>,
    /// One message per edge per direction per round.
    pub messages: u64,
}

/// Runs consensus over the cluster-head peer graph. Skipped (no rounds, no
/// messages) with fewer than two heads.
pub fn consensus_stage(
    estimates: &[f64],
    graph: &CommGraph,
    tol: f64,
    max_iter: usize,
) -> Result<AgreementResult, ConsensusError> {
    if estimates.len() < 2 {
        return Ok(AgreementResult {
            agreed: None,
            rounds: 0,
            converged: true,
            mse_history: Vec::new(),
            messages: 0,
        });
    }
    let init = ConsensusState::new(estimates.to_vec())?;
    let outcome = run_consensus(&init, graph, tol, max_iter)?;
    let agreed = outcome.estimates.mean();
    Ok(AgreementResult {
        agreed: Some(agreed),
        rounds: outcome.iterations,
        converged: outcome.converged,
        mse_history: outcome.mse_history,
        messages: (outcome.iterations * 2 * graph.edge_count()) as u64,
    })
}
