//! Synchronous average consensus over an undirected communication graph.
//!
//! Each round every agent replaces its estimate with a Metropolis-weighted
//! average of its own and its neighbours' estimates, `x <- W x`. Iteration
//! stops once the dispersion `(1/n) sum (x_i - mean)^2` falls below a
//! tolerance. The pairwise form `(1/n^2) sum_{i,j} (x_i - x_j)^2` is exactly
//! twice this value.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsensusError {
    #[error("graph must have at least one agent")]
    NoAgents,
    #[error("self-loop on agent {0}")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) references an agent outside 0..{2}")]
    UnknownAgent(usize, usize, usize),
    #[error("communication graph is not connected")]
    Disconnected,
    #[error("state has {found} estimates but the graph has {expected} agents")]
    Dimension { expected: usize, found: usize },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("max_iter must be at least 1")]
    InvalidMaxIter,
    #[error("estimate {0} is not finite")]
    NonFinite(f64),
    #[error("edge list parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
}

/// Undirected graph on agents `0..n` with no self-loops. Duplicate edges in
/// either orientation collapse to one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl CommGraph {
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, ConsensusError> {
        if n == 0 {
            return Err(ConsensusError::NoAgents);
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(ConsensusError::UnknownAgent(i, j, n));
            }
            if i == j {
                return Err(ConsensusError::SelfLoop(i));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Self { n, edges: set })
    }

    pub fn complete(n: usize) -> Result<Self, ConsensusError> {
        Self::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    pub fn path(n: usize) -> Result<Self, ConsensusError> {
        Self::new(n, (1..n).map(|i| (i - 1, i)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Edges as `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &(i, j) in &self.edges {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }

    pub fn neighbours(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for u in self.neighbours(v) {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Relabels agent `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, ConsensusError> {
        Self::new(self.n, self.edges.iter().map(|&(i, j)| (perm[i], perm[j])))
    }
}

/// Reads an edge list CSV with header `source,target`. The agent count is the
/// larger of `min_agents` and one past the highest index mentioned.
pub fn read_edge_list<R: Read>(reader: R, min_agents: usize) -> Result<CommGraph, ConsensusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| ConsensusError::Parse {
        row: 0,
        message: e.to_string(),
    })?;
    if headers.len() != 2 || &headers[0] != "source" || &headers[1] != "target" {
        return Err(ConsensusError::Parse {
            row: 0,
            message: "expected header `source,target`".into(),
        });
    }
    let mut edges = Vec::new();
    let mut n = min_agents;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| ConsensusError::Parse {
            row,
            message: e.to_string(),
        })?;
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|_| ConsensusError::Parse {
                row,
                message: format!("invalid agent index `{s}`"),
            })
        };
        let (a, b) = (parse(&rec[0])?, parse(&rec[1])?);
        n = n.max(a + 1).max(b + 1);
        edges.push((a, b));
    }
    CommGraph::new(n, edges)
}

/// Metropolis weights: `W_ij = 1 / (1 + max(d_i, d_j))` on edges,
/// `W_ii = 1 - sum_{j != i} W_ij`, zero elsewhere.
pub fn metropolis_weights(graph: &CommGraph) -> Result<DMatrix<f64>, ConsensusError> {
    if !graph.is_connected() {
        return Err(ConsensusError::Disconnected);
    }
    let d = graph.degrees();
    let n = graph.n();
    let mut w = DMatrix::zeros(n, n);
    for (i, j) in graph.edges() {
        let wij = 1.0 / (1.0 + d[i].max(d[j]) as f64);
        w[(i, j)] = wij;
        w[(j, i)] = wij;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    pub estimates: DVector<f64>,
    pub iteration: usize,
}

impl ConsensusState {
    pub fn new(estimates: Vec<f64>) -> Result<Self, ConsensusError> {
        if estimates.is_empty() {
            return Err(ConsensusError::NoAgents);
        }
        if let Some(&bad) = estimates.iter().find(|v| !v.is_finite()) {
            return Err(ConsensusError::NonFinite(bad));
        }
        Ok(Self {
            estimates: DVector::from_vec(estimates),
            iteration: 0,
        })
    }

    pub fn mean(&self) -> f64 {
        self.estimates.mean()
    }
}

/// One synchronous round `x <- W x`.
pub fn consensus_step(
    state: &ConsensusState,
    weights: &DMatrix<f64>,
) -> Result<ConsensusState, ConsensusError> {
    let n = state.estimates.len();
    if weights.nrows() != n || weights.ncols() != n {
        return Err(ConsensusError::Dimension {
            expected: weights.nrows(),
            found: n,
        });
    }
    Ok(ConsensusState {
        estimates: weights * &state.estimates,
        iteration: state.iteration + 1,
    })
}

/// Mean squared deviation of the estimates from their average.
pub fn mse_dispersion(state: &ConsensusState) -> f64 {
    let mean = state.mean();
    state
        .estimates
        .iter()
        .map(|x| (x - mean) * (x - mean))
        .sum::<f64>()
        / state.estimates.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusOutcome {
    pub estimates: DVector<f64>,
    /// Rounds executed.
    pub iterations: usize,
    /// Dispersion before the first round and after each round.
    pub mse_history: Vec<f64>,
    /// False when `max_iter` rounds did not bring the dispersion below `tol`.
    pub converged: bool,
}

pub fn run_consensus(
    initial: &ConsensusState,
    graph: &CommGraph,
    tol: f64,
    max_iter: usize,
) -> Result<ConsensusOutcome, ConsensusError> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(ConsensusError::InvalidTolerance(tol));
    }
    if max_iter == 0 {
        return Err(ConsensusError::InvalidMaxIter);
    }
    if initial.estimates.len() != graph.n() {
        return Err(ConsensusError::Dimension {
            expected: graph.n(),
            found: initial.estimates.len(),
        });
    }
    let weights = metropolis_weights(graph)?;
    let mut state = initial.clone();
    let mut history = vec![mse_dispersion(&state)];
    let mut rounds = 0;
    while *history.last().expect("non-empty") >= tol && rounds < max_iter {
        state = consensus_step(&state, &weights)?;
        history.push(mse_dispersion(&state));
        rounds += 1;
    }
    let converged = *history.last().expect("non-empty") < tol;
    Ok(ConsensusOutcome {
        estimates: state.estimates,
        iterations: rounds,
        mse_history: history,
        converged,
    })
}

/// Writes `iteration,mse` rows.
pub fn write_mse_csv<W: Write>(history: &[f64], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iteration", "mse"])?;
    for (i, mse) in history.iter().enumerate() {
        w.write_record([i.to_string(), mse.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_for_small_graphs() {
        let w = metropolis_weights(&CommGraph::path(2).unwrap()).unwrap();
        assert_eq!(w, DMatrix::from_element(2, 2, 0.5));

        let w = metropolis_weights(&CommGraph::new(1, []).unwrap()).unwrap();
        assert_eq!(w, DMatrix::from_element(1, 1, 1.0));

        let w = metropolis_weights(&CommGraph::complete(3).unwrap()).unwrap();
        for v in w.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_are_doubly_stochastic() {
        let g = CommGraph::new(5, [(0, 1), (1, 2), (1, 3), (3, 4)]).unwrap();
        let w = metropolis_weights(&g).unwrap();
        assert_eq!(w, w.transpose());
        for i in 0..5 {
            assert!((w.row(i).sum() - 1.0).abs() < 1e-15);
            assert!(w.row(i).iter().all(|&v| v >= 0.0));
        }
        assert_eq!(w[(0, 2)], 0.0);
        assert_eq!(w[(0, 1)], 0.25);
    }

    #[test]
    fn graph_validation() {
        assert_eq!(CommGraph::new(0, []), Err(ConsensusError::NoAgents));
        assert_eq!(
            CommGraph::new(2, [(1, 1)]),
            Err(ConsensusError::SelfLoop(1))
        );
        assert!(matches!(
            CommGraph::new(2, [(0, 2)]),
            Err(ConsensusError::UnknownAgent(..))
        ));
        let g = CommGraph::new(3, [(0, 1), (1, 0)]).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(metropolis_weights(&g), Err(ConsensusError::Disconnected));
    }

    #[test]
    fn step_examples() {
        let w = metropolis_weights(&CommGraph::path(2).unwrap()).unwrap();
        let s = consensus_step(&ConsensusState::new(vec![0.0, 2.0]).unwrap(), &w).unwrap();
        assert_eq!(s.estimates.as_slice(), &[1.0, 1.0]);
        assert_eq!(s.iteration, 1);

        let w = metropolis_weights(&CommGraph::complete(3).unwrap()).unwrap();
        let s = consensus_step(&ConsensusState::new(vec![1.0, 2.0, 3.0]).unwrap(), &w).unwrap();
        for v in s.estimates.iter() {
            assert!((v - 2.0).abs() < 1e-15);
        }

        let same = ConsensusState::new(vec![4.5; 3]).unwrap();
        let s = consensus_step(&same, &w).unwrap();
        for v in s.estimates.iter() {
            assert!((v - 4.5).abs() < 1e-15);
        }

        let wrong = ConsensusState::new(vec![1.0; 2]).unwrap();
        assert!(consensus_step(&wrong, &w).is_err());
    }

    #[test]
    fn dispersion_examples() {
        let mse = |v: Vec<f64>| mse_dispersion(&ConsensusState::new(v).unwrap());
        assert_eq!(mse(vec![3.0; 4]), 0.0);
        assert_eq!(mse(vec![0.0, 2.0]), 1.0);
        assert!((mse(vec![1.0, 2.0, 3.0]) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn k3_converges_in_one_round() {
        let out = run_consensus(
            &ConsensusState::new(vec![1.0, 2.0, 3.0]).unwrap(),
            &CommGraph::complete(3).unwrap(),
            1e-12,
            100,
        )
        .unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
        assert_eq!(out.mse_history.len(), 2);
        assert!(out.estimates.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn consensual_start_needs_no_rounds() {
        let out = run_consensus(
            &ConsensusState::new(vec![7.0; 4]).unwrap(),
            &CommGraph::path(4).unwrap(),
            1e-9,
            10,
        )
        .unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.mse_history, vec![0.0]);
    }

    #[test]
    fn path_graph_reaches_initial_mean() {
        let init = vec![0.3, -1.2, 4.4, 2.0, 0.9];
        let mean = init.iter().sum::<f64>() / 5.0;
        let out = run_consensus(
            &ConsensusState::new(init).unwrap(),
            &CommGraph::path(5).unwrap(),
            1e-9,
            10_000,
        )
        .unwrap();
        assert!(out.converged);
        assert!(out.estimates.iter().all(|v| (v - mean).abs() < 1e-4));
    }

    #[test]
    fn hitting_max_iter_is_a_flag_not_an_error() {
        let out = run_consensus(
            &ConsensusState::new(vec![0.0, 10.0, 0.0, 10.0, 0.0, 10.0]).unwrap(),
            &CommGraph::path(6).unwrap(),
            1e-15,
            3,
        )
        .unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 3);
        assert_eq!(out.mse_history.len(), 4);
    }

    #[test]
    fn argument_validation() {
        let s = ConsensusState::new(vec![1.0, 2.0]).unwrap();
        let g = CommGraph::path(2).unwrap();
        assert!(run_consensus(&s, &g, 0.0, 1).is_err());
        assert!(run_consensus(&s, &g, 1e-3, 0).is_err());
        assert!(run_consensus(&s, &CommGraph::path(3).unwrap(), 1e-3, 5).is_err());
        assert!(ConsensusState::new(vec![]).is_err());
        assert!(ConsensusState::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn edge_list_csv() {
        let g = read_edge_list("source,target\n0,1\n1,2\n2,0\n".as_bytes(), 0).unwrap();
        assert_eq!(g, CommGraph::complete(3).unwrap());
        let g = read_edge_list("source,target\n0,1\n".as_bytes(), 4).unwrap();
        assert_eq!(g.n(), 4);
        assert!(matches!(
            read_edge_list("source,target\n0,x\n".as_bytes(), 0),
            Err(ConsensusError::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn mse_csv() {
        let mut buf = Vec::new();
        write_mse_csv(&[0.5, 0.25], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iteration,mse\n0,0.5\n1,0.25\n"
        );
    }
}
