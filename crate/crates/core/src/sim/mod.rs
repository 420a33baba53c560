//! Three-level pipeline-monitoring simulation: sensor nodes filter and
//! report on change, cluster heads fuse and aggregate, the gateway collects
//! alerts, and cluster heads agree on shared quantities on demand.
//!
//! A run is single-threaded and fully determined by its configuration.

pub mod cluster;
pub mod config;
pub mod detect;
pub mod energy;
pub mod metrics;
pub mod network;
pub mod node;
pub mod output;
pub mod peer;
pub mod world;

#[cfg(test)]
pub(crate) mod testing;

use thiserror::Error;

use crate::consensus::ConsensusError;
use crate::ekf::EkfError;
use crate::fusvaf::FusvafError;
use crate::trace::{NodeId, SensorKind, TraceError};

use cluster::{cluster_stage, ClusterKindOutput, ClusterSettings};
use config::{ClusterMode, ConfigError, ConsensusTrigger, ScenarioConfig};
use detect::{detect_events, match_detections, ClusterSeries, Detection, EventOutcome};
use energy::EnergyModel;
use metrics::RunMetrics;
use network::{Level, MessageKind, Network};
use node::{node_stage, NodeOutput, NodeSettings};
use peer::{consensus_stage, AgreementResult};
use world::{generate_world, World};

pub use output::write_outputs;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("node {node} {kind}: {source}")]
    Node {
        node: NodeId,
        kind: SensorKind,
        #[source]
        source: EkfError,
    },
    #[error("cluster {cluster} {kind}: {source}")]
    Cluster {
        cluster: String,
        kind: SensorKind,
        #[source]
        source: FusvafError,
    },
    #[error("consensus at tick {tick}: {source}")]
    Consensus {
        tick: u64,
        #[source]
        source: ConsensusError,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

impl SimError {
    /// True for problems with the scenario itself rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(self, SimError::Config(_))
    }
}

/// One sensor kind at one cluster head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutput {
    pub id: String,
    pub kinds: Vec<ClusterKindOutput>,
}

impl ClusterOutput {
    pub fn kind(&self, kind: SensorKind) -> Option<&ClusterKindOutput> {
        self.kinds.iter().find(|k| k.kind == kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryTrigger {
    Detection,
    Periodic,
}

impl QueryTrigger {
    pub fn name(self) -> &'static str {
        match self {
            QueryTrigger::Detection => "detection",
            QueryTrigger::Periodic => "periodic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusQuery {
    pub trigger: QueryTrigger,
    pub window: u64,
    pub tick: u64,
    /// Cluster-head estimates going in, in cluster order.
    pub estimates: Vec<f64>,
    pub result: AgreementResult,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub config: ScenarioConfig,
    pub world: World,
    /// Parallel to `world.streams`.
    pub nodes: Vec<NodeOutput>,
    pub clusters: Vec<ClusterOutput>,
    pub network: Network,
    pub detections: Vec<Detection>,
    pub events: Vec<EventOutcome>,
    pub queries: Vec<ConsensusQuery>,
    pub metrics: RunMetrics,
}

struct Pending {
    tick: u64,
    src: String,
    dst: String,
    bits: u64,
    kind: MessageKind,
    level: Level,
}

/// Generates the world and pushes it through every stage.
pub fn run_simulation(config: &ScenarioConfig) -> Result<SimulationRun, SimError> {
    config.validate()?;
    let world = generate_world(config);
    let horizon = config.horizon;
    let fusion = &config.fusion;
    let bits = fusion.sample_bits;
    let gateway = config.topology.gateway.as_str();
    let mut pending = Vec::new();
    let mut ops = 0u64;

    // node stage
    let mut nodes = Vec::with_capacity(world.streams.len());
    for s in &world.streams {
        let settings = NodeSettings {
            ekf: fusion.node_ekf.then_some((fusion.ekf_q, fusion.ekf_r)),
            delta: config.report_delta(s.kind),
            ekf_step_ops: config.energy.ekf_step_ops,
        };
        let out = node_stage(&s.measured_trace()?, &settings).map_err(|source| SimError::Node {
            node: s.node.clone(),
            kind: s.kind,
            source,
        })?;
        let cluster = &config.topology.clusters[s.cluster].id;
        for (tick, _) in &out.reports {
            pending.push(Pending {
                tick: *tick,
                src: s.node.to_string(),
                dst: cluster.clone(),
                bits,
                kind: MessageKind::Raw,
                level: Level::Node,
            });
            if fusion.cluster == ClusterMode::Relay {
                pending.push(Pending {
                    tick: *tick,
                    src: cluster.clone(),
                    dst: gateway.to_owned(),
                    bits,
                    kind: MessageKind::Raw,
                    level: Level::Cluster,
                });
            }
        }
        ops += out.ops;
        nodes.push(out);
    }

    // cluster stage
    let mut clusters = Vec::with_capacity(config.topology.clusters.len());
    for (c, spec) in config.topology.clusters.iter().enumerate() {
        let mut kinds = Vec::new();
        for kind in SensorKind::ALL {
            let members: Vec<usize> = world
                .streams
                .iter()
                .enumerate()
                .filter(|(_, s)| s.cluster == c && s.kind == kind)
                .map(|(i, _)| i)
                .collect();
            if members.is_empty() {
                continue;
            }
            let ids: Vec<NodeId> = members
                .iter()
                .map(|&i| world.streams[i].node.clone())
                .collect();
            let reports: Vec<&[(u64, f64)]> = members
                .iter()
                .map(|&i| nodes[i].reports.as_slice())
                .collect();
            let wrap = |source| SimError::Cluster {
                cluster: spec.id.clone(),
                kind,
                source,
            };
            let settings = ClusterSettings {
                mode: fusion.cluster,
                window: fusion.window,
                fusvaf: config.fusvaf_config(kind).map_err(wrap)?,
                fault_persistence: fusion.fault_persistence,
                fusvaf_ops_per_input: config.energy.fusvaf_ops_per_input,
                aggregate_ops_per_value: config.energy.aggregate_ops_per_value,
            };
            let predictor = fusion.fusvaf.predictor().map_err(wrap)?;
            let out =
                cluster_stage(kind, &ids, &reports, horizon, &settings, predictor).map_err(wrap)?;
            ops += out.ops;
            kinds.push(out);
        }
        if let Some(first) = kinds.first() {
            for (w, record) in first.windows.iter().enumerate() {
                let present = kinds
                    .iter()
                    .filter(|k| k.windows[w].estimate.is_some())
                    .count() as u64;
                let (kind, payload) = match fusion.cluster {
                    ClusterMode::Fusvaf => (MessageKind::Fused, bits * present),
                    ClusterMode::Aggregate => (MessageKind::Aggregated, 4 * bits * present),
                    ClusterMode::Relay => continue,
                };
                if present > 0 {
                    pending.push(Pending {
                        tick: record.end,
                        src: spec.id.clone(),
                        dst: gateway.to_owned(),
                        bits: payload,
                        kind,
                        level: Level::Cluster,
                    });
                }
            }
        }
        clusters.push(ClusterOutput {
            id: spec.id.clone(),
            kinds,
        });
    }

    // detection
    let series: Vec<ClusterSeries<'_>> = clusters
        .iter()
        .map(|c| ClusterSeries {
            pressure: c.kind(SensorKind::Pressure).map(|k| k.windows.as_slice()),
            presence: [SensorKind::Pir, SensorKind::Magnetic]
                .iter()
                .filter_map(|kind| c.kind(*kind).map(|k| k.windows.as_slice()))
                .collect(),
        })
        .collect();
    let mut detections = detect_events(config, &series);
    let events = match_detections(config, &mut detections);
    for d in &detections {
        let head = &config.topology.clusters[d.cluster].id;
        if fusion.cluster != ClusterMode::Relay {
            pending.push(Pending {
                tick: d.tick,
                src: head.clone(),
                dst: gateway.to_owned(),
                bits,
                kind: MessageKind::Alert,
                level: Level::Cluster,
            });
        }
        if let (Some(tick), Some(uav)) = (d.validated_tick, &config.topology.uav) {
            pending.push(Pending {
                tick,
                src: uav.id.clone(),
                dst: gateway.to_owned(),
                bits,
                kind: MessageKind::Alert,
                level: Level::Uav,
            });
        }
    }

    // consensus
    let policy = &fusion.consensus;
    let windows_total = horizon.div_ceil(fusion.window);
    let triggers: Vec<(QueryTrigger, u64)> = match policy.trigger {
        ConsensusTrigger::Never => Vec::new(),
        ConsensusTrigger::OnDetection => detections
            .iter()
            .map(|d| (QueryTrigger::Detection, d.window))
            .collect(),
        ConsensusTrigger::Periodic => (0..windows_total)
            .filter(|w| (w + 1) % policy.period_windows == 0)
            .map(|w| (QueryTrigger::Periodic, w))
            .collect(),
    };
    let mut queries = Vec::new();
    if clusters.len() >= 2 {
        let graph = config
            .peer_graph()
            .map_err(|source| SimError::Consensus { tick: 0, source })?;
        for (trigger, window) in triggers {
            let estimates: Option<Vec<f64>> = clusters
                .iter()
                .map(|c| {
                    c.kind(policy.quantity)
                        .and_then(|k| k.windows[window as usize].estimate)
                })
                .collect();
            let Some(estimates) = estimates else { continue };
            let tick = ((window + 1) * fusion.window).min(horizon) - 1;
            let result = consensus_stage(&estimates, &graph, policy.tol, policy.max_iter)
                .map_err(|source| SimError::Consensus { tick, source })?;
            for _ in 0..result.rounds {
                for (i, j) in graph.edges() {
                    let (a, b) = (
                        &config.topology.clusters[i].id,
                        &config.topology.clusters[j].id,
                    );
                    for (src, dst) in [(a, b), (b, a)] {
                        pending.push(Pending {
                            tick,
                            src: src.clone(),
                            dst: dst.clone(),
                            bits,
                            kind: MessageKind::Consensus,
                            level: Level::Cluster,
                        });
                    }
                }
            }
            ops += config.energy.consensus_ops_per_message * result.messages;
            queries.push(ConsensusQuery {
                trigger,
                window,
                tick,
                estimates,
                result,
            });
        }
    }

    pending.sort_by_key(|p| p.tick);
    let mut network = Network::new();
    for p in pending {
        network.send(&p.src, &p.dst, p.tick, p.bits, p.kind, p.level);
    }

    let metrics = RunMetrics::collect(
        config,
        &world,
        &nodes,
        &clusters,
        &network,
        &detections,
        &events,
        &queries,
        ops,
        EnergyModel::from_spec(&config.energy),
    );
    Ok(SimulationRun {
        config: config.clone(),
        world,
        nodes,
        clusters,
        network,
        detections,
        events,
        queries,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::{EventKind, EventSpec, PatrolVisit, UavSpec};
    use crate::sim::testing::small_config;

    fn clean(mut config: ScenarioConfig) -> ScenarioConfig {
        config.events.clear();
        for kind in SensorKind::ALL {
            if !kind.is_binary() {
                match kind {
                    SensorKind::Pressure => config.signals.pressure.noise_std = 0.0,
                    SensorKind::Temperature => config.signals.temperature.noise_std = 0.0,
                    _ => config.signals.humidity.noise_std = 0.0,
                }
            }
        }
        config
    }

    #[test]
    fn clean_world_is_quiet_and_exact() {
        let run = run_simulation(&clean(small_config())).unwrap();
        assert!(run.detections.is_empty());
        assert!(run.metrics.rmse.values().all(|r| *r == 0.0));
        // one report per stream, then one fused message per cluster window
        let streams = run.world.streams.len() as u64;
        let windows = run.config.horizon.div_ceil(run.config.fusion.window);
        let raw = run.network.by_kind()[&MessageKind::Raw].messages;
        assert_eq!(raw, streams);
        assert_eq!(
            run.network.by_kind()[&MessageKind::Fused].messages,
            2 * windows
        );
    }

    #[test]
    fn every_message_is_received_once() {
        let run = run_simulation(&small_config()).unwrap();
        let mut received: Vec<u64> = run
            .network
            .entities()
            .flat_map(|e| run.network.received_by(e).to_vec())
            .collect();
        received.sort_unstable();
        let ids: Vec<u64> = run.network.messages().iter().map(|m| m.id).collect();
        assert_eq!(received, ids);
        for m in run.network.messages() {
            assert!(run.network.sent_by(&m.src).contains(&m.id));
            assert!(run.network.received_by(&m.dst).contains(&m.id));
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let a = run_simulation(&small_config()).unwrap();
        let b = run_simulation(&small_config()).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.network.messages(), b.network.messages());
    }

    #[test]
    fn baseline_sends_every_sample_twice() {
        let mut config = small_config();
        config.fusion.node_ekf = false;
        config.fusion.cluster = ClusterMode::Relay;
        let run = run_simulation(&config).unwrap();
        let samples = run.world.streams.len() as u64 * config.horizon;
        assert_eq!(run.network.by_level()[&Level::Node].messages, samples);
        assert_eq!(
            run.network.by_kind()[&MessageKind::Raw].messages,
            2 * samples
        );
        assert_eq!(run.metrics.compute_ops, 0);
    }

    #[test]
    fn intrusion_detected_alerted_and_validated() {
        let mut config = clean(small_config());
        config.events = vec![EventSpec {
            kind: EventKind::Intrusion,
            start: 22,
            end: 31,
            location_m: 300.0,
            magnitude: 0.0,
            radius_m: 1.0,
        }];
        config.topology.uav = Some(UavSpec {
            id: "uav".into(),
            patrol: vec![PatrolVisit {
                start: 20,
                end: 40,
                cluster: "b".into(),
            }],
        });
        let run = run_simulation(&config).unwrap();
        assert_eq!(run.detections.len(), 1);
        let d = &run.detections[0];
        assert_eq!((d.cluster, d.tick, d.event), (1, 29, Some(0)));
        assert_eq!(d.validated_tick, Some(29));
        assert_eq!(run.network.by_kind()[&MessageKind::Alert].messages, 2);
        assert_eq!(run.metrics.false_positives, 0);
    }

    #[test]
    fn on_detection_consensus_runs_between_heads() {
        let mut config = clean(small_config());
        config.events = vec![EventSpec {
            kind: EventKind::Leak,
            start: 0,
            end: 59,
            location_m: 0.0,
            magnitude: 2.0 * config.detection.leak_threshold,
            radius_m: 150.0,
        }];
        let run = run_simulation(&config).unwrap();
        assert!(!run.queries.is_empty());
        let q = &run.queries[0];
        assert_eq!(q.estimates.len(), 2);
        let mean = q.estimates.iter().sum::<f64>() / 2.0;
        assert!((q.result.agreed.unwrap() - mean).abs() < 1e-9);
        let edges = run.config.peer_graph().unwrap().edge_count() as u64;
        assert_eq!(q.result.messages, 2 * edges * q.result.rounds as u64);
    }

    #[test]
    fn single_cluster_skips_consensus() {
        let mut config = small_config();
        for n in &mut config.topology.nodes {
            n.cluster = "a".into();
        }
        config.topology.clusters.truncate(1);
        config.topology.clusters[0].peers.clear();
        config.fusion.consensus.trigger = ConsensusTrigger::Periodic;
        config.topology.uav = None;
        let run = run_simulation(&config).unwrap();
        assert!(run.queries.is_empty());
        assert_eq!(run.network.by_kind()[&MessageKind::Consensus].messages, 0);
    }
}
