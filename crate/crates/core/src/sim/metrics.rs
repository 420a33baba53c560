//! Run summary, one CSV row per run.

use std::collections::BTreeMap;

use super::config::{ClusterMode, ScenarioConfig};
use super::detect::{Detection, EventOutcome};
use super::energy::{EnergyBreakdown, EnergyModel};
use super::network::{Level, MessageKind, Network, Traffic};
use super::node::{held_rmse, NodeOutput};
use super::world::World;
use super::{ClusterOutput, ConsensusQuery};
use crate::trace::SensorKind;

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    pub horizon: u64,
    pub cluster_mode: ClusterMode,
    pub node_ekf: bool,
    pub total: Traffic,
    pub by_level: BTreeMap<Level, Traffic>,
    pub by_kind: BTreeMap<MessageKind, Traffic>,
    pub compute_ops: u64,
    pub ops_per_bit: u64,
    pub energy: EnergyBreakdown,
    /// Held value at the cluster head against ground truth, pooled over every
    /// stream of each kind.
    pub rmse: BTreeMap<SensorKind, f64>,
    /// Cluster estimate against the members' mean ground truth at each window
    /// end, pooled over clusters; analog kinds only.
    pub fused_rmse: BTreeMap<SensorKind, f64>,
    pub events: usize,
    /// Events whose signal reaches the detection threshold.
    pub detectable_events: usize,
    pub detected_events: usize,
    pub detections: usize,
    pub false_positives: usize,
    pub validated: usize,
    pub mean_latency: Option<f64>,
    pub max_latency: Option<u64>,
    pub suspected_faults: usize,
    pub consensus_queries: usize,
    pub consensus_rounds: usize,
}

impl RunMetrics {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn collect(
        config: &ScenarioConfig,
        world: &World,
        nodes: &[NodeOutput],
        clusters: &[ClusterOutput],
        network: &Network,
        detections: &[Detection],
        events: &[EventOutcome],
        queries: &[ConsensusQuery],
        compute_ops: u64,
        energy: EnergyModel,
    ) -> Self {
        let horizon = world.horizon as usize;
        let mut sq: BTreeMap<SensorKind, (f64, usize)> = BTreeMap::new();
        for (s, out) in world.streams.iter().zip(nodes) {
            let held = out.held(horizon);
            if let Some(r) = held_rmse(&held, &s.truth) {
                let n = held.iter().flatten().count();
                let e = sq.entry(s.kind).or_default();
                e.0 += r * r * n as f64;
                e.1 += n;
            }
        }
        let rmse = pooled(sq);

        let mut fsq: BTreeMap<SensorKind, (f64, usize)> = BTreeMap::new();
        for (c, cluster) in clusters.iter().enumerate() {
            for k in cluster.kinds.iter().filter(|k| !k.kind.is_binary()) {
                let truths: Vec<&[f64]> = world
                    .streams
                    .iter()
                    .filter(|s| s.cluster == c && s.kind == k.kind)
                    .map(|s| s.truth.as_slice())
                    .collect();
                for w in &k.windows {
                    if let Some(est) = w.estimate {
                        let t = w.end as usize;
                        let truth = truths.iter().map(|s| s[t]).sum::<f64>() / truths.len() as f64;
                        let e = fsq.entry(k.kind).or_default();
                        e.0 += (est - truth) * (est - truth);
                        e.1 += 1;
                    }
                }
            }
        }
        let fused_rmse = pooled(fsq);

        let total = network.total();
        let latencies: Vec<u64> = events.iter().filter_map(|e| e.latency).collect();
        Self {
            seed: config.seed,
            horizon: config.horizon,
            cluster_mode: config.fusion.cluster,
            node_ekf: config.fusion.node_ekf,
            total,
            by_level: network.by_level(),
            by_kind: network.by_kind(),
            compute_ops,
            ops_per_bit: energy.ops_per_bit,
            energy: energy.breakdown(total.bits, compute_ops),
            rmse,
            fused_rmse,
            events: events.len(),
            detectable_events: events.iter().filter(|e| e.onset.is_some()).count(),
            detected_events: events.iter().filter(|e| e.detected_tick.is_some()).count(),
            detections: detections.len(),
            false_positives: detections.iter().filter(|d| d.event.is_none()).count(),
            validated: detections.iter().filter(|d| d.validated()).count(),
            mean_latency: (!latencies.is_empty())
                .then(|| latencies.iter().sum::<u64>() as f64 / latencies.len() as f64),
            max_latency: latencies.iter().copied().max(),
            suspected_faults: clusters
                .iter()
                .flat_map(|c| &c.kinds)
                .map(|k| k.suspected.len())
                .sum(),
            consensus_queries: queries.len(),
            consensus_rounds: queries.iter().map(|q| q.result.rounds).sum(),
        }
    }

    pub fn csv_header() -> Vec<String> {
        let mut h: Vec<String> = [
            "seed",
            "horizon",
            "cluster_mode",
            "node_ekf",
            "messages",
            "bits",
        ]
        .map(String::from)
        .to_vec();
        for l in Level::ALL {
            h.push(format!("messages_{}", l.name()));
            h.push(format!("bits_{}", l.name()));
        }
        for k in MessageKind::ALL {
            h.push(format!("messages_{}", k.name()));
        }
        h.extend(
            [
                "compute_ops",
                "ops_per_bit",
                "radio_energy",
                "compute_energy",
                "total_energy",
            ]
            .map(String::from),
        );
        for k in SensorKind::ALL {
            h.push(format!("rmse_{k}"));
        }
        for k in SensorKind::ALL.iter().filter(|k| !k.is_binary()) {
            h.push(format!("fused_rmse_{k}"));
        }
        h.extend(
            [
                "events",
                "detectable_events",
                "detected_events",
                "detections",
                "false_positives",
                "validated",
                "mean_latency",
                "max_latency",
                "suspected_faults",
                "consensus_queries",
                "consensus_rounds",
            ]
            .map(String::from),
        );
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        fn opt<T: ToString>(v: Option<T>) -> String {
            v.map(|v| v.to_string()).unwrap_or_default()
        }
        let mode = match self.cluster_mode {
            ClusterMode::Fusvaf => "fusvaf",
            ClusterMode::Aggregate => "aggregate",
            ClusterMode::Relay => "relay",
        };
        let mut r = vec![
            self.seed.to_string(),
            self.horizon.to_string(),
            mode.to_string(),
            self.node_ekf.to_string(),
            self.total.messages.to_string(),
            self.total.bits.to_string(),
        ];
        for l in Level::ALL {
            let t = self.by_level.get(&l).copied().unwrap_or_default();
            r.push(t.messages.to_string());
            r.push(t.bits.to_string());
        }
        for k in MessageKind::ALL {
            r.push(self.by_kind.get(&k).map_or(0, |t| t.messages).to_string());
        }
        r.push(self.compute_ops.to_string());
        r.push(self.ops_per_bit.to_string());
        r.push(self.energy.radio.to_string());
        r.push(self.energy.compute.to_string());
        r.push(self.energy.total().to_string());
        for k in SensorKind::ALL {
            r.push(opt(self.rmse.get(&k)));
        }
        for k in SensorKind::ALL.iter().filter(|k| !k.is_binary()) {
            r.push(opt(self.fused_rmse.get(k)));
        }
        r.extend([
            self.events.to_string(),
            self.detectable_events.to_string(),
            self.detected_events.to_string(),
            self.detections.to_string(),
            self.false_positives.to_string(),
            self.validated.to_string(),
            opt(self.mean_latency),
            opt(self.max_latency),
            self.suspected_faults.to_string(),
            self.consensus_queries.to_string(),
            self.consensus_rounds.to_string(),
        ]);
        r
    }

    /// RMSE of `kind` pooled over its streams, `None` when no stream carries it.
    pub fn rmse_of(&self, kind: SensorKind) -> Option<f64> {
        self.rmse.get(&kind).copied()
    }
}

fn pooled(acc: BTreeMap<SensorKind, (f64, usize)>) -> BTreeMap<SensorKind, f64> {
    acc.into_iter()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(k, (s, n))| (k, (s / n as f64).sqrt()))
        .collect()
}
