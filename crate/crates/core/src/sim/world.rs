//! Ground truth and noisy sensor readings for every (node, sensor) stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{EventKind, EventSpec, ScenarioConfig};
use crate::trace::{NodeId, SensorKind, Trace, TraceError};

/// One sensor on one node, sampled at every tick.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldStream {
    pub node: NodeId,
    pub node_index: usize,
    pub cluster: usize,
    pub kind: SensorKind,
    pub truth: Vec<f64>,
    pub measured: Vec<f64>,
}

impl WorldStream {
    pub fn measured_trace(&self) -> Result<Trace, TraceError> {
        self.to_trace(&self.measured)
    }

    pub fn truth_trace(&self) -> Result<Trace, TraceError> {
        self.to_trace(&self.truth)
    }

    fn to_trace(&self, values: &[f64]) -> Result<Trace, TraceError> {
        let samples: Vec<(u64, f64)> = values
            .iter()
            .enumerate()
            .map(|(t, v)| (t as u64, *v))
            .collect();
        Trace::from_samples(self.node.clone(), self.kind, &samples)
    }
}

/// Streams ordered by node (config order) then sensor (config order).
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub horizon: u64,
    pub streams: Vec<WorldStream>,
}

impl World {
    pub fn stream(&self, node: &str, kind: SensorKind) -> Option<&WorldStream> {
        self.streams
            .iter()
            .find(|s| s.node.as_str() == node && s.kind == kind)
    }
}

/// Pressure drop caused by a leak at `tick`, ignoring distance. Ramps from
/// `magnitude / len` at `start` to `magnitude` at `end`; zero outside.
pub fn leak_depression(event: &EventSpec, tick: u64) -> f64 {
    if event.kind != EventKind::Leak || tick < event.start || tick > event.end {
        return 0.0;
    }
    let len = (event.end - event.start + 1) as f64;
    event.magnitude * (tick - event.start + 1) as f64 / len
}

/// Whether a node at `position_m` feels `event`.
pub fn within_radius(event: &EventSpec, position_m: f64) -> bool {
    (position_m - event.location_m).abs() <= event.radius_m
}

/// Node (config index) whose presence sensors an intrusion trips: the
/// nearest node carrying a pir or magnetic sensor, ties going to the first.
pub fn intrusion_target(config: &ScenarioConfig, event: &EventSpec) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, n) in config.topology.nodes.iter().enumerate() {
        if !n.sensors.iter().any(|k| k.is_binary()) {
            continue;
        }
        let d = (n.position_m - event.location_m).abs();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Undisturbed-plus-events value of `kind` at node `node_index`.
pub fn ground_truth(
    config: &ScenarioConfig,
    node_index: usize,
    kind: SensorKind,
    tick: u64,
) -> f64 {
    let node = &config.topology.nodes[node_index];
    let mut value = config.signals.get(kind).nominal(tick);
    for event in &config.events {
        match event.kind {
            EventKind::Leak
                if kind == SensorKind::Pressure && within_radius(event, node.position_m) =>
            {
                value -= leak_depression(event, tick);
            }
            EventKind::Intrusion
                if kind.is_binary()
                    && (event.start..=event.end).contains(&tick)
                    && intrusion_target(config, event) == Some(node_index) =>
            {
                value = 1.0;
            }
            _ => {}
        }
    }
    value
}

/// Samples every stream over the horizon. Each stream draws its noise from
/// its own ChaCha8 stream keyed by node and sensor position, so adding a
/// node leaves the other streams unchanged.
pub fn generate_world(config: &ScenarioConfig) -> World {
    let mut streams = Vec::new();
    for (ni, node) in config.topology.nodes.iter().enumerate() {
        let cluster = config
            .cluster_index(&node.cluster)
            .expect("validated config");
        for kind in &node.sensors {
            let kind = *kind;
            let truth: Vec<f64> = (0..config.horizon)
                .map(|t| ground_truth(config, ni, kind, t))
                .collect();
            let noise_std = config.signals.get(kind).noise_std;
            let mut measured = truth.clone();
            if !kind.is_binary() && noise_std > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream((ni as u64) << 8 | kind_index(kind));
                let normal = Normal::new(0.0, noise_std).expect("validated noise");
                for v in &mut measured {
                    *v += normal.sample(&mut rng);
                }
            }
            for fault in &config.faults {
                if fault.node == node.id && fault.sensor == kind {
                    for t in fault.start..=fault.end {
                        measured[t as usize] = fault.value;
                    }
                }
            }
            streams.push(WorldStream {
                node: NodeId::new(node.id.as_str()),
                node_index: ni,
                cluster,
                kind,
                truth,
                measured,
            });
        }
    }
    World {
        horizon: config.horizon,
        streams,
    }
}

fn kind_index(kind: SensorKind) -> u64 {
    SensorKind::ALL
        .iter()
        .position(|k| *k == kind)
        .expect("kind listed") as u64
}
