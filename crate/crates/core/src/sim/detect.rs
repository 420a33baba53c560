//! Leak and intrusion detection over cluster estimates, matching against
//! injected events, and UAV validation.

use super::cluster::WindowRecord;
use super::config::{EventKind, EventSpec, ScenarioConfig};
use super::world::{intrusion_target, leak_depression, within_radius};
use crate::trace::SensorKind;

/// Per-window estimates of one cluster, as far as detection needs them.
#[derive(Debug, Clone, Default)]
pub struct ClusterSeries<'a> {
    pub pressure: Option<&'a [WindowRecord]>,
    pub presence: Vec<&'a [WindowRecord]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub kind: EventKind,
    pub cluster: usize,
    pub window: u64,
    pub tick: u64,
    /// Index of the matched injected event; `None` is a false positive.
    pub event: Option<usize>,
    pub validated_tick: Option<u64>,
}

impl Detection {
    pub fn validated(&self) -> bool {
        self.validated_tick.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventOutcome {
    pub event: usize,
    pub kind: EventKind,
    /// First tick at which the event is detectable: the leak depression
    /// reaches the threshold, or the intrusion starts. `None` for leaks that
    /// never reach it.
    pub onset: Option<u64>,
    pub detected_tick: Option<u64>,
    pub latency: Option<u64>,
}

/// Runs the detection rules cluster by cluster. A leak is declared when the
/// pressure estimate stays below `nominal - threshold` for `persistence`
/// consecutive windows; an intrusion when any presence MAX is 1. Each
/// episode yields one detection.
pub fn detect_events(config: &ScenarioConfig, clusters: &[ClusterSeries<'_>]) -> Vec<Detection> {
    let mut out = Vec::new();
    let threshold = config.detection.leak_threshold;
    let persistence = config.detection.leak_persistence;
    for (c, series) in clusters.iter().enumerate() {
        if let Some(windows) = series.pressure {
            let mut run = 0usize;
            for w in windows {
                let nominal = config.signals.pressure.nominal(w.end);
                let below = w.estimate.is_some_and(|e| e < nominal - threshold);
                run = if below { run + 1 } else { 0 };
                if run == persistence {
                    out.push(Detection {
                        kind: EventKind::Leak,
                        cluster: c,
                        window: w.index,
                        tick: w.end,
                        event: None,
                        validated_tick: None,
                    });
                }
            }
        }
        if let Some(first) = series.presence.first() {
            let mut active = false;
            for (i, w) in first.iter().enumerate() {
                let now = series
                    .presence
                    .iter()
                    .any(|s| s[i].aggregate.is_some_and(|a| a.max == 1.0));
                if now && !active {
                    out.push(Detection {
                        kind: EventKind::Intrusion,
                        cluster: c,
                        window: w.index,
                        tick: w.end,
                        event: None,
                        validated_tick: None,
                    });
                }
                active = now;
            }
        }
    }
    out.sort_by_key(|d| (d.tick, d.cluster, d.kind));
    out
}

/// Clusters whose members feel `event`.
pub fn affected_clusters(config: &ScenarioConfig, event: &EventSpec) -> Vec<usize> {
    let mut out: Vec<usize> = match event.kind {
        EventKind::Leak => config
            .topology
            .nodes
            .iter()
            .filter(|n| {
                n.sensors.contains(&SensorKind::Pressure) && within_radius(event, n.position_m)
            })
            .filter_map(|n| config.cluster_index(&n.cluster))
            .collect(),
        EventKind::Intrusion => intrusion_target(config, event)
            .and_then(|i| config.cluster_index(&config.topology.nodes[i].cluster))
            .into_iter()
            .collect(),
    };
    out.sort_unstable();
    out.dedup();
    out
}

pub fn onset(config: &ScenarioConfig, event: &EventSpec) -> Option<u64> {
    match event.kind {
        EventKind::Intrusion => Some(event.start),
        EventKind::Leak => (event.start..=event.end)
            .find(|&t| leak_depression(event, t) >= config.detection.leak_threshold),
    }
}

/// Attributes detections to events, fills in UAV validation, and reports
/// per-event latency. A detection matches an event of its kind that affects
/// its cluster and whose span, extended by `persistence + 1` windows, covers
/// the detection tick. Latency is counted from the onset and is zero for
/// detections that precede it.
pub fn match_detections(
    config: &ScenarioConfig,
    detections: &mut [Detection],
) -> Vec<EventOutcome> {
    let slack = (config.detection.leak_persistence as u64 + 1) * config.fusion.window;
    let affected: Vec<Vec<usize>> = config
        .events
        .iter()
        .map(|e| affected_clusters(config, e))
        .collect();
    for d in detections.iter_mut() {
        d.event = config.events.iter().enumerate().position(|(i, e)| {
            e.kind == d.kind
                && affected[i].contains(&d.cluster)
                && d.tick >= e.start
                && d.tick <= e.end + slack
        });
        d.validated_tick = d
            .event
            .and_then(|i| validation_tick(config, d.cluster, d.tick, config.events[i].end));
    }
    config
        .events
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let onset = onset(config, e);
            let detected_tick = detections
                .iter()
                .filter(|d| d.event == Some(i))
                .map(|d| d.tick)
                .min();
            EventOutcome {
                event: i,
                kind: e.kind,
                onset,
                detected_tick,
                latency: detected_tick.map(|t| t.saturating_sub(onset.unwrap_or(e.start))),
            }
        })
        .collect()
}

/// First tick at which a patrol over `cluster` overlaps `from..=until`.
fn validation_tick(config: &ScenarioConfig, cluster: usize, from: u64, until: u64) -> Option<u64> {
    let uav = config.topology.uav.as_ref()?;
    let id = &config.topology.clusters[cluster].id;
    uav.patrol
        .iter()
        .filter(|v| &v.cluster == id && v.start <= until && v.end >= from)
        .map(|v| v.start.max(from))
        .min()
}
