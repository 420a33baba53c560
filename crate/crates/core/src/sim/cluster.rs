//! Cluster-head processing: per-window aggregates, FUSVAF over member
//! reports, and suspected-fault flags.

use super::config::ClusterMode;
use crate::fusvaf::{FusvafConfig, FusvafError, FusvafStream, Predictor, StreamStep};
use crate::trace::{NodeId, SensorKind};

/// COUNT / AVG / MAX / MIN of a window's samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub count: usize,
    pub avg: f64,
    pub max: f64,
    pub min: f64,
}

pub fn aggregate(values: &[f64]) -> Option<Aggregate> {
    if values.is_empty() {
        return None;
    }
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    let mut sum = 0.0;
    for &v in values {
        max = max.max(v);
        min = min.min(v);
        sum += v;
    }
    Some(Aggregate {
        count: values.len(),
        avg: sum / values.len() as f64,
        max,
        min,
    })
}

pub struct ClusterSettings {
    pub mode: ClusterMode,
    /// Reporting window, ticks.
    pub window: u64,
    pub fusvaf: FusvafConfig,
    /// Consecutive zero-confidence windows before a member is suspected.
    pub fault_persistence: usize,
    pub fusvaf_ops_per_input: u64,
    pub aggregate_ops_per_value: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub index: u64,
    pub start: u64,
    pub end: u64,
    /// Over every member value in effect at some tick of the window.
    pub aggregate: Option<Aggregate>,
    /// FUSVAF step over the members' values held at `end`.
    pub fused: Option<StreamStep>,
    /// What the head forwards as its estimate: the fused value, AVG, or MAX
    /// for presence sensors.
    pub estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuspectedFault {
    pub node: NodeId,
    pub kind: SensorKind,
    /// Window in which the persistence count was reached.
    pub window: u64,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterKindOutput {
    pub kind: SensorKind,
    pub members: Vec<NodeId>,
    pub windows: Vec<WindowRecord>,
    pub suspected: Vec<SuspectedFault>,
    pub ops: u64,
}

/// Window boundaries `(index, start, end)` covering `0..horizon`; the last
/// window may be short.
pub fn windows(horizon: u64, window: u64) -> impl Iterator<Item = (u64, u64, u64)> {
    (0..horizon.div_ceil(window)).map(move |w| {
        let start = w * window;
        (w, start, (start + window).min(horizon) - 1)
    })
}

/// Member values in effect during `start..=end`: the value carried into the
/// window (unless replaced at `start`) followed by the reports inside it.
fn window_samples(reports: &[(u64, f64)], start: u64, end: u64) -> Vec<f64> {
    let first_inside = reports.partition_point(|(t, _)| *t < start);
    let mut out = Vec::new();
    let replaced_at_start = reports.get(first_inside).is_some_and(|(t, _)| *t == start);
    if first_inside > 0 && !replaced_at_start {
        out.push(reports[first_inside - 1].1);
    }
    out.extend(
        reports[first_inside..]
            .iter()
            .take_while(|(t, _)| *t <= end)
            .map(|(_, v)| *v),
    );
    out
}

fn held_at(reports: &[(u64, f64)], tick: u64) -> Option<f64> {
    let n = reports.partition_point(|(t, _)| *t <= tick);
    n.checked_sub(1).map(|i| reports[i].1)
}

/// Processes one sensor kind of one cluster. `reports[i]` is the report
/// stream received from `members[i]`, sorted by tick.
pub fn cluster_stage(
    kind: SensorKind,
    members: &[NodeId],
    reports: &[&[(u64, f64)]],
    horizon: u64,
    settings: &ClusterSettings,
    predictor: Box<dyn Predictor>,
) -> Result<ClusterKindOutput, FusvafError> {
    assert_eq!(members.len(), reports.len(), "one report stream per member");
    let fuse = settings.mode == ClusterMode::Fusvaf && !kind.is_binary();
    let mut stream = if fuse {
        Some(FusvafStream::new(settings.fusvaf.clone(), predictor)?)
    } else {
        None
    };
    let mut zero_runs = vec![0usize; members.len()];
    let mut out = ClusterKindOutput {
        kind,
        members: members.to_vec(),
        windows: Vec::new(),
        suspected: Vec::new(),
        ops: 0,
    };

    for (index, start, end) in windows(horizon, settings.window) {
        let samples: Vec<f64> = reports
            .iter()
            .flat_map(|r| window_samples(r, start, end))
            .collect();
        let agg = aggregate(&samples);
        if settings.mode != ClusterMode::Relay {
            out.ops += settings.aggregate_ops_per_value * samples.len() as u64;
        }

        let mut fused = None;
        if let Some(stream) = stream.as_mut() {
            let slots: Vec<Option<f64>> = reports.iter().map(|r| held_at(r, end)).collect();
            if slots.iter().any(Option::is_some) {
                let step = stream.step(end, &slots)?;
                out.ops += settings.fusvaf_ops_per_input * slots.iter().flatten().count() as u64;
                for (i, input) in step.inputs.iter().enumerate() {
                    match input {
                        Some((_, sigma)) if *sigma == 0.0 => {
                            zero_runs[i] += 1;
                            if zero_runs[i] == settings.fault_persistence {
                                out.suspected.push(SuspectedFault {
                                    node: members[i].clone(),
                                    kind,
                                    window: index,
                                    tick: end,
                                });
                            }
                        }
                        _ => zero_runs[i] = 0,
                    }
                }
                fused = Some(step);
            }
        }

        let estimate = match (&fused, agg) {
            (Some(step), _) => Some(step.fused),
            (None, Some(a)) if kind.is_binary() => Some(a.max),
            (None, Some(a)) if !fuse => Some(a.avg),
            _ => None,
        };
        out.windows.push(WindowRecord {
            index,
            start,
            end,
            aggregate: agg,
            fused,
            estimate,
        });
    }
    Ok(out)
}
