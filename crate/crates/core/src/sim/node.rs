//! On-node pre-processing: scalar EKF plus report-on-change, or raw
//! forwarding.

use crate::ekf::{self, EkfError, FilterState, ProcessModel};
use crate::trace::Trace;
use nalgebra::DVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeSettings {
    /// Random-walk `(q, r)`; `None` forwards every raw reading.
    pub ekf: Option<(f64, f64)>,
    /// Send only when `|estimate - last sent| > delta`.
    pub delta: f64,
    /// Operations charged per EKF step.
    pub ekf_step_ops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeOutput {
    /// Per-tick on-node estimate (the raw reading when the filter is off).
    pub estimates: Vec<f64>,
    /// `(tick, value)` pairs actually transmitted.
    pub reports: Vec<(u64, f64)>,
    pub ops: u64,
}

impl NodeOutput {
    /// Value a receiver holds at each tick: the latest report at or before
    /// that tick.
    pub fn held(&self, horizon: usize) -> Vec<Option<f64>> {
        let mut out = vec![None; horizon];
        let mut next = self.reports.iter().peekable();
        let mut current = None;
        for (t, slot) in out.iter_mut().enumerate() {
            while let Some(&&(tick, v)) = next.peek() {
                if tick as usize > t {
                    break;
                }
                current = Some(v);
                next.next();
            }
            *slot = current;
        }
        out
    }
}

/// Runs one sensor stream through the node stage. Presence sensors are never
/// filtered; with the filter on they report only when their reading changes.
pub fn node_stage(trace: &Trace, settings: &NodeSettings) -> Result<NodeOutput, EkfError> {
    let values: Vec<f64> = trace.values().collect();
    let binary = trace.sensor_kind().is_binary();
    let Some((q, r)) = settings.ekf else {
        return Ok(NodeOutput {
            reports: trace
                .readings()
                .iter()
                .map(|m| (m.timestamp, m.value))
                .collect(),
            estimates: values,
            ops: 0,
        });
    };

    let estimates = if binary {
        values
    } else {
        let model = ProcessModel::random_walk(q, r)?;
        let mut out = Vec::with_capacity(values.len());
        let mut state: Option<FilterState> = None;
        for (i, &z) in values.iter().enumerate() {
            let next = match &state {
                None => FilterState::scalar(z, r)?,
                Some(s) => {
                    let prior = ekf::predict(s, &model)?;
                    ekf::update(&prior, &DVector::from_element(1, z), &model).map_err(|e| {
                        EkfError::AtTick {
                            tick: trace.readings()[i].timestamp,
                            source: Box::new(e),
                        }
                    })?
                }
            };
            out.push(next.x_hat[0]);
            state = Some(next);
        }
        out
    };
    let ops = if binary {
        0
    } else {
        settings.ekf_step_ops * estimates.len() as u64
    };

    let reports = report_on_change(
        trace
            .readings()
            .iter()
            .map(|m| m.timestamp)
            .zip(estimates.iter().copied()),
        settings.delta,
    );
    Ok(NodeOutput {
        estimates,
        reports,
        ops,
    })
}

/// Keeps the first sample and every sample that differs from the last kept
/// one by more than `delta`.
pub fn report_on_change(
    samples: impl IntoIterator<Item = (u64, f64)>,
    delta: f64,
) -> Vec<(u64, f64)> {
    let mut reports = Vec::new();
    let mut last: Option<f64> = None;
    for (tick, v) in samples {
        if last.is_none_or(|l| (v - l).abs() > delta) {
            reports.push((tick, v));
            last = Some(v);
        }
    }
    reports
}

/// Root-mean-square error of held values against truth; ticks before the
/// first report are skipped.
pub fn held_rmse(held: &[Option<f64>], truth: &[f64]) -> Option<f64> {
    let (sum, n) = held
        .iter()
        .zip(truth)
        .filter_map(|(h, t)| h.map(|h| (h - t) * (h - t)))
        .fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
    (n > 0).then(|| (sum / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::SensorKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn settings(ekf: bool, delta: f64) -> NodeSettings {
        NodeSettings {
            ekf: ekf.then_some((0.1, 0.1)),
            delta,
            ekf_step_ops: 30,
        }
    }

    fn trace(values: &[f64], kind: SensorKind) -> Trace {
        let samples: Vec<(u64, f64)> = values
            .iter()
            .enumerate()
            .map(|(t, v)| (t as u64, *v))
            .collect();
        Trace::from_samples("n", kind, &samples).unwrap()
    }

    fn noisy(n: usize, std: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).unwrap();
        (0..n).map(|_| 100.0 + normal.sample(&mut rng)).collect()
    }

    #[test]
    fn constant_trace_reports_once() {
        let t = trace(&[5.0; 50], SensorKind::Pressure);
        let out = node_stage(&t, &settings(true, 0.1)).unwrap();
        assert_eq!(out.reports, vec![(0, 5.0)]);
        assert_eq!(out.ops, 50 * 30);
    }

    #[test]
    fn raw_forwarding_sends_every_tick() {
        let values = noisy(100, 1.0, 1);
        let out = node_stage(&trace(&values, SensorKind::Pressure), &settings(false, 0.1)).unwrap();
        assert_eq!(out.reports.len(), 100);
        assert_eq!(out.ops, 0);
        assert_eq!(out.estimates, values);
    }

    #[test]
    fn filtering_suppresses_reports_on_noisy_constant() {
        let std = 0.5;
        let values = noisy(1000, std, 7);
        let t = trace(&values, SensorKind::Pressure);
        let filtered = node_stage(&t, &settings(true, 3.0 * std)).unwrap();
        let raw = node_stage(&t, &settings(false, 3.0 * std)).unwrap();
        assert!(filtered.reports.len() < raw.reports.len());
    }

    #[test]
    fn presence_reports_on_change() {
        let t = trace(&[0.0, 0.0, 1.0, 1.0, 1.0, 0.0], SensorKind::Pir);
        let out = node_stage(&t, &settings(true, 0.5)).unwrap();
        assert_eq!(out.reports, vec![(0, 0.0), (2, 1.0), (5, 0.0)]);
        assert_eq!(out.ops, 0);
    }

    #[test]
    fn held_values_follow_reports() {
        let out = NodeOutput {
            estimates: vec![],
            reports: vec![(1, 2.0), (3, 4.0)],
            ops: 0,
        };
        assert_eq!(
            out.held(5),
            vec![None, Some(2.0), Some(2.0), Some(4.0), Some(4.0)]
        );
        assert_eq!(
            held_rmse(&out.held(5), &[0.0, 2.0, 2.0, 4.0, 6.0]),
            Some(1.0)
        );
    }

    // A plain deadband is not monotone in delta on every sequence: the wider
    // band skips the early report and later crosses twice.
    #[test]
    fn deadband_count_can_grow_with_delta() {
        let values = [1.0, 0.5, -1.5, -3.0, -2.2, -0.4];
        let count = |delta: f64| {
            report_on_change(
                values.iter().enumerate().map(|(t, v)| (t as u64, *v)),
                delta,
            )
            .len()
        };
        assert_eq!(count(1.9), 2);
        assert_eq!(count(2.5), 3);
    }
}
