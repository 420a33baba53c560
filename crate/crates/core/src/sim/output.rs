//! CSV artifacts and a plain-text summary for one run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::metrics::RunMetrics;
use super::{SimError, SimulationRun};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> SimError + '_ {
    move |source| SimError::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `metrics.csv`, `detections.csv`, `events.csv`,
/// `consensus_mse.csv`, `suspected_faults.csv`, one CSV per sensor stream
/// under `streams/`, one per cluster and sensor kind under `fused/`, and
/// `summary.txt`. Returns the paths written, relative to `dir`.
pub fn write_outputs(run: &SimulationRun, dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    fs::create_dir_all(dir.join("streams")).map_err(io_err(dir))?;
    fs::create_dir_all(dir.join("fused")).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let mut emit = |rel: PathBuf, header: Vec<String>, rows: Vec<Vec<String>>| {
        write_csv(&dir.join(&rel), &header, &rows)?;
        written.push(rel);
        Ok::<_, SimError>(())
    };
    let config = &run.config;

    emit(
        "metrics.csv".into(),
        RunMetrics::csv_header(),
        vec![run.metrics.csv_row()],
    )?;

    emit(
        "detections.csv".into(),
        strings(&[
            "kind",
            "cluster",
            "window",
            "tick",
            "event",
            "validated",
            "validated_tick",
        ]),
        run.detections
            .iter()
            .map(|d| {
                vec![
                    d.kind.to_string(),
                    config.topology.clusters[d.cluster].id.clone(),
                    d.window.to_string(),
                    d.tick.to_string(),
                    opt(d.event),
                    d.validated().to_string(),
                    opt(d.validated_tick),
                ]
            })
            .collect(),
    )?;

    emit(
        "events.csv".into(),
        strings(&[
            "event",
            "kind",
            "start",
            "end",
            "onset",
            "detected_tick",
            "latency",
        ]),
        run.events
            .iter()
            .map(|e| {
                let spec = &config.events[e.event];
                vec![
                    e.event.to_string(),
                    e.kind.to_string(),
                    spec.start.to_string(),
                    spec.end.to_string(),
                    opt(e.onset),
                    opt(e.detected_tick),
                    opt(e.latency),
                ]
            })
            .collect(),
    )?;

    let mut mse_rows = Vec::new();
    for (q, query) in run.queries.iter().enumerate() {
        for (i, mse) in query.result.mse_history.iter().enumerate() {
            mse_rows.push(vec![
                q.to_string(),
                query.trigger.name().to_string(),
                query.tick.to_string(),
                i.to_string(),
                mse.to_string(),
            ]);
        }
    }
    emit(
        "consensus_mse.csv".into(),
        strings(&["query", "trigger", "tick", "iteration", "mse"]),
        mse_rows,
    )?;

    emit(
        "suspected_faults.csv".into(),
        strings(&["cluster", "node", "kind", "window", "tick"]),
        run.clusters
            .iter()
            .flat_map(|c| {
                c.kinds.iter().flat_map(|k| &k.suspected).map(|s| {
                    vec![
                        c.id.clone(),
                        s.node.to_string(),
                        s.kind.to_string(),
                        s.window.to_string(),
                        s.tick.to_string(),
                    ]
                })
            })
            .collect(),
    )?;

    for (s, out) in run.world.streams.iter().zip(&run.nodes) {
        let held = out.held(s.truth.len());
        let mut reported = vec![false; s.truth.len()];
        for (t, _) in &out.reports {
            reported[*t as usize] = true;
        }
        let rows = (0..s.truth.len())
            .map(|t| {
                vec![
                    t.to_string(),
                    s.truth[t].to_string(),
                    s.measured[t].to_string(),
                    out.estimates[t].to_string(),
                    u8::from(reported[t]).to_string(),
                    opt(held[t]),
                ]
            })
            .collect();
        emit(
            PathBuf::from("streams").join(format!("{}_{}.csv", s.node, s.kind)),
            strings(&["tick", "truth", "measured", "estimate", "reported", "held"]),
            rows,
        )?;
    }

    for c in &run.clusters {
        for k in &c.kinds {
            let rows = k
                .windows
                .iter()
                .map(|w| {
                    let a = w.aggregate;
                    vec![
                        w.index.to_string(),
                        w.start.to_string(),
                        w.end.to_string(),
                        opt(w.estimate),
                        opt(w.fused.as_ref().map(|f| f.prediction)),
                        opt(w.fused.as_ref().map(|f| f.gate.width() / 2.0)),
                        opt(w.fused.as_ref().map(|f| f.valid_values().count())),
                        opt(a.map(|a| a.count)),
                        opt(a.map(|a| a.avg)),
                        opt(a.map(|a| a.max)),
                        opt(a.map(|a| a.min)),
                    ]
                })
                .collect();
            emit(
                PathBuf::from("fused").join(format!("{}_{}.csv", c.id, k.kind)),
                strings(&[
                    "window",
                    "start",
                    "end",
                    "estimate",
                    "prediction",
                    "half_width",
                    "validated",
                    "count",
                    "avg",
                    "max",
                    "min",
                ]),
                rows,
            )?;
        }
    }

    let summary_path = dir.join("summary.txt");
    fs::write(&summary_path, summary(run, &written)).map_err(io_err(&summary_path))?;
    written.push("summary.txt".into());
    Ok(written)
}

/// Human-readable digest of a run.
pub fn summary(run: &SimulationRun, files: &[PathBuf]) -> String {
    let m = &run.metrics;
    let mut s = String::new();
    let _ = writeln!(s, "seed {} horizon {} ticks", m.seed, m.horizon);
    let _ = writeln!(
        s,
        "cluster mode {:?}, node filter {}",
        m.cluster_mode,
        if m.node_ekf { "on" } else { "off" }
    );
    let _ = writeln!(s, "messages {} bits {}", m.total.messages, m.total.bits);
    for (level, t) in &m.by_level {
        let _ = writeln!(
            s,
            "  {:<8} {:>8} msgs {:>10} bits",
            level.name(),
            t.messages,
            t.bits
        );
    }
    let _ = writeln!(
        s,
        "energy radio {} compute {} total {} (ops_per_bit {})",
        m.energy.radio,
        m.energy.compute,
        m.energy.total(),
        m.ops_per_bit
    );
    for (kind, r) in &m.rmse {
        let _ = writeln!(s, "rmse {kind} {r:.4}");
    }
    let _ = writeln!(
        s,
        "events {} detectable {} detected {}; detections {} false positives {} validated {}",
        m.events,
        m.detectable_events,
        m.detected_events,
        m.detections,
        m.false_positives,
        m.validated
    );
    if let Some(l) = m.max_latency {
        let _ = writeln!(s, "max latency {l} ticks");
    }
    let _ = writeln!(
        s,
        "suspected faults {}; consensus queries {} rounds {}",
        m.suspected_faults, m.consensus_queries, m.consensus_rounds
    );
    let _ = writeln!(s, "files:");
    for f in files {
        let _ = writeln!(s, "  {}", f.display());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::run_simulation;
    use crate::sim::testing::small_config;

    #[test]
    fn every_listed_file_exists_and_is_not_empty() {
        let dir = tempfile::tempdir().unwrap();
        let run = run_simulation(&small_config()).unwrap();
        let files = write_outputs(&run, dir.path()).unwrap();
        assert!(files.contains(&PathBuf::from("metrics.csv")));
        assert!(files.contains(&PathBuf::from("streams/a1_pressure.csv")));
        assert!(files.contains(&PathBuf::from("fused/b_pir.csv")));
        for f in &files {
            let len = fs::metadata(dir.path().join(f)).unwrap().len();
            assert!(len > 0, "{}", f.display());
        }
        let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().count(), 2);
        let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        for f in &files {
            if f != Path::new("summary.txt") {
                assert!(summary.contains(&f.display().to_string()));
            }
        }
    }
}
