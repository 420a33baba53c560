//! Measurement traces and their CSV representation.
//!
//! A [`Trace`] is the ordered history of one sensor on one node. Traces are
//! stored on disk as UTF-8 CSV with a `timestamp,value` header, timestamps
//! being integer ticks.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a sensor node (or any other network entity).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    /// Line pressure, kPa.
    Pressure,
    /// Ambient temperature, degrees Celsius.
    Temperature,
    /// Relative humidity, %RH.
    Humidity,
    /// Passive infrared presence, 0 or 1.
    Pir,
    /// Magnetic presence, 0 or 1.
    Magnetic,
}

impl SensorKind {
    pub const ALL: [SensorKind; 5] = [
        SensorKind::Pressure,
        SensorKind::Temperature,
        SensorKind::Humidity,
        SensorKind::Pir,
        SensorKind::Magnetic,
    ];

    /// Presence sensors report 0.0 or 1.0 only.
    pub fn is_binary(self) -> bool {
        matches!(self, SensorKind::Pir | SensorKind::Magnetic)
    }

    pub fn name(self) -> &'static str {
        match self {
            SensorKind::Pressure => "pressure",
            SensorKind::Temperature => "temperature",
            SensorKind::Humidity => "humidity",
            SensorKind::Pir => "pir",
            SensorKind::Magnetic => "magnetic",
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SensorKind {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SensorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| TraceError::UnknownSensorKind(s.to_owned()))
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("trace contains no readings")]
    Empty,
    #[error("timestamp {timestamp} at row {row} is earlier than the previous reading")]
    NonMonotone { row: usize, timestamp: u64 },
    #[error("duplicate timestamp {timestamp} at row {row}")]
    DuplicateTimestamp { row: usize, timestamp: u64 },
    #[error("{kind} reading must be 0 or 1, got {value}")]
    NotBinary { kind: SensorKind, value: f64 },
    #[error("reading value {0} is not finite")]
    NonFinite(f64),
    #[error("reading belongs to {found_node}/{found_kind}, expected {node}/{kind}")]
    ForeignReading {
        node: NodeId,
        kind: SensorKind,
        found_node: NodeId,
        found_kind: SensorKind,
    },
    #[error("cannot merge traces of different sensor kinds ({0} and {1})")]
    MixedSensorKinds(SensorKind, SensorKind),
    #[error("unknown sensor kind `{0}`")]
    UnknownSensorKind(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// One timestamped scalar reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub node_id: NodeId,
    pub sensor_kind: SensorKind,
    pub timestamp: u64,
    pub value: f64,
}

impl Measurement {
    pub fn new(
        node_id: NodeId,
        sensor_kind: SensorKind,
        timestamp: u64,
        value: f64,
    ) -> Result<Self, TraceError> {
        if !value.is_finite() {
            return Err(TraceError::NonFinite(value));
        }
        if sensor_kind.is_binary() && value != 0.0 && value != 1.0 {
            return Err(TraceError::NotBinary {
                kind: sensor_kind,
                value,
            });
        }
        Ok(Self {
            node_id,
            sensor_kind,
            timestamp,
            value,
        })
    }
}

/// Readings of one sensor on one node, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    node_id: NodeId,
    sensor_kind: SensorKind,
    readings: Vec<Measurement>,
}

impl Trace {
    /// Builds a trace from already-constructed measurements. Every reading must
    /// carry the given node and kind, and timestamps must strictly increase.
    pub fn new(
        node_id: NodeId,
        sensor_kind: SensorKind,
        readings: Vec<Measurement>,
    ) -> Result<Self, TraceError> {
        if readings.is_empty() {
            return Err(TraceError::Empty);
        }
        for (i, m) in readings.iter().enumerate() {
            if m.node_id != node_id || m.sensor_kind != sensor_kind {
                return Err(TraceError::ForeignReading {
                    node: node_id,
                    kind: sensor_kind,
                    found_node: m.node_id.clone(),
                    found_kind: m.sensor_kind,
                });
            }
            if i > 0 {
                check_order(readings[i - 1].timestamp, m.timestamp, i + 1)?;
            }
        }
        Ok(Self {
            node_id,
            sensor_kind,
            readings,
        })
    }

    /// Convenience constructor from `(timestamp, value)` pairs.
    pub fn from_samples(
        node_id: impl Into<NodeId>,
        sensor_kind: SensorKind,
        samples: &[(u64, f64)],
    ) -> Result<Self, TraceError> {
        let node_id = node_id.into();
        let readings = samples
            .iter()
            .map(|&(t, v)| Measurement::new(node_id.clone(), sensor_kind, t, v))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(node_id, sensor_kind, readings)
    }

    pub fn node_id(&self) -> &NodeId {
        &self.node_id
    }

    pub fn sensor_kind(&self) -> SensorKind {
        self.sensor_kind
    }

    pub fn readings(&self) -> &[Measurement] {
        &self.readings
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    /// Always false; traces are non-empty by construction.
    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.readings.iter().map(|m| m.value)
    }
}

fn check_order(prev: u64, cur: u64, row: usize) -> Result<(), TraceError> {
    if cur == prev {
        Err(TraceError::DuplicateTimestamp {
            row,
            timestamp: cur,
        })
    } else if cur < prev {
        Err(TraceError::NonMonotone {
            row,
            timestamp: cur,
        })
    } else {
        Ok(())
    }
}

/// Reads a `timestamp,value` CSV into a trace. Data rows are numbered from 1.
pub fn load_trace(
    path: impl AsRef<Path>,
    node_id: impl Into<NodeId>,
    sensor_kind: SensorKind,
) -> Result<Trace, TraceError> {
    let file = File::open(path)?;
    read_trace(file, node_id.into(), sensor_kind)
}

pub fn read_trace<R: Read>(
    reader: R,
    node_id: NodeId,
    sensor_kind: SensorKind,
) -> Result<Trace, TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);

    let header_ok = match rdr.headers() {
        Ok(h) => h.len() == 2 && &h[0] == "timestamp" && &h[1] == "value",
        Err(e) => {
            return Err(TraceError::Parse {
                row: 0,
                message: e.to_string(),
            })
        }
    };
    if !header_ok {
        if rdr.headers()?.is_empty() {
            return Err(TraceError::Empty);
        }
        return Err(TraceError::Parse {
            row: 0,
            message: "expected header `timestamp,value`".into(),
        });
    }

    let mut readings: Vec<Measurement> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| TraceError::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != 2 {
            return Err(TraceError::Parse {
                row,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let timestamp: u64 = record[0].parse().map_err(|_| TraceError::Parse {
            row,
            message: format!("invalid timestamp `{}`", &record[0]),
        })?;
        let value: f64 = record[1].parse().map_err(|_| TraceError::Parse {
            row,
            message: format!("invalid value `{}`", &record[1]),
        })?;
        let m = Measurement::new(node_id.clone(), sensor_kind, timestamp, value).map_err(|e| {
            TraceError::Parse {
                row,
                message: e.to_string(),
            }
        })?;
        if let Some(prev) = readings.last() {
            check_order(prev.timestamp, timestamp, row)?;
        }
        readings.push(m);
    }
    if readings.is_empty() {
        return Err(TraceError::Empty);
    }
    Trace::new(node_id, sensor_kind, readings)
}

pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let file = File::create(path)?;
    write_trace(trace, file)
}

pub fn write_trace<W: Write>(trace: &Trace, writer: W) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "value"])?;
    for m in &trace.readings {
        // `{}` on f64 prints the shortest representation that parses back exactly.
        w.write_record([m.timestamp.to_string(), m.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// All readings that share one tick, in input-trace order.
#[derive(Debug, Clone, PartialEq)]
pub struct TickSet {
    pub tick: u64,
    pub readings: Vec<Measurement>,
}

impl TickSet {
    pub fn values(&self) -> Vec<f64> {
        self.readings.iter().map(|m| m.value).collect()
    }
}

/// Aligns same-kind traces on their ticks. A trace without a reading at some
/// tick contributes nothing there; no interpolation is done.
pub fn merge_traces(traces: &[Trace]) -> Result<Vec<TickSet>, TraceError> {
    if let Some(first) = traces.first() {
        if let Some(other) = traces.iter().find(|t| t.sensor_kind != first.sensor_kind) {
            return Err(TraceError::MixedSensorKinds(
                first.sensor_kind,
                other.sensor_kind,
            ));
        }
    }
    let mut by_tick: BTreeMap<u64, Vec<Measurement>> = BTreeMap::new();
    for trace in traces {
        for m in &trace.readings {
            by_tick.entry(m.timestamp).or_default().push(m.clone());
        }
    }
    Ok(by_tick
        .into_iter()
        .map(|(tick, readings)| TickSet { tick, readings })
        .collect())
}
