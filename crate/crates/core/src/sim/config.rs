//! Scenario configuration: a TOML document with `topology`, `signals`,
//! `events`, `fusion`, `detection` and `energy` sections.
//!
//! Everything except `seed`, `horizon` and the topology has a default; see
//! `data/scenarios/pipeline_10n2c.toml` for an annotated example. Dotted
//! overrides (`energy.ops_per_bit=3000`, `events.0.magnitude=50`) are applied
//! to the parsed document before it is validated.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::CommGraph;
use crate::fusvaf::{
    AlphaPolicy, ConstantVelocityPredictor, EkfPredictor, FusionParams, FusvafConfig,
    GateAdaptation, Predictor, SmoothingPredictor,
};
use crate::trace::SensorKind;

/// Band of microcontroller operations one transmitted bit is worth.
pub const OPS_PER_BIT_RANGE: std::ops::RangeInclusive<u64> = 1000..=3000;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("bad override `{raw}`: {message}")]
    Override { raw: String, message: String },
    #[error("invalid scenario:\n{}", format_issues(.0))]
    Invalid(Vec<FieldIssue>),
}

fn format_issues(issues: &[FieldIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  - {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl ConfigError {
    pub fn issues(&self) -> &[FieldIssue] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Number of simulated ticks.
    pub horizon: u64,
    pub topology: TopologySpec,
    #[serde(default)]
    pub signals: SignalSpecs,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub fusion: FusionSpec,
    #[serde(default)]
    pub detection: DetectionSpec,
    #[serde(default)]
    pub energy: EnergySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    #[serde(default = "default_gateway")]
    pub gateway: String,
    pub clusters: Vec<ClusterSpec>,
    pub nodes: Vec<NodeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uav: Option<UavSpec>,
}

fn default_gateway() -> String {
    "ncw".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub id: String,
    /// Cluster heads this one has a long-range link to. Links are undirected.
    #[serde(default)]
    pub peers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub cluster: String,
    /// Distance along the pipeline, metres.
    pub position_m: f64,
    pub sensors: Vec<SensorKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UavSpec {
    #[serde(default = "default_uav")]
    pub id: String,
    #[serde(default)]
    pub patrol: Vec<PatrolVisit>,
}

fn default_uav() -> String {
    "uav".into()
}

/// The UAV hovers over `cluster` during ticks `start..=end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatrolVisit {
    pub start: u64,
    pub end: u64,
    pub cluster: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub baseline: f64,
    /// Linear change of the baseline per tick.
    #[serde(default)]
    pub drift: f64,
    #[serde(default)]
    pub noise_std: f64,
}

impl SignalSpec {
    fn new(baseline: f64, noise_std: f64) -> Self {
        Self {
            baseline,
            drift: 0.0,
            noise_std,
        }
    }

    /// Undisturbed ground truth at `tick`.
    pub fn nominal(&self, tick: u64) -> f64 {
        self.baseline + self.drift * tick as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpecs {
    #[serde(default = "default_pressure")]
    pub pressure: SignalSpec,
    #[serde(default = "default_temperature")]
    pub temperature: SignalSpec,
    #[serde(default = "default_humidity")]
    pub humidity: SignalSpec,
    #[serde(default = "default_binary")]
    pub pir: SignalSpec,
    #[serde(default = "default_binary")]
    pub magnetic: SignalSpec,
}

fn default_pressure() -> SignalSpec {
    SignalSpec::new(500.0, 0.5)
}
fn default_temperature() -> SignalSpec {
    SignalSpec::new(20.0, 0.2)
}
fn default_humidity() -> SignalSpec {
    SignalSpec::new(60.0, 1.0)
}
fn default_binary() -> SignalSpec {
    SignalSpec::new(0.0, 0.0)
}

impl Default for SignalSpecs {
    fn default() -> Self {
        Self {
            pressure: default_pressure(),
            temperature: default_temperature(),
            humidity: default_humidity(),
            pir: default_binary(),
            magnetic: default_binary(),
        }
    }
}

impl SignalSpecs {
    pub fn get(&self, kind: SensorKind) -> &SignalSpec {
        match kind {
            SensorKind::Pressure => &self.pressure,
            SensorKind::Temperature => &self.temperature,
            SensorKind::Humidity => &self.humidity,
            SensorKind::Pir => &self.pir,
            SensorKind::Magnetic => &self.magnetic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Leak,
    Intrusion,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Leak => "leak",
            EventKind::Intrusion => "intrusion",
        })
    }
}

/// A leak depresses pressure at every node within `radius_m` of
/// `location_m`, ramping linearly to `magnitude` at `end`. An intrusion sets
/// the presence sensors of the nearest equipped node to 1 during
/// `start..=end`; its magnitude and radius are unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub kind: EventKind,
    pub start: u64,
    pub end: u64,
    pub location_m: f64,
    #[serde(default)]
    pub magnitude: f64,
    #[serde(default = "default_radius")]
    pub radius_m: f64,
}

fn default_radius() -> f64 {
    250.0
}

/// A sensor stuck at `value` during `start..=end`; ground truth is unaffected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub node: String,
    pub sensor: SensorKind,
    pub start: u64,
    pub end: u64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMode {
    /// FUSVAF across members, one fused message per window upstream.
    Fusvaf,
    /// COUNT/AVG/MAX/MIN per window upstream.
    Aggregate,
    /// Every member report is relayed upstream unchanged.
    Relay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusTrigger {
    Never,
    /// Whenever a detection is declared.
    OnDetection,
    /// Every `period_windows` reporting windows.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// Random-walk Kalman filter.
    Ekf,
    /// Level-and-rate Kalman filter; tracks ramps without lag.
    ConstantVelocity,
    Smoothing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    ConfidenceSum,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusvafSpec {
    /// Initial alpha (and the fixed alpha in `constant` mode).
    pub alpha: f64,
    pub omega: f64,
    pub alpha_mode: AlphaMode,
    pub alpha_floor: f64,
    pub k_sigma: f64,
    pub w_min: f64,
    pub w_max: f64,
    /// Gate half-width floor as a multiple of the kind's report deadband,
    /// since a held report may sit up to one deadband from the truth.
    pub deadband_floor: f64,
    /// Residual window and warm-up length, in reporting windows.
    pub gate_window: usize,
    pub initial_half_width: f64,
    pub predictor: PredictorKind,
    pub predictor_q: f64,
    pub predictor_r: f64,
    /// Rate process noise of the `constant_velocity` predictor.
    pub predictor_rate_q: f64,
    /// Smoothing factor of the `smoothing` predictor.
    pub smoothing_beta: f64,
}

impl Default for FusvafSpec {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            omega: 1.0,
            alpha_mode: AlphaMode::ConfidenceSum,
            alpha_floor: 1e-3,
            k_sigma: 3.0,
            w_min: 0.1,
            w_max: 100.0,
            deadband_floor: 2.0,
            gate_window: 10,
            initial_half_width: 10.0,
            predictor: PredictorKind::ConstantVelocity,
            predictor_q: 0.1,
            predictor_r: 0.1,
            predictor_rate_q: 0.01,
            smoothing_beta: 0.5,
        }
    }
}

impl FusvafSpec {
    pub fn to_config(&self) -> Result<FusvafConfig, crate::fusvaf::FusvafError> {
        let config = FusvafConfig {
            params: FusionParams::new(self.alpha, self.omega)?,
            alpha_policy: match self.alpha_mode {
                AlphaMode::ConfidenceSum => AlphaPolicy::PreviousConfidenceSum {
                    floor: self.alpha_floor,
                },
                AlphaMode::Constant => AlphaPolicy::Constant(self.alpha),
            },
            adaptation: GateAdaptation {
                k_sigma: self.k_sigma,
                w_min: self.w_min,
                w_max: self.w_max,
            },
            window: self.gate_window,
            initial_half_width: self.initial_half_width,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn predictor(&self) -> Result<Box<dyn Predictor>, crate::fusvaf::FusvafError> {
        Ok(match self.predictor {
            PredictorKind::Ekf => Box::new(EkfPredictor::new(self.predictor_q, self.predictor_r)?),
            PredictorKind::ConstantVelocity => Box::new(ConstantVelocityPredictor::new(
                self.predictor_q,
                self.predictor_rate_q,
                self.predictor_r,
            )?),
            PredictorKind::Smoothing => Box::new(SmoothingPredictor::new(self.smoothing_beta)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSpec {
    /// Per-node EKF plus report-on-change; off means raw forwarding.
    pub node_ekf: bool,
    pub cluster: ClusterMode,
    pub ekf_q: f64,
    pub ekf_r: f64,
    /// Report-on-change deadband per sensor kind. Kinds not listed use
    /// `report_delta_noise_multiple * noise_std`.
    pub report_delta: BTreeMap<SensorKind, f64>,
    pub report_delta_noise_multiple: f64,
    /// Payload of one sample, bits.
    pub sample_bits: u64,
    /// Cluster reporting window, ticks.
    pub window: u64,
    /// Consecutive zero-confidence windows before a member is suspected faulty.
    pub fault_persistence: usize,
    pub fusvaf: FusvafSpec,
    pub consensus: ConsensusSpec,
}

impl Default for FusionSpec {
    fn default() -> Self {
        Self {
            node_ekf: true,
            cluster: ClusterMode::Fusvaf,
            ekf_q: 0.1,
            ekf_r: 0.1,
            report_delta: BTreeMap::new(),
            report_delta_noise_multiple: 1.5,
            sample_bits: 32,
            window: 10,
            fault_persistence: 3,
            fusvaf: FusvafSpec::default(),
            consensus: ConsensusSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusSpec {
    pub trigger: ConsensusTrigger,
    pub period_windows: u64,
    /// Quantity the cluster heads agree on.
    pub quantity: SensorKind,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ConsensusSpec {
    fn default() -> Self {
        Self {
            trigger: ConsensusTrigger::OnDetection,
            period_windows: 10,
            quantity: SensorKind::Pressure,
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionSpec {
    /// Leak declared when fused pressure is below `nominal - leak_threshold`...
    pub leak_threshold: f64,
    /// ...for this many consecutive windows.
    pub leak_persistence: usize,
}

impl Default for DetectionSpec {
    fn default() -> Self {
        Self {
            leak_threshold: 20.0,
            leak_persistence: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergySpec {
    pub ops_per_bit: u64,
    /// Energy of one microcontroller operation, abstract units.
    pub energy_per_op: f64,
    pub ekf_step_ops: u64,
    pub fusvaf_ops_per_input: u64,
    pub aggregate_ops_per_value: u64,
    pub consensus_ops_per_message: u64,
}

impl Default for EnergySpec {
    fn default() -> Self {
        Self {
            ops_per_bit: 2000,
            energy_per_op: 1.0,
            ekf_step_ops: 30,
            fusvaf_ops_per_input: 40,
            aggregate_ops_per_value: 4,
            consensus_ops_per_message: 4,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses, applies `key=value` overrides, and validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for raw in overrides {
            apply_override(&mut doc, raw)?;
        }
        let config: ScenarioConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Re-applies overrides to an already valid configuration.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        Self::from_toml_with_overrides(&self.to_toml_string(), overrides)
    }

    /// Cluster FUSVAF settings for `kind`, with the gate floor raised to
    /// cover the node deadband.
    pub fn fusvaf_config(
        &self,
        kind: SensorKind,
    ) -> Result<FusvafConfig, crate::fusvaf::FusvafError> {
        let spec = &self.fusion.fusvaf;
        let mut config = spec.to_config()?;
        if self.fusion.node_ekf {
            let floor = (spec.deadband_floor * self.report_delta(kind)).min(spec.w_max);
            config.adaptation.w_min = config.adaptation.w_min.max(floor);
        }
        config.validate()?;
        Ok(config)
    }

    /// Report-on-change deadband for `kind`.
    pub fn report_delta(&self, kind: SensorKind) -> f64 {
        if kind.is_binary() {
            // any change of a 0/1 reading is reported
            return 0.5;
        }
        self.fusion
            .report_delta
            .get(&kind)
            .copied()
            .unwrap_or_else(|| {
                self.fusion.report_delta_noise_multiple * self.signals.get(kind).noise_std
            })
    }

    pub fn cluster_index(&self, id: &str) -> Option<usize> {
        self.topology.clusters.iter().position(|c| c.id == id)
    }

    /// Cluster-head peer graph, agents indexed in cluster order.
    pub fn peer_graph(&self) -> Result<CommGraph, crate::consensus::ConsensusError> {
        let mut edges = Vec::new();
        for (i, c) in self.topology.clusters.iter().enumerate() {
            for p in &c.peers {
                if let Some(j) = self.cluster_index(p) {
                    edges.push((i, j));
                }
            }
        }
        CommGraph::new(self.topology.clusters.len(), edges)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        let mut issue = |field: String, message: &str| {
            issues.push(FieldIssue {
                field,
                message: message.to_owned(),
            })
        };

        if self.horizon == 0 {
            issue("horizon".into(), "must be at least 1 tick");
        }

        // topology
        let topo = &self.topology;
        let mut ids = BTreeSet::new();
        let mut claim = |id: &str, field: String, issue: &mut dyn FnMut(String, &str)| {
            if id.is_empty() {
                issue(field, "must not be empty");
            } else if !ids.insert(id.to_owned()) {
                issue(field, "duplicate entity id");
            }
        };
        claim(&topo.gateway, "topology.gateway".into(), &mut issue);
        if topo.clusters.is_empty() {
            issue(
                "topology.clusters".into(),
                "at least one cluster is required",
            );
        }
        if topo.nodes.is_empty() {
            issue("topology.nodes".into(), "at least one node is required");
        }
        for (i, c) in topo.clusters.iter().enumerate() {
            claim(&c.id, format!("topology.clusters[{i}].id"), &mut issue);
            for (k, p) in c.peers.iter().enumerate() {
                let field = format!("topology.clusters[{i}].peers[{k}]");
                if p == &c.id {
                    issue(field, "a cluster cannot peer with itself");
                } else if self.cluster_index(p).is_none() {
                    issue(field, "unknown cluster");
                }
            }
            if !topo.nodes.iter().any(|n| n.cluster == c.id) {
                issue(
                    format!("topology.clusters[{i}]"),
                    "cluster has no member nodes",
                );
            }
        }
        for (i, n) in topo.nodes.iter().enumerate() {
            claim(&n.id, format!("topology.nodes[{i}].id"), &mut issue);
            if self.cluster_index(&n.cluster).is_none() {
                issue(format!("topology.nodes[{i}].cluster"), "unknown cluster");
            }
            if !(n.position_m >= 0.0 && n.position_m.is_finite()) {
                issue(
                    format!("topology.nodes[{i}].position_m"),
                    "must be finite and >= 0",
                );
            }
            if n.sensors.is_empty() {
                issue(
                    format!("topology.nodes[{i}].sensors"),
                    "at least one sensor is required",
                );
            }
            let unique: BTreeSet<_> = n.sensors.iter().collect();
            if unique.len() != n.sensors.len() {
                issue(
                    format!("topology.nodes[{i}].sensors"),
                    "duplicate sensor kind",
                );
            }
        }
        if topo.clusters.len() > 1 {
            if let Ok(g) = self.peer_graph() {
                if !g.is_connected() {
                    issue(
                        "topology.clusters".into(),
                        "cluster-head peer graph is not connected",
                    );
                }
            }
        }
        if let Some(uav) = &topo.uav {
            claim(&uav.id, "topology.uav.id".into(), &mut issue);
            for (i, v) in uav.patrol.iter().enumerate() {
                if v.start > v.end {
                    issue(
                        format!("topology.uav.patrol[{i}].start"),
                        "start is after end",
                    );
                }
                if v.end >= self.horizon {
                    issue(
                        format!("topology.uav.patrol[{i}].end"),
                        "outside the simulation horizon",
                    );
                }
                if self.cluster_index(&v.cluster).is_none() {
                    issue(
                        format!("topology.uav.patrol[{i}].cluster"),
                        "unknown cluster",
                    );
                }
            }
        }

        // signals
        for kind in SensorKind::ALL {
            let s = self.signals.get(kind);
            let base = format!("signals.{kind}");
            if !s.baseline.is_finite() || !s.drift.is_finite() {
                issue(format!("{base}.baseline"), "must be finite");
            }
            if !(s.noise_std >= 0.0 && s.noise_std.is_finite()) {
                issue(format!("{base}.noise_std"), "must be finite and >= 0");
            }
            if kind.is_binary() {
                if s.baseline != 0.0 && s.baseline != 1.0 {
                    issue(
                        format!("{base}.baseline"),
                        "presence baseline must be 0 or 1",
                    );
                }
                if s.drift != 0.0 {
                    issue(format!("{base}.drift"), "presence signals cannot drift");
                }
                if s.noise_std != 0.0 {
                    issue(
                        format!("{base}.noise_std"),
                        "presence signals are noise-free",
                    );
                }
            }
        }

        // events
        for (i, e) in self.events.iter().enumerate() {
            if e.start > e.end {
                issue(format!("events[{i}].start"), "start is after end");
            }
            if e.start >= self.horizon {
                issue(
                    format!("events[{i}].start"),
                    "outside the simulation horizon",
                );
            }
            if e.end >= self.horizon {
                issue(format!("events[{i}].end"), "outside the simulation horizon");
            }
            if !(e.location_m >= 0.0 && e.location_m.is_finite()) {
                issue(format!("events[{i}].location_m"), "must be finite and >= 0");
            }
            if !(e.magnitude >= 0.0 && e.magnitude.is_finite()) {
                issue(format!("events[{i}].magnitude"), "must be finite and >= 0");
            }
            if !(e.radius_m > 0.0 && e.radius_m.is_finite()) {
                issue(format!("events[{i}].radius_m"), "must be finite and > 0");
            }
            if e.kind == EventKind::Intrusion
                && !topo
                    .nodes
                    .iter()
                    .any(|n| n.sensors.iter().any(|k| k.is_binary()))
            {
                issue(
                    format!("events[{i}].kind"),
                    "no node carries a pir or magnetic sensor",
                );
            }
        }

        for (i, fault) in self.faults.iter().enumerate() {
            match topo.nodes.iter().find(|n| n.id == fault.node) {
                None => issue(format!("faults[{i}].node"), "unknown node"),
                Some(n) if !n.sensors.contains(&fault.sensor) => {
                    issue(format!("faults[{i}].sensor"), "node has no such sensor")
                }
                Some(_) => {}
            }
            if fault.start > fault.end {
                issue(format!("faults[{i}].start"), "start is after end");
            }
            if fault.end >= self.horizon {
                issue(format!("faults[{i}].end"), "outside the simulation horizon");
            }
            if !fault.value.is_finite() {
                issue(format!("faults[{i}].value"), "must be finite");
            } else if fault.sensor.is_binary() && fault.value != 0.0 && fault.value != 1.0 {
                issue(format!("faults[{i}].value"), "presence readings are 0 or 1");
            }
        }

        // fusion
        let f = &self.fusion;
        if !(f.ekf_q >= 0.0 && f.ekf_q.is_finite()) {
            issue("fusion.ekf_q".into(), "must be finite and >= 0");
        }
        if !(f.ekf_r > 0.0 && f.ekf_r.is_finite()) {
            issue("fusion.ekf_r".into(), "must be finite and > 0");
        }
        for (kind, d) in &f.report_delta {
            if !(*d >= 0.0 && d.is_finite()) {
                issue(
                    format!("fusion.report_delta.{kind}"),
                    "must be finite and >= 0",
                );
            }
        }
        if !(f.report_delta_noise_multiple >= 0.0 && f.report_delta_noise_multiple.is_finite()) {
            issue(
                "fusion.report_delta_noise_multiple".into(),
                "must be finite and >= 0",
            );
        }
        if f.sample_bits == 0 {
            issue("fusion.sample_bits".into(), "must be at least 1");
        }
        if f.window == 0 {
            issue("fusion.window".into(), "must be at least 1 tick");
        }
        if f.fault_persistence == 0 {
            issue("fusion.fault_persistence".into(), "must be at least 1");
        }
        if let Err(e) = f.fusvaf.to_config() {
            issue("fusion.fusvaf".into(), &e.to_string());
        }
        if !(f.fusvaf.deadband_floor >= 0.0 && f.fusvaf.deadband_floor.is_finite()) {
            issue(
                "fusion.fusvaf.deadband_floor".into(),
                "must be finite and >= 0",
            );
        }
        if let Err(e) = f.fusvaf.predictor() {
            issue("fusion.fusvaf.predictor".into(), &e.to_string());
        }
        let c = &f.consensus;
        if !(c.tol > 0.0 && c.tol.is_finite()) {
            issue("fusion.consensus.tol".into(), "must be finite and > 0");
        }
        if c.max_iter == 0 {
            issue("fusion.consensus.max_iter".into(), "must be at least 1");
        }
        if c.period_windows == 0 {
            issue(
                "fusion.consensus.period_windows".into(),
                "must be at least 1",
            );
        }
        if c.quantity.is_binary() {
            issue(
                "fusion.consensus.quantity".into(),
                "must be an analog sensor kind",
            );
        }

        // detection
        let d = &self.detection;
        if !(d.leak_threshold > 0.0 && d.leak_threshold.is_finite()) {
            issue("detection.leak_threshold".into(), "must be finite and > 0");
        }
        if d.leak_persistence == 0 {
            issue(
                "detection.leak_persistence".into(),
                "must be at least 1 window",
            );
        }

        // energy
        let en = &self.energy;
        if !OPS_PER_BIT_RANGE.contains(&en.ops_per_bit) {
            issue("energy.ops_per_bit".into(), "must lie within 1000..=3000");
        }
        if !(en.energy_per_op >= 0.0 && en.energy_per_op.is_finite()) {
            issue("energy.energy_per_op".into(), "must be finite and >= 0");
        }

        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(issues))
        }
    }
}

/// Sets `a.b.c = value` in a parsed document. Every intermediate segment must
/// already exist; numeric segments index arrays. The final key may be new, in
/// which case deserialization rejects it unless it is a known field.
pub fn apply_override(doc: &mut toml::Table, raw: &str) -> Result<(), ConfigError> {
    let bad = |message: String| ConfigError::Override {
        raw: raw.to_owned(),
        message,
    };
    let (path, value) = raw
        .split_once('=')
        .ok_or_else(|| bad("expected key=value".into()))?;
    let segments: Vec<&str> = path.trim().split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(bad("empty key segment".into()));
    }
    let value = parse_value(value.trim());

    let mut root = toml::Value::Table(std::mem::take(doc));
    let outcome = set_path(&mut root, &segments, value).map_err(bad);
    if let toml::Value::Table(t) = root {
        *doc = t;
    }
    outcome
}

fn set_path(root: &mut toml::Value, segments: &[&str], value: toml::Value) -> Result<(), String> {
    let (last, parents) = segments.split_last().expect("at least one segment");
    let mut cursor = root;
    for (depth, seg) in parents.iter().enumerate() {
        let here = segments[..=depth].join(".");
        cursor = match cursor {
            toml::Value::Table(t) => t
                .entry(*seg)
                .or_insert_with(|| toml::Value::Table(toml::Table::new())),
            toml::Value::Array(a) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| format!("`{here}` must be an array index"))?;
                a.get_mut(idx)
                    .ok_or_else(|| format!("`{here}` is out of range"))?
            }
            _ => return Err(format!("`{here}` is not a table")),
        };
    }
    let path = segments.join(".");
    match cursor {
        toml::Value::Table(t) => {
            t.insert((*last).to_owned(), value);
        }
        toml::Value::Array(a) => {
            let idx: usize = last
                .parse()
                .map_err(|_| format!("`{path}` must end in an array index"))?;
            *a.get_mut(idx)
                .ok_or_else(|| format!("`{path}` is out of range"))? = value;
        }
        _ => return Err(format!("parent of `{path}` is not a table")),
    }
    Ok(())
}

fn parse_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::testing::small_config;

    const BUNDLED: &str = include_str!("../../data/scenarios/pipeline_10n2c.toml");

    #[test]
    fn bundled_scenario_parses() {
        let c = ScenarioConfig::from_toml_str(BUNDLED).unwrap();
        assert_eq!(c.topology.nodes.len(), 10);
        assert_eq!(c.topology.clusters.len(), 2);
        assert_eq!(c.events.len(), 2);
        assert_eq!(c.fusion.fusvaf.predictor, PredictorKind::ConstantVelocity);
    }

    #[test]
    fn minimal_document_takes_defaults() {
        let text = r#"
            seed = 1
            horizon = 10
            [topology]
            clusters = [{ id = "c" }]
            nodes = [{ id = "n", cluster = "c", position_m = 0.0, sensors = ["pressure"] }]
        "#;
        let c = ScenarioConfig::from_toml_str(text).unwrap();
        assert_eq!(c.topology.gateway, "ncw");
        assert_eq!(c.fusion, FusionSpec::default());
        assert_eq!(c.energy.ops_per_bit, 2000);
        assert_eq!(c.signals.pressure.noise_std, 0.5);
        assert_eq!(c.report_delta(SensorKind::Pressure), 0.75);
        assert_eq!(c.report_delta(SensorKind::Pir), 0.5);
    }

    #[test]
    fn seed_is_required() {
        let text = BUNDLED.replace("seed = 7", "");
        assert!(matches!(
            ScenarioConfig::from_toml_str(&text),
            Err(ConfigError::Parse(m)) if m.contains("seed")
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = BUNDLED.replace("ops_per_bit = 2000", "ops_per_bit = 2000\nbogus = 1");
        assert!(matches!(
            ScenarioConfig::from_toml_str(&text),
            Err(ConfigError::Parse(_))
        ));
        let err = ScenarioConfig::from_toml_with_overrides(BUNDLED, &["energy.bogus=1".into()]);
        assert!(matches!(err, Err(ConfigError::Parse(m)) if m.contains("bogus")));
        let err = ScenarioConfig::from_toml_with_overrides(BUNDLED, &["missing.key=1".into()]);
        assert!(matches!(err, Err(ConfigError::Parse(m)) if m.contains("missing")));
    }

    #[test]
    fn overrides_apply_by_path() {
        let c = ScenarioConfig::from_toml_with_overrides(
            BUNDLED,
            &[
                "energy.ops_per_bit=3000".into(),
                "events.0.magnitude = 55.5".into(),
                "fusion.cluster=aggregate".into(),
                "topology.nodes.2.sensors=[\"pressure\"]".into(),
                "fusion.report_delta.pressure=0.2".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.energy.ops_per_bit, 3000);
        assert_eq!(c.events[0].magnitude, 55.5);
        assert_eq!(c.fusion.cluster, ClusterMode::Aggregate);
        assert_eq!(c.topology.nodes[2].sensors, vec![SensorKind::Pressure]);
        assert_eq!(c.report_delta(SensorKind::Pressure), 0.2);
    }

    #[test]
    fn malformed_overrides() {
        for raw in [
            "noequals",
            "events.9.start=1",
            "events.x.start=1",
            ".a=1",
            "seed.x=1",
        ] {
            let err = ScenarioConfig::from_toml_with_overrides(BUNDLED, &[raw.into()]).unwrap_err();
            assert!(matches!(err, ConfigError::Override { .. }), "{raw}: {err}");
        }
    }

    #[test]
    fn validation_names_fields() {
        let mut c = small_config();
        c.events.push(EventSpec {
            kind: EventKind::Leak,
            start: 10,
            end: 600,
            location_m: 0.0,
            magnitude: 1.0,
            radius_m: 1.0,
        });
        c.energy.ops_per_bit = 999;
        c.topology.nodes[1].cluster = "zz".into();
        let err = c.validate().unwrap_err();
        let fields: Vec<&str> = err.issues().iter().map(|i| i.field.as_str()).collect();
        assert!(fields.contains(&"events[0].end"), "{fields:?}");
        assert!(fields.contains(&"energy.ops_per_bit"));
        assert!(fields.contains(&"topology.nodes[1].cluster"));
        assert!(err.to_string().contains("events[0].end"));
    }

    #[test]
    fn structural_checks() {
        let mut c = small_config();
        c.topology.clusters[0].peers.clear();
        c.topology.nodes[3].id = "a1".into();
        c.signals.pir.baseline = 0.5;
        c.fusion.consensus.quantity = SensorKind::Magnetic;
        let err = c.validate().unwrap_err();
        let fields: Vec<&str> = err.issues().iter().map(|i| i.field.as_str()).collect();
        assert!(fields.contains(&"topology.clusters"), "{fields:?}");
        assert!(fields.contains(&"topology.nodes[3].id"));
        assert!(fields.contains(&"signals.pir.baseline"));
        assert!(fields.contains(&"fusion.consensus.quantity"));
    }

    #[test]
    fn serialization_round_trips() {
        let c = ScenarioConfig::from_toml_str(BUNDLED).unwrap();
        let again = ScenarioConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn gate_floor_follows_deadband() {
        let c = small_config();
        let f = c.fusvaf_config(SensorKind::Pressure).unwrap();
        assert_eq!(f.adaptation.w_min, 2.0 * 0.75);
        let mut raw = c.clone();
        raw.fusion.node_ekf = false;
        assert_eq!(
            raw.fusvaf_config(SensorKind::Pressure)
                .unwrap()
                .adaptation
                .w_min,
            0.1
        );
    }
}
