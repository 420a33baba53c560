use super::config::{ClusterSpec, NodeSpec, ScenarioConfig, TopologySpec};
use crate::trace::SensorKind;

/// Two clusters of two nodes each over 60 ticks; no events.
pub fn small_config() -> ScenarioConfig {
    let node = |id: &str, cluster: &str, position_m: f64, sensors: &[SensorKind]| NodeSpec {
        id: id.into(),
        cluster: cluster.into(),
        position_m,
        sensors: sensors.to_vec(),
    };
    use SensorKind::*;
    let config = ScenarioConfig {
        seed: 42,
        horizon: 60,
        topology: TopologySpec {
            gateway: "ncw".into(),
            clusters: vec![
                ClusterSpec {
                    id: "a".into(),
                    peers: vec!["b".into()],
                },
                ClusterSpec {
                    id: "b".into(),
                    peers: vec![],
                },
            ],
            nodes: vec![
                node("a1", "a", 0.0, &[Pressure, Temperature]),
                node("a2", "a", 100.0, &[Pressure, Pir]),
                node("b1", "b", 400.0, &[Pressure, Temperature]),
                node("b2", "b", 300.0, &[Pressure, Pir]),
            ],
            uav: None,
        },
        signals: Default::default(),
        events: vec![],
        faults: vec![],
        fusion: Default::default(),
        detection: Default::default(),
        energy: Default::default(),
    };
    config.validate().expect("fixture is valid");
    config
}
