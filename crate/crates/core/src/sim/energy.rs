//! Radio and compute energy in abstract operation units.

use super::config::EnergySpec;

/// Transmitting one bit costs `ops_per_bit` operations of `energy_per_op`
/// each; computation is charged per operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    pub ops_per_bit: u64,
    pub energy_per_op: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub radio: f64,
    pub compute: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.radio + self.compute
    }
}

impl EnergyModel {
    pub fn from_spec(spec: &EnergySpec) -> Self {
        Self {
            ops_per_bit: spec.ops_per_bit,
            energy_per_op: spec.energy_per_op,
        }
    }

    pub fn radio(&self, bits: u64) -> f64 {
        (bits * self.ops_per_bit) as f64 * self.energy_per_op
    }

    pub fn compute(&self, ops: u64) -> f64 {
        ops as f64 * self.energy_per_op
    }

    pub fn breakdown(&self, bits: u64, ops: u64) -> EnergyBreakdown {
        EnergyBreakdown {
            radio: self.radio(bits),
            compute: self.compute(ops),
        }
    }
}
