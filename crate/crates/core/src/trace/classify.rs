use serde::{Deserialize, Serialize};

use super::{TraceError, VmType};

/// Band cut points per dimension plus the band-pair to type table.
///
/// A value `v` falls in band 0 when `v <= cuts[0]`, band 1 when
/// `v <= cuts[1]`, and band 2 otherwise. `table[cpu_band][mem_band]` names
/// the type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub cpu: [u64; 2],
    pub mem: [u64; 2],
    #[serde(default = "default_table")]
    pub table: [[VmType; 3]; 3],
}

fn default_table() -> [[VmType; 3]; 3] {
    use VmType::*;
    [
        [Small, MediumSmall, MediumLarge],
        [MediumSmall, MediumMedium, MediumLarge],
        [MediumLarge, MediumLarge, Large],
    ]
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { cpu: [2, 8], mem: [4, 16], table: default_table() }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.cpu[0] < self.cpu[1] && self.mem[0] < self.mem[1] {
            Ok(())
        } else {
            Err(TraceError::InvalidThresholds)
        }
    }

    fn band(cuts: [u64; 2], v: u64) -> usize {
        if v <= cuts[0] {
            0
        } else if v <= cuts[1] {
            1
        } else {
            2
        }
    }

    /// Classification without re-validating the cut points.
    pub fn classify(&self, demand: &[u64]) -> VmType {
        let cpu = demand.first().copied().unwrap_or(0);
        let mem = demand.get(1).copied().unwrap_or(cpu);
        self.table[Self::band(self.cpu, cpu)][Self::band(self.mem, mem)]
    }
}

/// Maps a demand vector to one of the five VM types. Only the first two
/// dimensions (CPU, memory) take part; a 1-D demand reuses CPU for memory.
pub fn classify_vm(demand: &[u64], thresholds: &Thresholds) -> Result<VmType, TraceError> {
    thresholds.validate()?;
    Ok(thresholds.classify(demand))
}
