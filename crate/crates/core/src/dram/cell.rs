use serde::{Deserialize, Serialize};

/// `(physical_row, bit_index)`.
pub type CellCoord = (u32, u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    /// Vulnerable over an interval of at least three integer temperatures.
    Band,
    /// Vulnerable at exactly one integer temperature.
    Canary,
}

/// One vulnerable DRAM cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellProfile {
    pub row: u32,
    pub bit: u32,
    pub kind: CellKind,
    pub t_lo: i32,
    pub t_hi: i32,
    /// Per-trial flip probability before per-temperature rescaling.
    pub base_prob: f64,
}

impl CellProfile {
    pub fn coord(&self) -> CellCoord {
        (self.row, self.bit)
    }

    pub fn vulnerable_at(&self, t: i32) -> bool {
        (self.t_lo..=self.t_hi).contains(&t)
    }
}
