//! Logical-to-physical row address mappings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MappingKind {
    /// `phy[x] = log[x]` for every bit.
    Sequential,
    /// `phy[1] = log[3] ^ log[1]`, `phy[2] = log[2] ^ log[3]`, all other bits unchanged.
    XorMfrB,
}

/// A row-address mapping over a `width`-bit row address space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowMapping {
    pub kind: MappingKind,
    pub width: u32,
}

#[inline]
fn bit(x: u32, i: u32) -> u32 {
    (x >> i) & 1
}

impl RowMapping {
    pub const fn new(kind: MappingKind, width: u32) -> Self {
        Self { kind, width }
    }

    pub fn sequential(width: u32) -> Self {
        Self::new(MappingKind::Sequential, width)
    }

    pub fn xor_mfr_b(width: u32) -> Self {
        Self::new(MappingKind::XorMfrB, width)
    }

    /// Smallest width whose address space holds `rows` rows.
    pub fn width_for_rows(rows: u32) -> u32 {
        (32 - rows.saturating_sub(1).leading_zeros()).max(1)
    }

    /// Number of addresses, `2^width`.
    pub fn address_space(&self) -> u64 {
        1u64 << self.width
    }

    fn check(&self, row: u32) -> Result<()> {
        if self.width > 32 || u64::from(row) >= self.address_space() {
            return Err(Error::domain(format!(
                "row address {row} outside the {}-bit address space",
                self.width
            )));
        }
        Ok(())
    }

    pub fn to_physical(&self, logical: u32) -> Result<u32> {
        self.check(logical)?;
        Ok(match self.kind {
            MappingKind::Sequential => logical,
            MappingKind::XorMfrB => {
                if self.width < 4 {
                    return Ok(logical);
                }
                let p0 = bit(logical, 0);
                let p1 = bit(logical, 3) ^ bit(logical, 1);
                let p2 = bit(logical, 2) ^ bit(logical, 3);
                (logical & !0b111) | (p2 << 2) | (p1 << 1) | p0
            }
        })
    }

    pub fn to_logical(&self, physical: u32) -> Result<u32> {
        self.check(physical)?;
        Ok(match self.kind {
            MappingKind::Sequential => physical,
            MappingKind::XorMfrB => {
                if self.width < 4 {
                    return Ok(physical);
                }
                // bit 3 passes through unchanged, so it can be used to undo the XORs.
                let l3 = bit(physical, 3);
                let l1 = bit(physical, 1) ^ l3;
                let l2 = bit(physical, 2) ^ l3;
                (physical & !0b111) | (l2 << 2) | (l1 << 1) | bit(physical, 0)
            }
        })
    }
}

/// Free-function form of [`RowMapping::to_physical`].
pub fn map_logical_to_physical(mapping: &RowMapping, row: u32) -> Result<u32> {
    mapping.to_physical(row)
}

/// Free-function form of [`RowMapping::to_logical`].
pub fn map_physical_to_logical(mapping: &RowMapping, row: u32) -> Result<u32> {
    mapping.to_logical(row)
}
