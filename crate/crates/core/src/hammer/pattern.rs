use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PatternKind {
    Colstripe,
    Checkered,
    Rowstripe,
    Random,
}

/// A RowHammer data pattern, written to the victim row and its 8 physical
/// neighbors on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataPattern {
    pub kind: PatternKind,
    pub complement: bool,
}

impl DataPattern {
    pub const COLSTRIPE: Self = Self { kind: PatternKind::Colstripe, complement: false };
    pub const CHECKERED: Self = Self { kind: PatternKind::Checkered, complement: false };
    pub const ROWSTRIPE: Self = Self { kind: PatternKind::Rowstripe, complement: false };
    pub const RANDOM: Self = Self { kind: PatternKind::Random, complement: false };
    pub const COLSTRIPE_INV: Self = Self { kind: PatternKind::Colstripe, complement: true };
    pub const CHECKERED_INV: Self = Self { kind: PatternKind::Checkered, complement: true };
    pub const ROWSTRIPE_INV: Self = Self { kind: PatternKind::Rowstripe, complement: true };

    /// The seven patterns in tie-break order.
    pub const ALL: [Self; 7] = [
        Self::COLSTRIPE,
        Self::CHECKERED,
        Self::ROWSTRIPE,
        Self::RANDOM,
        Self::COLSTRIPE_INV,
        Self::CHECKERED_INV,
        Self::ROWSTRIPE_INV,
    ];

    pub fn new(kind: PatternKind, complement: bool) -> Result<Self, Error> {
        if kind == PatternKind::Random && complement {
            return Err(Error::config("the random pattern has no complement"));
        }
        Ok(Self { kind, complement })
    }

    /// Position in [`DataPattern::ALL`].
    pub fn index(&self) -> usize {
        Self::ALL.iter().position(|p| p == self).expect("valid pattern")
    }

    /// Byte written to the row at physical distance `offset` from the victim
    /// (`-8..=8`). `None` for random data or rows outside the pattern window.
    pub fn fill_byte(&self, offset: i32) -> Option<u8> {
        if offset.abs() > 8 {
            return None;
        }
        let even = offset % 2 == 0;
        let b = match (self.kind, even) {
            (PatternKind::Colstripe, _) => 0x55,
            (PatternKind::Checkered, true) => 0x55,
            (PatternKind::Checkered, false) => 0xaa,
            (PatternKind::Rowstripe, true) => 0x00,
            (PatternKind::Rowstripe, false) => 0xff,
            (PatternKind::Random, _) => return None,
        };
        Some(if self.complement { !b } else { b })
    }
}

impl fmt::Display for DataPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.kind {
            PatternKind::Colstripe => "colstripe",
            PatternKind::Checkered => "checkered",
            PatternKind::Rowstripe => "rowstripe",
            PatternKind::Random => "random",
        };
        if self.complement {
            write!(f, "{base}-inv")
        } else {
            f.write_str(base)
        }
    }
}

impl FromStr for DataPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| Error::config(format!("unknown data pattern `{s}`")))
    }
}
