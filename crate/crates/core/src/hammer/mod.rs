//! Simulated RowHammer access sequences and their measurements.

mod engine;
mod pattern;
mod records;
mod target;

pub use engine::{
    Fidelity, HammerConfig, HammerEngine, HammerOutcome, NeighborFlips, Noise, Side, SingleSidedOutcome,
    NOMINAL_HAMMER_COUNT,
};
pub use pattern::{DataPattern, PatternKind};
pub use records::{read_ber_csv, read_flip_csv, write_ber_csv, write_flip_csv, BerSample, FlipRecord, Region};
pub use target::HammerTarget;
