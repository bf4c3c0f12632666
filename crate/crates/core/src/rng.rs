//! Counter-based random streams.
//!
//! Every random decision in the simulator is keyed by the module seed plus the
//! coordinates of the decision (row, cell, temperature, repetition, ...). Keys
//! are hashed into independent 64-bit values, so results never depend on the
//! order in which rows or repetitions are evaluated.

use rand::SeedableRng;
use rand_pcg::Pcg64Mcg;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Stream tags keep the different kinds of draws apart.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub(crate) enum Tag {
    BandLayout = 1,
    BandCell = 2,
    Canary = 3,
    CellTrial = 4,
    RowCount = 5,
    Sequence = 7,
    Donor = 8,
    RowDraw = 9,
}

/// SplitMix64 finalizer.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
pub(crate) fn key(seed: u64, tag: Tag, parts: &[u64]) -> u64 {
    let mut h = mix64(seed ^ (tag as u64).wrapping_mul(GOLDEN));
    for &p in parts {
        h = mix64(h ^ p.wrapping_add(GOLDEN));
    }
    h
}

/// Uniform on [0, 1) from the top 53 bits.
#[inline]
pub(crate) fn unit(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in `[0, n)` by multiply-shift.
#[inline]
pub(crate) fn below(h: u64, n: u64) -> u64 {
    ((h as u128 * n as u128) >> 64) as u64
}

pub(crate) fn stream(seed: u64, tag: Tag, parts: &[u64]) -> Pcg64Mcg {
    Pcg64Mcg::seed_from_u64(key(seed, tag, parts))
}

/// Temperature as a hash part; temperatures may be negative in custom domains.
#[inline]
pub(crate) fn temp_part(t: i32) -> u64 {
    t as i64 as u64
}
