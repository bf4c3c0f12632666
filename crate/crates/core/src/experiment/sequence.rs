use rand::Rng;

use crate::dram::TempDomain;
use crate::error::{Error, Result};
use crate::rng::{self, Tag};

/// Uniform integer temperatures on `domain`, adjusted so that some adjacent
/// pair spans the whole domain and some adjacent pair differs by exactly 1 °C.
pub fn generate_temperature_sequence(seed: u64, length: usize, domain: TempDomain) -> Result<Vec<i32>> {
    if length < 2 {
        return Err(Error::config(format!("sequence length must be at least 2, got {length}")));
    }
    let span = domain.span();
    if span < 2 {
        return Err(Error::config(format!(
            "domain [{}, {}] is too narrow for both a full-span and a 1 °C step",
            domain.min, domain.max
        )));
    }
    let mut rng = rng::stream(seed, Tag::Sequence, &[]);
    let mut seq: Vec<i32> = (0..length).map(|_| rng.random_range(domain.min..=domain.max)).collect();
    let has_step = |s: &[i32], d: i32| s.windows(2).any(|w| (w[0] - w[1]).abs() == d);

    // The full-span pair dominates: it is placed first and never disturbed.
    let j = if let Some(j) = seq.windows(2).position(|w| (w[0] - w[1]).abs() == span) {
        j
    } else {
        let j = rng.random_range(0..length - 1);
        let up = rng.random_bool(0.5);
        (seq[j], seq[j + 1]) = if up { (domain.min, domain.max) } else { (domain.max, domain.min) };
        j
    };
    if length >= 3 && !has_step(&seq, 1) {
        let (m, anchor) = if j + 2 < length { (j + 2, seq[j + 1]) } else { (j - 1, seq[j]) };
        seq[m] = if anchor == domain.min { anchor + 1 } else { anchor - 1 };
    }
    Ok(seq)
}
