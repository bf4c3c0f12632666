use std::ops::Range;

use super::engine::{HammerEngine, NOMINAL_HAMMER_COUNT};
use super::records::{BerSample, Region};
use crate::dram::TempDomain;
use crate::error::Result;

/// What an attacker can do with a module: hammer rows and read back flips.
///
/// Aggressor and victim rows in [`HammerTarget::single_sided`] and
/// [`HammerTarget::region_ber`] are logical addresses. The cell-level methods
/// take physical rows; they are used after the mapping has been recovered.
pub trait HammerTarget: Sync {
    fn rows(&self) -> u32;

    fn temp_domain(&self) -> TempDomain;

    /// Single-sided hammer of a logical aggressor at the nominal hammer count.
    /// Returns the logical rows that received flips with their flip counts.
    fn single_sided(&self, aggressor: u32, temp: i32, rep: u32) -> Result<Vec<(u32, f64)>>;

    /// Double-sided region measurement, one sample per repetition.
    fn region_ber(&self, region: Region, temp: i32, reps: Range<u32>) -> Result<Vec<BerSample>>;

    /// Bits of a physical row that flip during one double-sided hammer.
    fn row_flips(&self, phys_row: u32, temp: i32, rep: u32) -> Result<Vec<u32>>;

    /// For each bit of `phys_row` that flips at least once over `reps`, the
    /// temperatures among `temps` at which it flipped, ordered by bit.
    fn flip_temperatures(&self, phys_row: u32, temps: &[i32], reps: Range<u32>) -> Result<Vec<(u32, Vec<i32>)>> {
        let mut seen: std::collections::BTreeMap<u32, Vec<i32>> = Default::default();
        for &t in temps {
            let mut at_t = std::collections::BTreeSet::new();
            for rep in reps.clone() {
                at_t.extend(self.row_flips(phys_row, t, rep)?);
            }
            for bit in at_t {
                seen.entry(bit).or_default().push(t);
            }
        }
        Ok(seen.into_iter().collect())
    }

    /// Bits of `phys_row` that flip at exactly one of `temps` over `reps`,
    /// with that temperature, ordered by bit.
    fn single_temperature_cells(&self, phys_row: u32, temps: &[i32], reps: Range<u32>) -> Result<Vec<(u32, i32)>> {
        Ok(self
            .flip_temperatures(phys_row, temps, reps)?
            .into_iter()
            .filter(|(_, ts)| ts.len() == 1)
            .map(|(b, ts)| (b, ts[0]))
            .collect())
    }

    /// Whether each listed bit of `phys_row` flips during one double-sided hammer.
    fn probe_cells(&self, phys_row: u32, bits: &[u32], temp: i32, rep: u32) -> Result<Vec<bool>> {
        let flipped = self.row_flips(phys_row, temp, rep)?;
        Ok(bits.iter().map(|b| flipped.contains(b)).collect())
    }
}

impl HammerTarget for HammerEngine<'_> {
    fn rows(&self) -> u32 {
        self.module().rows()
    }

    fn temp_domain(&self) -> TempDomain {
        self.module().profile().temp_domain
    }

    fn single_sided(&self, aggressor: u32, temp: i32, rep: u32) -> Result<Vec<(u32, f64)>> {
        let out = self.hammer_single_sided(aggressor, NOMINAL_HAMMER_COUNT, self.config().pattern, temp, rep)?;
        let mapping = self.module().profile().mapping;
        out.neighbors
            .iter()
            .filter(|n| n.flips > 0.0)
            .map(|n| Ok((mapping.to_logical(n.physical_row)?, n.flips)))
            .collect()
    }

    fn region_ber(&self, region: Region, temp: i32, reps: Range<u32>) -> Result<Vec<BerSample>> {
        self.measure_region_ber_reps(region, temp, reps, self.config().pattern)
    }

    fn row_flips(&self, phys_row: u32, temp: i32, rep: u32) -> Result<Vec<u32>> {
        self.physical_row_flips(phys_row, temp, rep)
    }

    fn flip_temperatures(&self, phys_row: u32, temps: &[i32], reps: Range<u32>) -> Result<Vec<(u32, Vec<i32>)>> {
        self.physical_row_flip_temps(phys_row, temps, reps)
    }

    fn single_temperature_cells(&self, phys_row: u32, temps: &[i32], reps: Range<u32>) -> Result<Vec<(u32, i32)>> {
        self.physical_row_single_temp_cells(phys_row, temps, reps)
    }

    fn probe_cells(&self, phys_row: u32, bits: &[u32], temp: i32, rep: u32) -> Result<Vec<bool>> {
        self.probe_physical_cells(phys_row, bits, temp, rep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::{small_profile, SimulatedModule};
    use crate::hammer::{Fidelity, HammerConfig};

    #[test]
    fn overrides_match_default_methods() {
        struct Plain<'a>(HammerEngine<'a>);
        impl HammerTarget for Plain<'_> {
            fn rows(&self) -> u32 {
                self.0.rows()
            }
            fn temp_domain(&self) -> TempDomain {
                self.0.temp_domain()
            }
            fn single_sided(&self, a: u32, t: i32, r: u32) -> Result<Vec<(u32, f64)>> {
                self.0.single_sided(a, t, r)
            }
            fn region_ber(&self, g: Region, t: i32, r: Range<u32>) -> Result<Vec<BerSample>> {
                self.0.region_ber(g, t, r)
            }
            fn row_flips(&self, p: u32, t: i32, r: u32) -> Result<Vec<u32>> {
                self.0.row_flips(p, t, r)
            }
        }
        let m = SimulatedModule::build(&small_profile(), 4).unwrap();
        let e = HammerEngine::new(&m, HammerConfig { fidelity: Fidelity::CellAccurate, ..Default::default() });
        let plain = Plain(e);
        let temps: Vec<i32> = (50..=95).collect();
        for row in [0u32, 17, 400] {
            assert_eq!(
                e.flip_temperatures(row, &temps, 0..3).unwrap(),
                plain.flip_temperatures(row, &temps, 0..3).unwrap()
            );
            assert_eq!(
                e.single_temperature_cells(row, &temps, 0..3).unwrap(),
                plain.single_temperature_cells(row, &temps, 0..3).unwrap()
            );
            let bits: Vec<u32> = m.cells_in_row(row).iter().map(|c| c.bit).chain([1, 2, 3]).collect();
            assert_eq!(e.probe_cells(row, &bits, 66, 1).unwrap(), plain.probe_cells(row, &bits, 66, 1).unwrap());
        }
    }
}
