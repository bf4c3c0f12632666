use std::ops::Range;

use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::pattern::DataPattern;
use super::records::{BerSample, FlipRecord, Region};
use crate::dram::{CellProfile, SimulatedModule};
use crate::error::{Error, Result};
use crate::par::{map_range, try_map_range, Execution};
use crate::rng::{self, Tag};

/// Activations per aggressor row at which the calibrated probabilities apply.
pub const NOMINAL_HAMMER_COUNT: u64 = 150_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    /// One count per row, drawn from a moment-matched approximation of the row's
    /// Poisson-binomial flip distribution.
    #[default]
    Aggregate,
    /// Every cell is sampled individually.
    CellAccurate,
}

/// `Off` replaces sampling by its deterministic limit: aggregate rows report
/// their expected flip count and cell-accurate hammering flips every cell whose
/// effective probability is positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    #[default]
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HammerConfig {
    pub noise: Noise,
    pub fidelity: Fidelity,
    /// Single-sided probabilities relative to double-sided ones.
    pub single_sided_factor: f64,
    /// Multiplier per pattern, indexed like [`DataPattern::ALL`].
    pub pattern_sensitivity: [f64; 7],
    /// Pattern used by the black-box [`super::HammerTarget`] interface.
    pub pattern: DataPattern,
    pub execution: Execution,
}

impl Default for HammerConfig {
    fn default() -> Self {
        Self {
            noise: Noise::On,
            fidelity: Fidelity::Aggregate,
            single_sided_factor: 0.5,
            pattern_sensitivity: [1.0; 7],
            pattern: DataPattern::COLSTRIPE,
            execution: Execution::default(),
        }
    }
}

/// Result of one double-sided hammer.
#[derive(Debug, Clone, PartialEq)]
pub enum HammerOutcome {
    Count(f64),
    Flips(Vec<FlipRecord>),
}

impl HammerOutcome {
    pub fn flips(&self) -> f64 {
        match self {
            HammerOutcome::Count(c) => *c,
            HammerOutcome::Flips(v) => v.len() as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborFlips {
    pub side: Side,
    pub physical_row: u32,
    pub flips: f64,
}

/// Flips in the physical neighbors of a single-sided aggressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleSidedOutcome {
    pub aggressor_physical: u32,
    pub neighbors: Vec<NeighborFlips>,
    /// Set when the aggressor sits at the edge of the physical row space.
    pub missing: Option<Side>,
}

impl SingleSidedOutcome {
    pub fn flips_on(&self, side: Side) -> Option<f64> {
        self.neighbors.iter().find(|n| n.side == side).map(|n| n.flips)
    }
}

/// Runs simulated RowHammer sequences against one module.
#[derive(Debug, Clone, Copy)]
pub struct HammerEngine<'m> {
    module: &'m SimulatedModule,
    config: HammerConfig,
}

/// Distinguishes the trial streams of different access patterns on the same row.
#[derive(Debug, Clone, Copy)]
enum Access {
    Double = 0,
    SingleLower = 1,
    SingleUpper = 2,
}

impl<'m> HammerEngine<'m> {
    pub fn new(module: &'m SimulatedModule, config: HammerConfig) -> Self {
        Self { module, config }
    }

    pub fn module(&self) -> &'m SimulatedModule {
        self.module
    }

    pub fn config(&self) -> &HammerConfig {
        &self.config
    }

    fn temp_index(&self, temp: i32) -> Result<usize> {
        self.module.profile().temp_domain.index(temp)
    }

    fn hammer_factor(hammer_count: u64) -> f64 {
        (hammer_count as f64 / NOMINAL_HAMMER_COUNT as f64).min(1.0)
    }

    fn sensitivity(&self, pattern: DataPattern) -> f64 {
        self.config.pattern_sensitivity[pattern.index()]
    }

    fn logical_to_physical(&self, row: u32) -> Result<u32> {
        let rows = self.module.rows();
        if row >= rows {
            return Err(Error::domain(format!("row {row} outside the module's {rows} rows")));
        }
        self.module.profile().mapping.to_physical(row)
    }

    /// Aggregate flip count of one physical row at intensity `k` (probability multiplier).
    fn sample_row(&self, phys: u32, ti: usize, temp: i32, rep: u32, k: f64, access: Access) -> f64 {
        if k <= 0.0 {
            return 0.0;
        }
        let st = self.module.row_stats(phys);
        let mean = k * st.sum_p(ti);
        if self.config.noise == Noise::Off || mean <= 0.0 {
            return mean;
        }
        let sum_sq = k * k * st.sum_p2(ti);
        let mut rng = rng::stream(
            self.module.seed(),
            Tag::RowDraw,
            &[u64::from(phys), rng::temp_part(temp), u64::from(rep), access as u64],
        );
        // Binomial(n, mean/n) with n = mean²/Σp² matches the first two moments.
        let n = if sum_sq > 0.0 { (mean * mean / sum_sq).round().max(mean.ceil()) } else { f64::INFINITY };
        if n > 1e7 {
            Poisson::new(mean).expect("positive mean").sample(&mut rng)
        } else {
            let p = (mean / n).min(1.0);
            Binomial::new(n as u64, p).expect("valid binomial").sample(&mut rng) as f64
        }
    }

    /// Cell-accurate trial of one cell.
    #[inline]
    fn cell_flips(&self, cell: &CellProfile, temp: i32, rep: u32, k: f64, access: Access) -> bool {
        let p = (self.module.effective_prob(cell, temp) * k).min(1.0);
        if p <= 0.0 {
            return false;
        }
        match self.config.noise {
            Noise::Off => true,
            Noise::On => {
                let h = rng::key(
                    self.module.seed(),
                    Tag::CellTrial,
                    &[
                        u64::from(cell.row),
                        u64::from(cell.bit),
                        rng::temp_part(temp),
                        u64::from(rep),
                        access as u64,
                    ],
                );
                rng::unit(h) < p
            }
        }
    }

    fn row_flip_records(&self, phys: u32, temp: i32, rep: u32, k: f64, access: Access) -> Vec<FlipRecord> {
        if k <= 0.0 {
            return Vec::new();
        }
        self.module
            .cells_in_row(phys)
            .into_iter()
            .filter(|c| self.cell_flips(c, temp, rep, k, access))
            .map(|c| FlipRecord { row: c.row, bit: c.bit, temp, rep })
            .collect()
    }

    fn row_outcome(&self, phys: u32, ti: usize, temp: i32, rep: u32, k: f64, access: Access) -> HammerOutcome {
        match self.config.fidelity {
            Fidelity::Aggregate => HammerOutcome::Count(self.sample_row(phys, ti, temp, rep, k, access)),
            Fidelity::CellAccurate => HammerOutcome::Flips(self.row_flip_records(phys, temp, rep, k, access)),
        }
    }

    /// Double-sided hammer of `victim` (logical row): both physical neighbors
    /// are activated `hammer_count` times.
    pub fn hammer_double_sided(
        &self,
        victim: u32,
        hammer_count: u64,
        pattern: DataPattern,
        temp: i32,
        rep: u32,
    ) -> Result<HammerOutcome> {
        let ti = self.temp_index(temp)?;
        let phys = self.logical_to_physical(victim)?;
        if phys == 0 {
            return Err(Error::Edge { row: victim, side: "lower" });
        }
        if phys + 1 >= self.module.rows() {
            return Err(Error::Edge { row: victim, side: "upper" });
        }
        let k = Self::hammer_factor(hammer_count) * self.sensitivity(pattern);
        Ok(self.row_outcome(phys, ti, temp, rep, k, Access::Double))
    }

    /// Expected double-sided flips of a victim row.
    pub fn expected_flips(&self, victim: u32, hammer_count: u64, pattern: DataPattern, temp: i32) -> Result<f64> {
        let ti = self.temp_index(temp)?;
        let phys = self.logical_to_physical(victim)?;
        let k = Self::hammer_factor(hammer_count) * self.sensitivity(pattern);
        Ok(k * self.module.row_stats(phys).sum_p(ti))
    }

    /// Single-sided hammer of `aggressor` (logical row). Modules with
    /// single-sided asymmetry only disturb the physical row above the aggressor.
    pub fn hammer_single_sided(
        &self,
        aggressor: u32,
        hammer_count: u64,
        pattern: DataPattern,
        temp: i32,
        rep: u32,
    ) -> Result<SingleSidedOutcome> {
        let ti = self.temp_index(temp)?;
        let phys = self.logical_to_physical(aggressor)?;
        let k = Self::hammer_factor(hammer_count) * self.sensitivity(pattern) * self.config.single_sided_factor;
        let asymmetric = self.module.profile().single_sided_asymmetric;
        let mut neighbors = Vec::with_capacity(2);
        let mut missing = None;
        for (side, access) in [(Side::Lower, Access::SingleLower), (Side::Upper, Access::SingleUpper)] {
            let row = match side {
                Side::Lower => phys.checked_sub(1),
                Side::Upper => Some(phys + 1).filter(|r| *r < self.module.rows()),
            };
            let Some(row) = row else {
                missing = Some(side);
                continue;
            };
            let k_side = if asymmetric && side == Side::Lower { 0.0 } else { k };
            let flips = self.row_outcome(row, ti, temp, rep, k_side, access).flips();
            neighbors.push(NeighborFlips { side, physical_row: row, flips });
        }
        Ok(SingleSidedOutcome { aggressor_physical: phys, neighbors, missing })
    }

    fn region_total(&self, region: Region, ti: usize, temp: i32, rep: u32, k: f64) -> Result<f64> {
        let rows: Vec<u32> = try_map_range(self.config.execution, region.row_count as usize, |i| {
            self.logical_to_physical(region.start_row + i as u32)
        })?;
        let per_row = map_range(self.config.execution, rows.len(), |i| {
            self.row_outcome(rows[i], ti, temp, rep, k, Access::Double).flips()
        });
        Ok(per_row.iter().sum())
    }

    /// One [`BerSample`] per repetition in `reps`. Every row of the region is
    /// hammered double-sided at the nominal hammer count; rows at the physical
    /// array edge use the same per-cell model.
    pub fn measure_region_ber_reps(
        &self,
        region: Region,
        temp: i32,
        reps: Range<u32>,
        pattern: DataPattern,
    ) -> Result<Vec<BerSample>> {
        region.check(self.module.rows())?;
        let ti = self.temp_index(temp)?;
        let k = self.sensitivity(pattern);
        reps.map(|rep| {
            let total = self.region_total(region, ti, temp, rep, k)?;
            Ok(BerSample { region, temp, rep, flips_per_row: total / f64::from(region.row_count) })
        })
        .collect()
    }

    /// Repetitions `0..repetitions`.
    pub fn measure_region_ber(
        &self,
        region: Region,
        temp: i32,
        repetitions: u32,
        pattern: DataPattern,
    ) -> Result<Vec<BerSample>> {
        self.measure_region_ber_reps(region, temp, 0..repetitions, pattern)
    }

    /// Per-row flip counts of one region measurement, in row order.
    pub fn region_row_counts(&self, region: Region, temp: i32, rep: u32, pattern: DataPattern) -> Result<Vec<f64>> {
        region.check(self.module.rows())?;
        let ti = self.temp_index(temp)?;
        let k = self.sensitivity(pattern);
        try_map_range(self.config.execution, region.row_count as usize, |i| {
            let phys = self.logical_to_physical(region.start_row + i as u32)?;
            Ok(self.row_outcome(phys, ti, temp, rep, k, Access::Double).flips())
        })
    }

    /// Cell-accurate flip records of a region measurement, regardless of the configured fidelity.
    pub fn region_flip_records(&self, region: Region, temp: i32, rep: u32, pattern: DataPattern) -> Result<Vec<FlipRecord>> {
        region.check(self.module.rows())?;
        self.temp_index(temp)?;
        let k = self.sensitivity(pattern);
        let per_row = try_map_range(self.config.execution, region.row_count as usize, |i| {
            let phys = self.logical_to_physical(region.start_row + i as u32)?;
            Ok::<_, Error>(self.row_flip_records(phys, temp, rep, k, Access::Double))
        })?;
        Ok(per_row.into_iter().flatten().collect())
    }

    /// Worst-case data pattern: largest total flips over one repetition,
    /// ties resolved by [`DataPattern::ALL`] order.
    pub fn select_worst_case_pattern(&self, region: Region, temp: i32) -> Result<DataPattern> {
        let mut best = DataPattern::ALL[0];
        let mut best_total = f64::NEG_INFINITY;
        for p in DataPattern::ALL {
            let total = self.measure_region_ber_reps(region, temp, 0..1, p)?[0].total_flips();
            if total > best_total {
                best = p;
                best_total = total;
            }
        }
        Ok(best)
    }

    /// Cell-accurate double-sided hammer of a physical victim row with the configured pattern.
    pub fn physical_row_flips(&self, phys: u32, temp: i32, rep: u32) -> Result<Vec<u32>> {
        self.temp_index(temp)?;
        if phys >= self.module.rows() {
            return Err(Error::domain(format!("physical row {phys} outside the module")));
        }
        let k = self.sensitivity(self.config.pattern);
        Ok(self.row_flip_records(phys, temp, rep, k, Access::Double).into_iter().map(|f| f.bit).collect())
    }

    /// For every cell of `phys` that flips at least once over `reps`, the
    /// temperatures (from `temps`) at which it flipped. Equivalent to calling
    /// [`Self::physical_row_flips`] for every `(temp, rep)`.
    pub fn physical_row_flip_temps(&self, phys: u32, temps: &[i32], reps: Range<u32>) -> Result<Vec<(u32, Vec<i32>)>> {
        for &t in temps {
            self.temp_index(t)?;
        }
        if phys >= self.module.rows() {
            return Err(Error::domain(format!("physical row {phys} outside the module")));
        }
        let k = self.sensitivity(self.config.pattern);
        let mut out = Vec::new();
        for cell in self.module.cells_in_row(phys) {
            let hit: Vec<i32> = temps
                .iter()
                .copied()
                .filter(|&t| cell.vulnerable_at(t))
                .filter(|&t| reps.clone().any(|r| self.cell_flips(&cell, t, r, k, Access::Double)))
                .collect();
            if !hit.is_empty() {
                out.push((cell.bit, hit));
            }
        }
        out.sort_by_key(|(b, _)| *b);
        Ok(out)
    }

    /// Cells of `phys` that flip at exactly one of `temps` over `reps`. Stops
    /// sampling a cell as soon as it has flipped at two temperatures.
    pub fn physical_row_single_temp_cells(&self, phys: u32, temps: &[i32], reps: Range<u32>) -> Result<Vec<(u32, i32)>> {
        for &t in temps {
            self.temp_index(t)?;
        }
        if phys >= self.module.rows() {
            return Err(Error::domain(format!("physical row {phys} outside the module")));
        }
        let k = self.sensitivity(self.config.pattern);
        let mut out = Vec::new();
        for cell in self.module.cells_in_row(phys) {
            let mut first = None;
            let mut multiple = false;
            for &t in temps {
                if !cell.vulnerable_at(t) || !reps.clone().any(|r| self.cell_flips(&cell, t, r, k, Access::Double)) {
                    continue;
                }
                if first.is_some_and(|f| f != t) {
                    multiple = true;
                    break;
                }
                first = Some(t);
            }
            if let (Some(t), false) = (first, multiple) {
                out.push((cell.bit, t));
            }
        }
        out.sort_by_key(|(b, _)| *b);
        Ok(out)
    }

    /// Cell-accurate outcome for selected bits of a physical row.
    pub fn probe_physical_cells(&self, phys: u32, bits: &[u32], temp: i32, rep: u32) -> Result<Vec<bool>> {
        self.temp_index(temp)?;
        let k = self.sensitivity(self.config.pattern);
        Ok(bits
            .iter()
            .map(|&b| {
                self.module
                    .cell_at(phys, b)
                    .is_some_and(|c| self.cell_flips(&c, temp, rep, k, Access::Double))
            })
            .collect())
    }
}
