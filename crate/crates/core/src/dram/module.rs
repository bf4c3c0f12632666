//! Calibrated stochastic cell populations.
//!
//! A module holds two populations:
//!
//! * band cells, vulnerable over an interval of temperatures, generated
//!   procedurally from `(seed, row, index)` and never stored;
//! * canary cells, vulnerable at a single temperature, planted explicitly.
//!
//! Band cells are rescaled per temperature by `s(t)` so that the summed
//! effective flip probability over the whole module equals
//! `rows · ber_scale · P(t)`. The rescale is solved exactly over a histogram
//! of quantized base probabilities (water-filling with clipping at 1).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use super::cell::{CellCoord, CellKind, CellProfile};
use super::profile::ModuleProfile;
use crate::error::{Error, Result};
use crate::par::{fold_chunks, Execution};
use crate::rng::{self, Tag};

/// Base probabilities are multiples of `1 / PROB_LEVELS`.
pub const PROB_LEVELS: u32 = 4096;
/// 0.05 rounded to the probability grid.
const Q_MIN: u32 = 205;
/// 0.5 on the probability grid.
const Q_MAX: u32 = 2048;
pub const BAND_WIDTH_MIN: i32 = 2;
pub const BAND_WIDTH_MAX: i32 = 46;
/// Auto-sized populations are dense enough that `s(t)` never exceeds this.
pub const AUTO_SCALE_CEILING: f64 = 3.0;

const CALIBRATION_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy)]
struct RowLayout {
    count: u32,
    offset: u32,
    stride: u32,
    stride_inv: u32,
}

/// Per-row sums over cells of `p` and `p²`, one entry per domain temperature.
#[derive(Debug, Clone)]
pub struct RowStats {
    sums: Box<[f64]>,
}

impl RowStats {
    /// Expected flips (`Σ p`) at temperature index `ti`.
    #[inline]
    pub fn sum_p(&self, ti: usize) -> f64 {
        self.sums[2 * ti]
    }

    /// `Σ p²` at temperature index `ti`.
    #[inline]
    pub fn sum_p2(&self, ti: usize) -> f64 {
        self.sums[2 * ti + 1]
    }
}

/// A calibrated module instance. Immutable after construction apart from the
/// lazily filled per-row statistics cache.
#[derive(Debug)]
pub struct SimulatedModule {
    profile: ModuleProfile,
    seed: u64,
    band_cells_per_row: f64,
    per_temp_scale: Vec<f64>,
    calibrated_sums: Vec<f64>,
    canaries: Vec<CellProfile>,
    canary_by_row: HashMap<u32, Vec<usize>>,
    row_stats: Vec<OnceLock<RowStats>>,
}

/// Mean band cells per row so that `s(t) <= AUTO_SCALE_CEILING` everywhere.
pub fn auto_band_cells_per_row(profile: &ModuleProfile) -> f64 {
    let d = profile.temp_domain;
    let mean_p = f64::from(Q_MIN + Q_MAX) / 2.0 / f64::from(PROB_LEVELS);
    let mut lambda: f64 = 0.0;
    for t in d.temps() {
        let mut coverage = 0.0;
        for w in BAND_WIDTH_MIN..=BAND_WIDTH_MAX {
            let lo_min = d.min + 1 - w;
            let lo_max = d.max - 1;
            let hits = (lo_max.min(t) - lo_min.max(t - w) + 1).max(0);
            coverage += f64::from(hits) / f64::from(lo_max - lo_min + 1);
        }
        coverage /= f64::from(BAND_WIDTH_MAX - BAND_WIDTH_MIN + 1);
        let target = profile.ber_scale * profile.ber_cubic.eval(f64::from(t));
        lambda = lambda.max(target / (AUTO_SCALE_CEILING * coverage * mean_p));
    }
    lambda.clamp(1e-6, f64::from(profile.columns_per_row))
}

/// Inverse of an odd number modulo 2^32 (Newton iteration).
fn inverse_odd(a: u32) -> u32 {
    let mut x = a;
    for _ in 0..5 {
        x = x.wrapping_mul(2u32.wrapping_sub(a.wrapping_mul(x)));
    }
    x
}

impl SimulatedModule {
    /// Builds a module; deterministic in `(profile, seed)`.
    pub fn build(profile: &ModuleProfile, seed: u64) -> Result<Self> {
        Self::build_with(profile, seed, Execution::default())
    }

    pub fn build_with(profile: &ModuleProfile, seed: u64, exec: Execution) -> Result<Self> {
        profile.validate()?;
        let band_cells_per_row = profile
            .band_cells_per_row
            .unwrap_or_else(|| auto_band_cells_per_row(profile));
        let mut module = Self {
            profile: profile.clone(),
            seed,
            band_cells_per_row,
            per_temp_scale: Vec::new(),
            calibrated_sums: Vec::new(),
            canaries: Vec::new(),
            canary_by_row: HashMap::new(),
            row_stats: (0..profile.rows).map(|_| OnceLock::new()).collect(),
        };
        module.plant_canaries();
        module.calibrate(exec)?;
        Ok(module)
    }

    fn plant_canaries(&mut self) {
        let p = &self.profile;
        if p.canary_density <= 0.0 {
            return;
        }
        let mut rng = rng::stream(self.seed, Tag::Canary, &[]);
        let poisson = Poisson::new(p.canary_density).expect("positive density");
        let mut taken = BTreeSet::new();
        for t in p.temp_domain.temps() {
            let n = (poisson.sample(&mut rng) as u64).max(1);
            for _ in 0..n {
                let coord = loop {
                    let c = (rng.random_range(0..p.rows), rng.random_range(0..p.columns_per_row));
                    if taken.insert(c) {
                        break c;
                    }
                };
                self.canaries.push(CellProfile {
                    row: coord.0,
                    bit: coord.1,
                    kind: CellKind::Canary,
                    t_lo: t,
                    t_hi: t,
                    base_prob: p.canary_flip_prob,
                });
            }
        }
        self.canaries.sort_by_key(|c| c.coord());
        for (i, c) in self.canaries.iter().enumerate() {
            self.canary_by_row.entry(c.row).or_default().push(i);
        }
    }

    fn calibrate(&mut self, exec: Execution) -> Result<()> {
        let d = self.profile.temp_domain;
        let nt = d.len();
        let nq = (Q_MAX + 1) as usize;
        // Difference array over temperature: +1 at band start, -1 past band end.
        let diff = fold_chunks(
            exec,
            self.profile.rows as usize,
            CALIBRATION_CHUNK,
            || vec![0i64; (nt + 1) * nq],
            |acc, row| {
                self.for_each_band_cell(row as u32, |c, q| {
                    let a = (c.t_lo.max(d.min) - d.min) as usize;
                    let b = (c.t_hi.min(d.max) - d.min) as usize;
                    acc[a * nq + q as usize] += 1;
                    acc[(b + 1) * nq + q as usize] -= 1;
                });
            },
            |acc, part| acc.iter_mut().zip(part).for_each(|(a, b)| *a += b),
        );

        let mut counts = vec![0i64; nq];
        self.per_temp_scale = Vec::with_capacity(nt);
        self.calibrated_sums = Vec::with_capacity(nt);
        for (ti, t) in d.temps().enumerate() {
            for (c, dv) in counts.iter_mut().zip(&diff[ti * nq..(ti + 1) * nq]) {
                *c += dv;
            }
            let target = f64::from(self.profile.rows)
                * self.profile.ber_scale
                * self.profile.ber_cubic.eval(f64::from(t));
            // Canaries contribute their fixed mass at their single temperature;
            // band cells make up the rest so the total hits the curve exactly.
            let canary_mass: f64 = self
                .canaries
                .iter()
                .filter(|c| c.t_lo == t)
                .map(|c| c.base_prob.min(1.0))
                .sum();
            let (s, achieved) = solve_scale(&counts, (target - canary_mass).max(0.0), t)?;
            self.per_temp_scale.push(s);
            self.calibrated_sums.push(achieved);
        }
        Ok(())
    }

    fn layout(&self, row: u32) -> RowLayout {
        let cols = self.profile.columns_per_row;
        let mut rng = rng::stream(self.seed, Tag::RowCount, &[u64::from(row)]);
        let count = if self.band_cells_per_row > 0.0 {
            let n = Poisson::new(self.band_cells_per_row)
                .expect("positive rate")
                .sample(&mut rng);
            (n as u64).min(u64::from(cols)) as u32
        } else {
            0
        };
        let h = rng::key(self.seed, Tag::BandLayout, &[u64::from(row)]);
        let offset = (h as u32) & (cols - 1);
        let stride = (((h >> 32) as u32) | 1) & (cols - 1) | 1;
        RowLayout { count, offset, stride, stride_inv: inverse_odd(stride) }
    }

    #[inline]
    fn band_cell(&self, row: u32, index: u32, layout: &RowLayout) -> (CellProfile, u32) {
        let d = self.profile.temp_domain;
        let cols = self.profile.columns_per_row;
        let h1 = rng::key(self.seed, Tag::BandCell, &[u64::from(row), u64::from(index)]);
        let h2 = rng::mix64(h1);
        let h3 = rng::mix64(h2);
        let w = BAND_WIDTH_MIN + rng::below(h1, (BAND_WIDTH_MAX - BAND_WIDTH_MIN + 1) as u64) as i32;
        // Every band overlaps the domain in at least two integer points.
        let lo_min = d.min + 1 - w;
        let lo_count = (d.max - 1 - lo_min + 1) as u64;
        let t_lo = lo_min + rng::below(h2, lo_count) as i32;
        let q = Q_MIN + rng::below(h3, u64::from(Q_MAX - Q_MIN + 1)) as u32;
        let bit = layout.offset.wrapping_add(index.wrapping_mul(layout.stride)) & (cols - 1);
        (
            CellProfile {
                row,
                bit,
                kind: CellKind::Band,
                t_lo,
                t_hi: t_lo + w,
                base_prob: f64::from(q) / f64::from(PROB_LEVELS),
            },
            q,
        )
    }

    fn canary_at(&self, row: u32, bit: u32) -> Option<&CellProfile> {
        self.canary_by_row
            .get(&row)?
            .iter()
            .map(|&i| &self.canaries[i])
            .find(|c| c.bit == bit)
    }

    /// Visits every band cell of `row` together with its quantized base probability.
    fn for_each_band_cell(&self, row: u32, mut f: impl FnMut(&CellProfile, u32)) {
        let layout = self.layout(row);
        let canaries = self.canary_by_row.get(&row);
        for i in 0..layout.count {
            let (cell, q) = self.band_cell(row, i, &layout);
            if let Some(idx) = canaries {
                if idx.iter().any(|&k| self.canaries[k].bit == cell.bit) {
                    continue;
                }
            }
            f(&cell, q);
        }
    }

    pub fn profile(&self) -> &ModuleProfile {
        &self.profile
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rows(&self) -> u32 {
        self.profile.rows
    }

    pub fn band_cells_per_row(&self) -> f64 {
        self.band_cells_per_row
    }

    /// `s(t)` over the integer temperature grid.
    pub fn per_temp_scale(&self) -> &[f64] {
        &self.per_temp_scale
    }

    /// Module-wide `Σ min(1, s(t)·p)` over band cells, as solved during calibration.
    /// Adding the canary mass at `t` gives `rows · ber_scale · P(t)`.
    pub fn calibrated_sums(&self) -> &[f64] {
        &self.calibrated_sums
    }

    /// Planted canary cells sorted by coordinate.
    pub fn canaries(&self) -> &[CellProfile] {
        &self.canaries
    }

    /// Ground-truth canary coordinates per temperature.
    pub fn planted_canaries(&self) -> BTreeMap<i32, BTreeSet<CellCoord>> {
        let mut out: BTreeMap<i32, BTreeSet<CellCoord>> =
            self.profile.temp_domain.temps().map(|t| (t, BTreeSet::new())).collect();
        for c in &self.canaries {
            out.entry(c.t_lo).or_default().insert(c.coord());
        }
        out
    }

    /// Band cells of one physical row, in generation order.
    pub fn band_cells_in_row(&self, row: u32) -> Vec<CellProfile> {
        let mut v = Vec::new();
        if row < self.profile.rows {
            self.for_each_band_cell(row, |c, _| v.push(*c));
        }
        v
    }

    /// All cells (band then canary) of one physical row.
    pub fn cells_in_row(&self, row: u32) -> Vec<CellProfile> {
        let mut v = self.band_cells_in_row(row);
        if let Some(idx) = self.canary_by_row.get(&row) {
            v.extend(idx.iter().map(|&i| self.canaries[i]));
        }
        v
    }

    /// Every cell of the module, row by row.
    pub fn cells(&self) -> impl Iterator<Item = CellProfile> + '_ {
        (0..self.profile.rows).flat_map(move |r| self.cells_in_row(r))
    }

    /// Looks up the cell at a coordinate, if any.
    pub fn cell_at(&self, row: u32, bit: u32) -> Option<CellProfile> {
        if row >= self.profile.rows || bit >= self.profile.columns_per_row {
            return None;
        }
        if let Some(c) = self.canary_at(row, bit) {
            return Some(*c);
        }
        let layout = self.layout(row);
        let cols = self.profile.columns_per_row;
        let index = bit.wrapping_sub(layout.offset).wrapping_mul(layout.stride_inv) & (cols - 1);
        (index < layout.count).then(|| self.band_cell(row, index, &layout).0)
    }

    /// Effective per-trial flip probability of `cell` at `temp` and the nominal hammer count.
    pub fn effective_prob(&self, cell: &CellProfile, temp: i32) -> f64 {
        if !cell.vulnerable_at(temp) {
            return 0.0;
        }
        match cell.kind {
            CellKind::Canary => cell.base_prob,
            CellKind::Band => match self.profile.temp_domain.index(temp) {
                Ok(ti) => (self.per_temp_scale[ti] * cell.base_prob).min(1.0),
                Err(_) => 0.0,
            },
        }
    }

    /// Cached `Σ p` / `Σ p²` for one physical row, band and canary cells included.
    pub fn row_stats(&self, row: u32) -> &RowStats {
        self.row_stats[row as usize].get_or_init(|| {
            let d = self.profile.temp_domain;
            let mut sums = vec![0.0f64; 2 * d.len()];
            let mut add = |c: &CellProfile| {
                for t in c.t_lo.max(d.min)..=c.t_hi.min(d.max) {
                    let ti = (t - d.min) as usize;
                    let p = self.effective_prob(c, t);
                    sums[2 * ti] += p;
                    sums[2 * ti + 1] += p * p;
                }
            };
            self.for_each_band_cell(row, |c, _| add(c));
            if let Some(idx) = self.canary_by_row.get(&row) {
                for &i in idx {
                    add(&self.canaries[i]);
                }
            }
            RowStats { sums: sums.into_boxed_slice() }
        })
    }
}

/// Exact water-filling: finds `s` with `Σ_q count[q]·min(1, s·q/Q) = target`.
fn solve_scale(counts: &[i64], target: f64, temp: i32) -> Result<(f64, f64)> {
    let levels = f64::from(PROB_LEVELS);
    let available: i64 = counts.iter().sum();
    if target > available as f64 {
        return Err(Error::Calibration { temp, target, available: available.max(0) as u64 });
    }
    let mut mass: u128 = counts
        .iter()
        .enumerate()
        .map(|(q, &c)| c.max(0) as u128 * q as u128)
        .sum();
    let mut clipped: i64 = 0;
    for q in (0..counts.len()).rev() {
        if counts[q] <= 0 {
            continue;
        }
        let s = (target - clipped as f64) * levels / mass as f64;
        if s * q as f64 / levels <= 1.0 {
            let achieved = clipped as f64 + s * mass as f64 / levels;
            return Ok((s, achieved));
        }
        clipped += counts[q];
        mass -= counts[q] as u128 * q as u128;
    }
    // Everything clipped: only reachable when target == available.
    Ok((levels / f64::from(Q_MIN), clipped as f64))
}

/// Free-function form of [`SimulatedModule::build`].
pub fn build_module(profile: &ModuleProfile, seed: u64) -> Result<SimulatedModule> {
    SimulatedModule::build(profile, seed)
}
