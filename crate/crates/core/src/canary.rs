//! Canary cells: enrollment of cells that flip at a single temperature and
//! temperature estimation by probing them.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dram::CellCoord;
use crate::error::{Error, Result};
use crate::hammer::HammerTarget;
use crate::par::{try_map_range, Execution};
use crate::regression::{EstimateKind, TemperatureEstimate};

/// Enrolled canaries per temperature point. Coordinates are `(physical_row, bit)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanaryMap {
    pub reps: u32,
    pub temps: Vec<i32>,
    pub entries: BTreeMap<i32, BTreeSet<CellCoord>>,
}

impl CanaryMap {
    /// Builds a map and checks its invariants.
    pub fn new(reps: u32, temps: Vec<i32>, mut entries: BTreeMap<i32, BTreeSet<CellCoord>>) -> Result<Self> {
        for t in &temps {
            entries.entry(*t).or_default();
        }
        let map = Self { reps, temps, entries };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        let listed: BTreeSet<i32> = self.temps.iter().copied().collect();
        if listed.len() != self.temps.len() {
            return Err(Error::config("duplicate temperature in canary map"));
        }
        if self.entries.keys().any(|t| !listed.contains(t)) || listed.iter().any(|t| !self.entries.contains_key(t)) {
            return Err(Error::config("canary map entries do not match its temperature list"));
        }
        let mut seen = BTreeSet::new();
        for cells in self.entries.values() {
            for c in cells {
                if !seen.insert(*c) {
                    return Err(Error::config(format!("cell {c:?} enrolled at two temperatures")));
                }
            }
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.entries.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// Temperatures whose set is empty.
    pub fn gaps(&self) -> Vec<i32> {
        self.entries.iter().filter(|(_, s)| s.is_empty()).map(|(t, _)| *t).collect()
    }

    /// Enrolled `(bit, temperature)` pairs per physical row.
    pub fn by_row(&self) -> BTreeMap<u32, Vec<(u32, i32)>> {
        let mut rows: BTreeMap<u32, Vec<(u32, i32)>> = BTreeMap::new();
        for (t, cells) in &self.entries {
            for &(row, bit) in cells {
                rows.entry(row).or_default().push((bit, *t));
            }
        }
        for v in rows.values_mut() {
            v.sort_unstable();
        }
        rows
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollConfig {
    pub temps: Vec<i32>,
    pub reps: Range<u32>,
    /// Physical rows to hammer.
    pub rows: Range<u32>,
    pub execution: Execution,
}

/// Enrolls over every row of the target with repetitions `0..reps`.
pub fn enroll_canaries<T: HammerTarget + ?Sized>(target: &T, temps: &[i32], reps: u32) -> Result<CanaryMap> {
    enroll_canaries_with(
        target,
        &EnrollConfig { temps: temps.to_vec(), reps: 0..reps, rows: 0..target.rows(), execution: Execution::default() },
    )
}

/// A cell is a canary of `t` when it flips at least once at `t` and never at
/// any other enrolled temperature.
pub fn enroll_canaries_with<T: HammerTarget + ?Sized>(target: &T, config: &EnrollConfig) -> Result<CanaryMap> {
    if config.temps.is_empty() {
        return Err(Error::domain("no enrollment temperatures"));
    }
    if config.reps.is_empty() {
        return Err(Error::domain("enrollment needs at least one repetition"));
    }
    if config.rows.end > target.rows() {
        return Err(Error::domain(format!("enrollment rows end at {} beyond the module", config.rows.end)));
    }
    let mut temps = config.temps.clone();
    temps.sort_unstable();
    temps.dedup();
    let domain = target.temp_domain();
    if let Some(t) = temps.iter().find(|t| !domain.contains(**t)) {
        return Err(Error::domain(format!("enrollment temperature {t} outside [{}, {}]", domain.min, domain.max)));
    }
    let start = config.rows.start;
    let per_row = try_map_range(config.execution, config.rows.len(), |i| {
        target.single_temperature_cells(start + i as u32, &temps, config.reps.clone())
    })?;
    let mut entries: BTreeMap<i32, BTreeSet<CellCoord>> = temps.iter().map(|t| (*t, BTreeSet::new())).collect();
    for (i, cells) in per_row.into_iter().enumerate() {
        for (bit, t) in cells {
            entries.entry(t).or_default().insert((start + i as u32, bit));
        }
    }
    CanaryMap::new(config.reps.len() as u32, temps, entries)
}

/// Physical rows holding canaries, most canaries first, ties by ascending row.
pub fn canary_rows(map: &CanaryMap) -> Vec<u32> {
    let mut rows: Vec<(u32, usize)> = map.by_row().into_iter().map(|(r, v)| (r, v.len())).collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    rows.into_iter().map(|(r, _)| r).collect()
}

/// Greedy set cover of the enrolled temperatures by rows: each step takes the
/// row covering the most uncovered temperatures, ties by canary count and then
/// by ascending row.
pub fn greedy_cover_rows(map: &CanaryMap) -> Vec<u32> {
    let rows: Vec<(u32, BTreeSet<i32>, usize)> = map
        .by_row()
        .into_iter()
        .map(|(r, v)| (r, v.iter().map(|(_, t)| *t).collect(), v.len()))
        .collect();
    let mut uncovered: BTreeSet<i32> = rows.iter().flat_map(|(_, ts, _)| ts.iter().copied()).collect();
    let mut out = Vec::new();
    while !uncovered.is_empty() {
        let best = rows
            .iter()
            .max_by(|a, b| {
                let ga = a.1.intersection(&uncovered).count();
                let gb = b.1.intersection(&uncovered).count();
                ga.cmp(&gb).then(a.2.cmp(&b.2)).then(b.0.cmp(&a.0))
            })
            .expect("uncovered temperatures come from some row");
        for t in &best.1 {
            uncovered.remove(t);
        }
        out.push(best.0);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    /// Maximum number of rows hammered per reading.
    pub probe_budget: usize,
    /// Probed canaries a temperature needs to be a candidate.
    pub min_hits: usize,
    pub execution: Execution,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self { probe_budget: usize::MAX, min_hits: 1, execution: Execution::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanaryReading {
    /// The residual is one minus the winning hit fraction.
    pub estimate: TemperatureEstimate,
    /// Flipped over probed enrolled canaries, per candidate temperature.
    pub hit_fractions: BTreeMap<i32, f64>,
    pub rows_probed: usize,
}

/// Picks the temperature with the highest hit fraction. Ties go to the
/// temperature nearest `previous`, or to the lowest one without a previous
/// estimate.
pub fn select_temperature(fractions: &BTreeMap<i32, f64>, previous: Option<i32>) -> Option<i32> {
    let best = fractions.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut tied = fractions.iter().filter(|(_, f)| **f == best).map(|(t, _)| *t);
    match previous {
        None => tied.next(),
        Some(p) => tied.min_by_key(|t| ((t - p).abs(), *t)),
    }
}

/// Hammers the rows richest in canaries while the target sits at `temp` and
/// reports the temperature whose canaries flipped most consistently.
pub fn monitor_canaries<T: HammerTarget + ?Sized>(
    target: &T,
    map: &CanaryMap,
    config: &MonitorConfig,
    temp: i32,
    rep: u32,
    previous: Option<i32>,
) -> Result<CanaryReading> {
    if map.is_empty() {
        return Err(Error::UnknownTemperature("canary map is empty".into()));
    }
    if config.probe_budget == 0 {
        return Err(Error::domain("probe budget must be at least one row"));
    }
    let by_row = map.by_row();
    let rows: Vec<u32> = canary_rows(map).into_iter().take(config.probe_budget).collect();
    let outcomes = try_map_range(config.execution, rows.len(), |i| {
        let cells = &by_row[&rows[i]];
        let bits: Vec<u32> = cells.iter().map(|(b, _)| *b).collect();
        target.probe_cells(rows[i], &bits, temp, rep)
    })?;
    let mut probed: BTreeMap<i32, (usize, usize)> = BTreeMap::new();
    for (row, flips) in rows.iter().zip(&outcomes) {
        for ((_, t), flipped) in by_row[row].iter().zip(flips) {
            let e = probed.entry(*t).or_default();
            e.0 += 1;
            e.1 += usize::from(*flipped);
        }
    }
    if probed.values().all(|(_, hits)| *hits == 0) {
        return Err(Error::UnknownTemperature(format!("no canary flipped in {} probed rows", rows.len())));
    }
    let hit_fractions: BTreeMap<i32, f64> = probed
        .into_iter()
        .filter(|(_, (n, _))| *n >= config.min_hits.max(1))
        .map(|(t, (n, hits))| (t, hits as f64 / n as f64))
        .collect();
    let t = select_temperature(&hit_fractions, previous)
        .ok_or_else(|| Error::UnknownTemperature("no temperature has enough probed canaries".into()))?;
    Ok(CanaryReading {
        estimate: TemperatureEstimate {
            value: f64::from(t),
            kind: EstimateKind::Absolute,
            residual: 1.0 - hit_fractions[&t],
            clamped: false,
        },
        hit_fractions,
        rows_probed: rows.len(),
    })
}
