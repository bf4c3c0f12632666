//! Black-box identification of a module's row mapping, single-sided behavior
//! and manufacturer.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dram::{Manufacturer, MappingKind, RowMapping};
use crate::error::{Error, Result};
use crate::hammer::{HammerTarget, Region};
use crate::par::{try_map_range, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerprintConfig {
    /// Consecutive logical aggressor rows hammered single-sided.
    pub probe_rows: u32,
    /// First probed logical row; moved down if the probes would leave the module.
    pub probe_start: u32,
    pub probe_reps: u32,
    pub probe_temp: i32,
    /// Region over which the BER magnitude is measured.
    pub ber_rows: u32,
    pub ber_reps: u32,
    /// Flips per row separating manufacturer A (above) from D (below).
    pub theta_ad: f64,
    /// Dominant-side flip fraction above which a module counts as asymmetric.
    pub asymmetry_threshold: f64,
    /// Minimum fraction of probes a candidate mapping must explain.
    pub match_threshold: f64,
    /// Width of the BER margin logistic, in standard errors of the BER estimate.
    pub margin_scale: f64,
    pub execution: Execution,
}

impl Default for FingerprintConfig {
    fn default() -> Self {
        Self {
            probe_rows: 64,
            probe_start: 1024,
            probe_reps: 3,
            probe_temp: 50,
            ber_rows: 2048,
            ber_reps: 3,
            theta_ad: 1.0,
            asymmetry_threshold: 0.95,
            match_threshold: 0.9,
            margin_scale: 0.5,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintReport {
    pub recovered_mapping: RowMapping,
    pub single_sided_asymmetric: bool,
    /// Flips per row at the probe temperature.
    pub ber_magnitude: f64,
    pub manufacturer: Manufacturer,
    pub confidence: f64,
    /// Reserved for TRR-based identification; always absent.
    pub trr_hint: Option<String>,
    pub probe_temp: i32,
    pub mapping_match: f64,
    pub dominant_side_fraction: f64,
}

impl FingerprintReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Logical rows that flipped when one logical aggressor was hammered.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub aggressor: u32,
    pub flipped: Vec<(u32, f64)>,
}

/// Single-sided hammers of the configured probe rows, flips summed over reps.
pub fn collect_probes<T: HammerTarget + ?Sized>(target: &T, config: &FingerprintConfig) -> Result<Vec<Probe>> {
    if config.probe_rows < 16 || !config.probe_rows.is_power_of_two() {
        return Err(Error::domain(format!("probe_rows must be a power of two >= 16, got {}", config.probe_rows)));
    }
    if config.probe_reps == 0 {
        return Err(Error::domain("probe_reps must be at least 1"));
    }
    if !target.temp_domain().contains(config.probe_temp) {
        return Err(Error::domain(format!("probe temperature {} outside the module's domain", config.probe_temp)));
    }
    let rows = target.rows();
    if config.probe_rows + 2 > rows {
        return Err(Error::domain(format!("{} probe rows do not fit in {rows} rows", config.probe_rows)));
    }
    let start = config.probe_start.clamp(1, rows - config.probe_rows - 1);
    try_map_range(config.execution, config.probe_rows as usize, |i| {
        let aggressor = start + i as u32;
        let mut flipped: Vec<(u32, f64)> = Vec::new();
        for rep in 0..config.probe_reps {
            for (row, n) in target.single_sided(aggressor, config.probe_temp, rep)? {
                match flipped.iter_mut().find(|(r, _)| *r == row) {
                    Some(e) => e.1 += n,
                    None => flipped.push((row, n)),
                }
            }
        }
        flipped.sort_by_key(|(r, _)| *r);
        Ok(Probe { aggressor, flipped })
    })
}

/// Logical rows a mapping predicts as physical neighbors of `aggressor`.
fn predicted_neighbors(mapping: &RowMapping, aggressor: u32, rows: u32) -> BTreeSet<u32> {
    let Ok(phys) = mapping.to_physical(aggressor) else { return BTreeSet::new() };
    [phys.checked_sub(1), phys.checked_add(1)]
        .into_iter()
        .flatten()
        .filter_map(|p| mapping.to_logical(p).ok())
        .filter(|l| *l < rows)
        .collect()
}

/// Fraction of informative probes whose flipped rows are all predicted neighbors.
pub fn mapping_match_fraction(mapping: &RowMapping, probes: &[Probe], rows: u32) -> Result<f64> {
    let informative: Vec<&Probe> = probes.iter().filter(|p| !p.flipped.is_empty()).collect();
    if informative.is_empty() {
        return Err(Error::InsufficientSignal("no single-sided probe produced a flip".into()));
    }
    let matched = informative
        .iter()
        .filter(|p| {
            let predicted = predicted_neighbors(mapping, p.aggressor, rows);
            p.flipped.iter().all(|(r, _)| predicted.contains(r))
        })
        .count();
    Ok(matched as f64 / informative.len() as f64)
}

fn candidates(rows: u32) -> [RowMapping; 2] {
    let width = RowMapping::width_for_rows(rows);
    [RowMapping::sequential(width), RowMapping::xor_mfr_b(width)]
}

/// Best-matching candidate mapping with its match fraction. Sequential wins ties.
fn best_mapping(probes: &[Probe], rows: u32, config: &FingerprintConfig) -> Result<(RowMapping, f64)> {
    let mut best: Option<(RowMapping, f64)> = None;
    for m in candidates(rows) {
        let f = mapping_match_fraction(&m, probes, rows)?;
        if best.is_none_or(|(_, b)| f > b) {
            best = Some((m, f));
        }
    }
    let (m, f) = best.expect("two candidates");
    if f < config.match_threshold {
        return Err(Error::UnknownMapping { best: f });
    }
    Ok((m, f))
}

/// Fraction of single-sided flips landing on the dominant physical side under `mapping`.
pub fn dominant_side_fraction(mapping: &RowMapping, probes: &[Probe]) -> Result<f64> {
    let (mut lower, mut upper) = (0.0, 0.0);
    for p in probes {
        let agg = mapping.to_physical(p.aggressor)?;
        for &(row, n) in &p.flipped {
            if mapping.to_physical(row)? > agg {
                upper += n;
            } else {
                lower += n;
            }
        }
    }
    let total = lower + upper;
    if total <= 0.0 {
        return Err(Error::InsufficientSignal("no single-sided probe produced a flip".into()));
    }
    Ok(f64::max(lower, upper) / total)
}

/// Recovers the row mapping from single-sided adjacency.
pub fn reverse_engineer_mapping<T: HammerTarget + ?Sized>(target: &T, config: &FingerprintConfig) -> Result<RowMapping> {
    let probes = collect_probes(target, config)?;
    best_mapping(&probes, target.rows(), config).map(|(m, _)| m)
}

/// Whether single-sided flips concentrate on one physical side of the aggressor.
pub fn detect_single_sided_asymmetry<T: HammerTarget + ?Sized>(target: &T, config: &FingerprintConfig) -> Result<bool> {
    let probes = collect_probes(target, config)?;
    let (mapping, _) = best_mapping(&probes, target.rows(), config)?;
    Ok(dominant_side_fraction(&mapping, &probes)? > config.asymmetry_threshold)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Decision tree: XOR mapping means B; otherwise asymmetric modules are A or
/// D depending on BER magnitude, and symmetric ones are C.
pub fn classify_manufacturer<T: HammerTarget + ?Sized>(target: &T, config: &FingerprintConfig) -> Result<FingerprintReport> {
    let probes = collect_probes(target, config)?;
    let (mapping, mapping_match) = best_mapping(&probes, target.rows(), config)?;
    let dominant = dominant_side_fraction(&mapping, &probes)?;
    let asymmetric = dominant > config.asymmetry_threshold;

    let ber_rows = config.ber_rows.min(target.rows());
    let samples = target.region_ber(Region::new(0, ber_rows), config.probe_temp, 0..config.ber_reps.max(1))?;
    let ber = samples.iter().map(|s| s.flips_per_row).sum::<f64>() / samples.len() as f64;
    let observations = f64::from(ber_rows) * samples.len() as f64;
    // Poisson standard error of the mean, floored so a zero BER still has a scale.
    let se = (ber.max(1.0 / observations) / observations).sqrt();
    let margin = logistic((ber - config.theta_ad).abs() / (config.margin_scale * se));

    let (manufacturer, confidence) = match (mapping.kind, asymmetric) {
        (MappingKind::XorMfrB, _) => (Manufacturer::B, mapping_match),
        (MappingKind::Sequential, true) => {
            let m = if ber > config.theta_ad { Manufacturer::A } else { Manufacturer::D };
            (m, mapping_match * dominant * margin)
        }
        (MappingKind::Sequential, false) => {
            let symmetry = 1.0 - 2.0 * (dominant - 0.5).abs();
            (Manufacturer::C, mapping_match * symmetry)
        }
    };
    Ok(FingerprintReport {
        recovered_mapping: mapping,
        single_sided_asymmetric: asymmetric,
        ber_magnitude: ber,
        manufacturer,
        confidence: confidence.clamp(0.0, 1.0),
        trr_hint: None,
        probe_temp: config.probe_temp,
        mapping_match,
        dominant_side_fraction: dominant,
    })
}
