use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::ThreatModel;
use crate::dram::Manufacturer;
use crate::error::{Error, Result};
use crate::hammer::Region;
use crate::regression::error_percentile;

/// Steps with a true change of at most this many °C form the small-change class.
pub const SMALL_CHANGE: i32 = 5;

/// Percentiles of absolute errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileTable {
    pub count: usize,
    pub mean_abs: f64,
    pub p50: f64,
    pub p90: f64,
    pub p100: f64,
}

impl PercentileTable {
    pub fn from_errors(errors: &[f64]) -> Result<Self> {
        Ok(Self {
            count: errors.len(),
            mean_abs: errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len().max(1) as f64,
            p50: error_percentile(errors, 50.0)?,
            p90: error_percentile(errors, 90.0)?,
            p100: error_percentile(errors, 100.0)?,
        })
    }
}

/// One estimate of the monitored sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepError {
    pub index: usize,
    pub temp_c: i32,
    /// Previous sequence temperature, for relative estimates.
    pub prev_temp_c: Option<i32>,
    /// True temperature (absolute) or true change (relative).
    pub truth: f64,
    pub estimate: f64,
    pub error: f64,
    pub clamped: bool,
}

impl StepError {
    pub fn is_small_change(&self) -> bool {
        self.prev_temp_c.is_some_and(|p| (self.temp_c - p).abs() <= SMALL_CHANGE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub module_id: u32,
    pub manufacturer: Manufacturer,
    pub threat_model: ThreatModel,
    pub seed: u64,
    pub sequence_length: usize,
    pub region: Region,
    pub model_reps: u32,
    pub test_reps: u32,
    pub clamped: usize,
    /// Every estimate; for relative runs this is the large-change class.
    pub all: PercentileTable,
    /// Relative runs only: steps with |true change| <= 5 °C.
    pub small: Option<PercentileTable>,
    pub errors: Vec<f64>,
}

impl AccuracyReport {
    pub(crate) fn from_steps(
        head: (u32, Manufacturer, ThreatModel, u64, usize),
        region: Region,
        reps: (u32, u32),
        steps: &[StepError],
    ) -> Result<Self> {
        let (module_id, manufacturer, threat_model, seed, sequence_length) = head;
        let errors: Vec<f64> = steps.iter().map(|s| s.error).collect();
        let small = match threat_model {
            ThreatModel::AbsoluteSelf => None,
            ThreatModel::RelativeDonor => {
                let e: Vec<f64> = steps.iter().filter(|s| s.is_small_change()).map(|s| s.error).collect();
                if e.is_empty() {
                    None
                } else {
                    Some(PercentileTable::from_errors(&e)?)
                }
            }
        };
        Ok(Self {
            module_id,
            manufacturer,
            threat_model,
            seed,
            sequence_length,
            region,
            model_reps: reps.0,
            test_reps: reps.1,
            clamped: steps.iter().filter(|s| s.clamped).count(),
            all: PercentileTable::from_errors(&errors)?,
            small,
            errors,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanaryReport {
    pub module_id: u32,
    pub seed: u64,
    pub sequence_length: usize,
    pub enrollment_reps: u32,
    pub enrolled_total: usize,
    pub enrolled_per_temp: BTreeMap<i32, usize>,
    /// Temperatures without any enrolled canary.
    pub gaps: Vec<i32>,
    /// Readings where no canary flipped; the previous estimate was carried over.
    pub unknown_readings: usize,
    pub exact_fraction: f64,
    pub all: PercentileTable,
    pub errors: Vec<f64>,
}

impl CanaryReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: u32,
    pub threat_model: ThreatModel,
    pub regions: usize,
    pub mean_abs_error: f64,
    pub p90_abs_error: f64,
}

const ERRORS_HEADER: [&str; 7] = ["index", "temp_c", "prev_temp_c", "truth", "estimate", "error", "clamped"];

pub fn write_errors_csv<W: Write>(w: W, steps: &[StepError]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ERRORS_HEADER)?;
    for s in steps {
        out.write_record([
            s.index.to_string(),
            s.temp_c.to_string(),
            s.prev_temp_c.map(|t| t.to_string()).unwrap_or_default(),
            s.truth.to_string(),
            s.estimate.to_string(),
            s.error.to_string(),
            s.clamped.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_errors_csv<R: Read>(r: R) -> Result<Vec<StepError>> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().ne(ERRORS_HEADER) {
        return Err(Error::config("unexpected errors CSV header"));
    }
    let parse_err = |what: &str| Error::config(format!("malformed {what} in errors CSV"));
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let f = |i: usize| rec.get(i).unwrap_or_default();
            Ok(StepError {
                index: f(0).parse().map_err(|_| parse_err("index"))?,
                temp_c: f(1).parse().map_err(|_| parse_err("temp_c"))?,
                prev_temp_c: if f(2).is_empty() {
                    None
                } else {
                    Some(f(2).parse().map_err(|_| parse_err("prev_temp_c"))?)
                },
                truth: f(3).parse().map_err(|_| parse_err("truth"))?,
                estimate: f(4).parse().map_err(|_| parse_err("estimate"))?,
                error: f(5).parse().map_err(|_| parse_err("error"))?,
                clamped: f(6).parse().map_err(|_| parse_err("clamped"))?,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(w: W, module_id: u32, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["module_id", "size", "threat_model", "regions", "mean_abs_error", "p90_abs_error"])?;
    for r in rows {
        out.write_record([
            module_id.to_string(),
            r.size.to_string(),
            format!("{:?}", r.threat_model),
            r.regions.to_string(),
            r.mean_abs_error.to_string(),
            r.p90_abs_error.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_csv_round_trip() {
        let steps = vec![
            StepError { index: 0, temp_c: 60, prev_temp_c: None, truth: 60.0, estimate: 60.25, error: 0.25, clamped: false },
            StepError { index: 1, temp_c: 64, prev_temp_c: Some(60), truth: 4.0, estimate: 3.1, error: -0.9000000000000004, clamped: true },
        ];
        let mut buf = Vec::new();
        write_errors_csv(&mut buf, &steps).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("index,temp_c,prev_temp_c,truth,estimate,error,clamped\n"));
        assert_eq!(read_errors_csv(buf.as_slice()).unwrap(), steps);
    }

    #[test]
    fn tables_and_classes() {
        let steps: Vec<StepError> = (0..10)
            .map(|i| StepError {
                index: i + 1,
                temp_c: 60 + i as i32,
                prev_temp_c: Some(if i % 2 == 0 { 60 } else { 90 }),
                truth: 0.0,
                estimate: 0.0,
                error: i as f64 - 4.5,
                clamped: false,
            })
            .collect();
        let r = AccuracyReport::from_steps(
            (1, Manufacturer::A, ThreatModel::RelativeDonor, 0, 11),
            Region::new(0, 10),
            (10, 10),
            &steps,
        )
        .unwrap();
        assert_eq!(r.all.count, 10);
        assert_eq!(r.all.p100, 4.5);
        let small = r.small.unwrap();
        assert_eq!(small.count, steps.iter().filter(|s| s.is_small_change()).count());
        let abs = AccuracyReport::from_steps(
            (1, Manufacturer::A, ThreatModel::AbsoluteSelf, 0, 10),
            Region::new(0, 10),
            (10, 10),
            &steps,
        )
        .unwrap();
        assert!(abs.small.is_none());
    }
}
