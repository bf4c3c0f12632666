//! End-to-end attack runs and accuracy experiments.

mod pipeline;
mod report;
mod sequence;

pub use pipeline::{run_canary_experiment, run_pipeline, run_region_sweep, CanaryOutcome, PipelineOutcome};
pub use report::{
    read_errors_csv, write_errors_csv, write_sweep_csv, AccuracyReport, CanaryReport, PercentileTable, StepError,
    SweepRow, SMALL_CHANGE,
};
pub use sequence::generate_temperature_sequence;

use serde::{Deserialize, Serialize};

use crate::canary::MonitorConfig;
use crate::dram::{ModuleProfile, TempDomain};
use crate::error::{Error, Result};
use crate::fingerprint::FingerprintConfig;
use crate::hammer::{HammerConfig, Region};
use crate::rng::{self, Tag};

/// Repetitions measured per (module, temperature).
pub const AVAILABLE_REPS: u32 = 20;
/// Inter-module scale of the default sibling donor.
pub const DEFAULT_DONOR_SCALE: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ThreatModel {
    /// The model comes from a donor module of the same model; only
    /// temperature changes are estimated.
    RelativeDonor,
    /// The attacker profiles the victim itself and estimates absolute temperatures.
    AbsoluteSelf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub victim: ModuleProfile,
    pub donor: Option<ModuleProfile>,
    pub seed: u64,
    pub threat_model: ThreatModel,
    pub sequence_length: usize,
    pub temp_domain: TempDomain,
    /// Logical rows measured; `None` means the whole module.
    pub region: Option<Region>,
    /// Model data uses repetitions `0..model_reps`.
    pub model_reps: u32,
    /// Test data uses repetitions `model_reps..model_reps + test_reps`.
    pub test_reps: u32,
    pub sweep_sizes: Vec<u32>,
    pub hammer: HammerConfig,
    pub fingerprint: FingerprintConfig,
    pub monitor: MonitorConfig,
}

impl ExperimentConfig {
    /// AbsoluteSelf defaults for `victim`.
    pub fn new(victim: ModuleProfile, seed: u64) -> Self {
        let temp_domain = victim.temp_domain;
        Self {
            victim,
            donor: None,
            seed,
            threat_model: ThreatModel::AbsoluteSelf,
            sequence_length: 720,
            temp_domain,
            region: None,
            model_reps: 10,
            test_reps: 10,
            sweep_sizes: vec![512, 1024, 2048, 4096, 8192, 24576],
            hammer: HammerConfig::default(),
            fingerprint: FingerprintConfig::default(),
            monitor: MonitorConfig::default(),
        }
    }

    /// RelativeDonor with the given donor profile.
    pub fn relative(victim: ModuleProfile, donor: ModuleProfile, seed: u64) -> Self {
        Self { donor: Some(donor), threat_model: ThreatModel::RelativeDonor, ..Self::new(victim, seed) }
    }

    pub fn region_or_full(&self) -> Region {
        self.region.unwrap_or(Region::new(0, self.victim.rows))
    }

    /// Seed of the donor module, derived from the experiment seed.
    pub fn donor_seed(&self) -> u64 {
        rng::key(self.seed, Tag::Donor, &[])
    }

    pub fn validate(&self) -> Result<()> {
        self.victim.validate()?;
        if let Some(d) = &self.donor {
            d.validate()?;
            if d.rows != self.victim.rows {
                return Err(Error::config("donor and victim must have the same number of rows"));
            }
        }
        match (self.threat_model, &self.donor) {
            (ThreatModel::RelativeDonor, None) => {
                return Err(Error::config("the relative threat model needs a donor profile"))
            }
            (ThreatModel::AbsoluteSelf, Some(_)) => {
                return Err(Error::config("the absolute threat model does not use a donor profile"))
            }
            _ => {}
        }
        if self.model_reps == 0 || self.test_reps == 0 {
            return Err(Error::config("model_reps and test_reps must both be at least 1"));
        }
        if self.model_reps + self.test_reps > AVAILABLE_REPS {
            return Err(Error::config(format!(
                "model_reps + test_reps = {} exceeds the {AVAILABLE_REPS} available repetitions",
                self.model_reps + self.test_reps
            )));
        }
        let vd = self.victim.temp_domain;
        let d = self.temp_domain;
        if d.min < vd.min || d.max > vd.max || d.min >= d.max {
            return Err(Error::config(format!(
                "experiment domain [{}, {}] must lie inside the module domain [{}, {}]",
                d.min, d.max, vd.min, vd.max
            )));
        }
        if d.len() < 4 {
            return Err(Error::config("a cubic model needs at least 4 temperature points"));
        }
        self.region_or_full().check(self.victim.rows).map_err(|e| Error::config(e.to_string()))
    }

    /// Checks the region sweep sizes; only the sweep uses them.
    pub fn validate_sweep(&self) -> Result<()> {
        if self.sweep_sizes.is_empty() {
            return Err(Error::config("region sweep needs at least one size"));
        }
        if self.sweep_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("region sweep sizes must be strictly ascending"));
        }
        if let Some(s) = self.sweep_sizes.iter().find(|s| **s == 0 || **s > self.victim.rows) {
            return Err(Error::config(format!("region size {s} outside 1..={}", self.victim.rows)));
        }
        Ok(())
    }
}

/// A donor of the same model: identical curve, different inter-module scale.
pub fn sibling_donor(victim: &ModuleProfile, scale: f64) -> ModuleProfile {
    victim.with_ber_scale(victim.ber_scale * scale)
}
