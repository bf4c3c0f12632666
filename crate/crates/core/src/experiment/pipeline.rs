use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use super::report::{write_errors_csv, write_sweep_csv, AccuracyReport, CanaryReport, PercentileTable, StepError, SweepRow};
use super::sequence::generate_temperature_sequence;
use super::{ExperimentConfig, ThreatModel};
use crate::canary::{enroll_canaries_with, monitor_canaries, select_temperature, CanaryMap, EnrollConfig};
use crate::dram::{SimulatedModule, TempDomain};
use crate::error::{Error, Result};
use crate::fingerprint::{classify_manufacturer, FingerprintReport};
use crate::hammer::{write_ber_csv, BerSample, DataPattern, Fidelity, HammerConfig, HammerEngine, Region};
use crate::regression::{estimate_relative_change, fit_cubic_with, invert_model, ModelSource, RegressionModel};

/// Everything a pipeline run produced.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: AccuracyReport,
    pub victim_fingerprint: FingerprintReport,
    pub donor_fingerprint: Option<FingerprintReport>,
    pub pattern: DataPattern,
    pub model: RegressionModel,
    pub model_samples: Vec<BerSample>,
    pub test_samples: Vec<BerSample>,
    pub steps: Vec<StepError>,
}

#[derive(Debug, Clone)]
pub struct CanaryOutcome {
    pub report: CanaryReport,
    pub map: CanaryMap,
    pub steps: Vec<StepError>,
}

/// Victim, optional donor, and the worst-case pattern chosen on the victim.
struct Lab {
    victim: SimulatedModule,
    donor: Option<SimulatedModule>,
}

impl Lab {
    fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let victim = SimulatedModule::build_with(&config.victim, config.seed, config.hammer.execution)?;
        let donor = match (&config.donor, config.threat_model) {
            (Some(p), ThreatModel::RelativeDonor) => {
                Some(SimulatedModule::build_with(p, config.donor_seed(), config.hammer.execution)?)
            }
            _ => None,
        };
        Ok(Self { victim, donor })
    }

    fn engine<'a>(&self, module: &'a SimulatedModule, hammer: &HammerConfig) -> HammerEngine<'a> {
        HammerEngine::new(module, *hammer)
    }
}

fn fingerprint_step(
    lab: &Lab,
    config: &ExperimentConfig,
) -> Result<(FingerprintReport, Option<FingerprintReport>)> {
    let victim = classify_manufacturer(&lab.engine(&lab.victim, &config.hammer), &config.fingerprint)?;
    let donor = match &lab.donor {
        Some(d) => {
            let report = classify_manufacturer(&lab.engine(d, &config.hammer), &config.fingerprint)?;
            if report.manufacturer != victim.manufacturer {
                return Err(Error::FingerprintMismatch {
                    donor: report.manufacturer.to_string(),
                    victim: victim.manufacturer.to_string(),
                });
            }
            Some(report)
        }
        None => None,
    };
    Ok((victim, donor))
}

fn select_pattern(engine: &HammerEngine, region: Region, domain: TempDomain) -> Result<DataPattern> {
    let probe = Region::new(region.start_row, region.row_count.min(2048));
    engine.select_worst_case_pattern(probe, domain.min)
}

/// Fits the model on repetitions `0..model_reps` at every domain temperature.
fn fit_step(
    engine: &HammerEngine,
    region: Region,
    config: &ExperimentConfig,
    pattern: DataPattern,
    source: ModelSource,
) -> Result<(RegressionModel, Vec<BerSample>)> {
    let mut samples = Vec::with_capacity(config.temp_domain.len() * config.model_reps as usize);
    for t in config.temp_domain.temps() {
        samples.extend(engine.measure_region_ber_reps(region, t, 0..config.model_reps, pattern)?);
    }
    let points: Vec<(f64, f64)> = samples.iter().map(|s| (f64::from(s.temp), s.flips_per_row)).collect();
    Ok((fit_cubic_with(&points, config.temp_domain, source)?, samples))
}

/// Test repetition used for sequence point `i`.
fn test_rep(config: &ExperimentConfig, i: usize) -> u32 {
    config.model_reps + (i % config.test_reps as usize) as u32
}

/// BER observed at every sequence point. Each distinct (temperature, repetition)
/// is measured once.
fn monitor_step(
    engine: &HammerEngine,
    region: Region,
    config: &ExperimentConfig,
    pattern: DataPattern,
    seq: &[i32],
) -> Result<(Vec<f64>, Vec<BerSample>)> {
    let mut cache: BTreeMap<(i32, u32), BerSample> = BTreeMap::new();
    let mut bers = Vec::with_capacity(seq.len());
    for (i, &t) in seq.iter().enumerate() {
        let rep = test_rep(config, i);
        let sample = match cache.get(&(t, rep)) {
            Some(s) => *s,
            None => {
                let s = engine.measure_region_ber_reps(region, t, rep..rep + 1, pattern)?[0];
                cache.insert((t, rep), s);
                s
            }
        };
        bers.push(sample.flips_per_row);
    }
    Ok((bers, cache.into_values().collect()))
}

fn estimate_steps(model: &RegressionModel, threat: ThreatModel, seq: &[i32], bers: &[f64]) -> Vec<StepError> {
    match threat {
        ThreatModel::AbsoluteSelf => seq
            .iter()
            .zip(bers)
            .enumerate()
            .map(|(i, (&t, &ber))| {
                let est = invert_model(model, ber, None);
                StepError {
                    index: i,
                    temp_c: t,
                    prev_temp_c: None,
                    truth: f64::from(t),
                    estimate: est.value,
                    error: est.value - f64::from(t),
                    clamped: est.clamped,
                }
            })
            .collect(),
        ThreatModel::RelativeDonor => {
            // The first observation fixes the reference; each later reference
            // is resolved with the previous one as prior.
            let mut prior: Option<f64> = None;
            (1..seq.len())
                .map(|i| {
                    let est = estimate_relative_change(model, bers[i - 1], bers[i], prior);
                    let reference = invert_model(model, bers[i - 1], prior).value;
                    prior = Some(invert_model(model, bers[i], Some(reference)).value);
                    let truth = f64::from(seq[i] - seq[i - 1]);
                    StepError {
                        index: i,
                        temp_c: seq[i],
                        prev_temp_c: Some(seq[i - 1]),
                        truth,
                        estimate: est.value,
                        error: est.value - truth,
                        clamped: est.clamped,
                    }
                })
                .collect()
        }
    }
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, format!("{text}\n"))?;
    Ok(())
}

/// Fingerprint, fit, monitor and estimate. Writes `fingerprint.json`,
/// `model.json`, `samples.csv`, `test_samples.csv`, `errors.csv` and
/// `report.json` when `out` is given.
pub fn run_pipeline(config: &ExperimentConfig, out: Option<&Path>) -> Result<PipelineOutcome> {
    let lab = Lab::build(config)?;
    let (victim_fingerprint, donor_fingerprint) = fingerprint_step(&lab, config)?;
    let region = config.region_or_full();
    let victim = lab.engine(&lab.victim, &config.hammer);
    let pattern = select_pattern(&victim, region, config.temp_domain)?;

    let (model, model_samples) = match &lab.donor {
        Some(d) => fit_step(&lab.engine(d, &config.hammer), region, config, pattern, ModelSource::Donor)?,
        None => fit_step(&victim, region, config, pattern, ModelSource::Victim)?,
    };
    let seq = generate_temperature_sequence(config.seed, config.sequence_length, config.temp_domain)?;
    let (bers, test_samples) = monitor_step(&victim, region, config, pattern, &seq)?;
    let steps = estimate_steps(&model, config.threat_model, &seq, &bers);
    let report = AccuracyReport::from_steps(
        (
            config.victim.module_id,
            victim_fingerprint.manufacturer,
            config.threat_model,
            config.seed,
            config.sequence_length,
        ),
        region,
        (config.model_reps, config.test_reps),
        &steps,
    )?;

    if let Some(out) = out {
        create_dir(out)?;
        victim_fingerprint.save(out.join("fingerprint.json"))?;
        if let Some(d) = &donor_fingerprint {
            d.save(out.join("donor_fingerprint.json"))?;
        }
        model.save(out.join("model.json"))?;
        let model_id = match &config.donor {
            Some(d) if config.threat_model == ThreatModel::RelativeDonor => d.module_id,
            _ => config.victim.module_id,
        };
        write_ber_csv(BufWriter::new(File::create(out.join("samples.csv"))?), model_id, &model_samples)?;
        write_ber_csv(
            BufWriter::new(File::create(out.join("test_samples.csv"))?),
            config.victim.module_id,
            &test_samples,
        )?;
        write_errors_csv(BufWriter::new(File::create(out.join("errors.csv"))?), &steps)?;
        write_text(&out.join("report.json"), &report.to_json()?)?;
    }
    Ok(PipelineOutcome {
        report,
        victim_fingerprint,
        donor_fingerprint,
        pattern,
        model,
        model_samples,
        test_samples,
        steps,
    })
}

/// Mean absolute error per region size, over all disjoint regions of that size.
/// Writes `region_sweep.csv` when `out` is given.
pub fn run_region_sweep(config: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<SweepRow>> {
    config.validate_sweep()?;
    let lab = Lab::build(config)?;
    fingerprint_step(&lab, config)?;
    let victim = lab.engine(&lab.victim, &config.hammer);
    let pattern = select_pattern(&victim, Region::new(0, config.victim.rows), config.temp_domain)?;
    let seq = generate_temperature_sequence(config.seed, config.sequence_length, config.temp_domain)?;
    let mut threats = vec![ThreatModel::AbsoluteSelf];
    if lab.donor.is_some() {
        threats.push(ThreatModel::RelativeDonor);
    }
    let mut rows = Vec::new();
    for &size in &config.sweep_sizes {
        let regions: Vec<Region> = (0..config.victim.rows / size).map(|k| Region::new(k * size, size)).collect();
        for &threat in &threats {
            let mut errors = Vec::new();
            for &region in &regions {
                let (model, _) = match (threat, &lab.donor) {
                    (ThreatModel::RelativeDonor, Some(d)) => {
                        fit_step(&lab.engine(d, &config.hammer), region, config, pattern, ModelSource::Donor)?
                    }
                    _ => fit_step(&victim, region, config, pattern, ModelSource::Victim)?,
                };
                let (bers, _) = monitor_step(&victim, region, config, pattern, &seq)?;
                errors.extend(estimate_steps(&model, threat, &seq, &bers).iter().map(|s| s.error));
            }
            let table = PercentileTable::from_errors(&errors)?;
            rows.push(SweepRow {
                size,
                threat_model: threat,
                regions: regions.len(),
                mean_abs_error: table.mean_abs,
                p90_abs_error: table.p90,
            });
        }
    }
    if let Some(out) = out {
        create_dir(out)?;
        write_sweep_csv(BufWriter::new(File::create(out.join("region_sweep.csv"))?), config.victim.module_id, &rows)?;
    }
    Ok(rows)
}

/// Canary enrollment on the model repetitions, then one canary reading per
/// sequence point on the test repetitions. Writes `canaries.json`,
/// `errors.csv` and `report.json` when `out` is given.
pub fn run_canary_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<CanaryOutcome> {
    let lab = Lab::build(config)?;
    if lab.victim.canaries().is_empty() {
        return Err(Error::InsufficientSignal(format!(
            "module {} has no canary cells (canary_density = 0)",
            config.victim.module_id
        )));
    }
    let hammer = HammerConfig { fidelity: Fidelity::CellAccurate, ..config.hammer };
    let engine = lab.engine(&lab.victim, &hammer);
    let region = config.region_or_full();
    let map = enroll_canaries_with(
        &engine,
        &EnrollConfig {
            temps: config.temp_domain.temps().collect(),
            reps: 0..config.model_reps,
            rows: region.rows(),
            execution: hammer.execution,
        },
    )?;
    if map.is_empty() {
        return Err(Error::InsufficientSignal("enrollment found no canary cells".into()));
    }
    let seq = generate_temperature_sequence(config.seed, config.sequence_length, config.temp_domain)?;

    // Hit fractions depend only on (temperature, repetition); the previous
    // estimate only breaks ties.
    let mut cache: BTreeMap<(i32, u32), Option<BTreeMap<i32, f64>>> = BTreeMap::new();
    let mut steps = Vec::with_capacity(seq.len());
    let mut previous: Option<i32> = None;
    let mut unknown = 0;
    for (i, &t) in seq.iter().enumerate() {
        let rep = test_rep(config, i);
        let fractions = match cache.get(&(t, rep)) {
            Some(f) => f.clone(),
            None => {
                let f = match monitor_canaries(&engine, &map, &config.monitor, t, rep, None) {
                    Ok(r) => Some(r.hit_fractions),
                    Err(Error::UnknownTemperature(_)) => None,
                    Err(e) => return Err(e),
                };
                cache.insert((t, rep), f.clone());
                f
            }
        };
        let est = match fractions.as_ref().and_then(|f| select_temperature(f, previous)) {
            Some(e) => e,
            None => {
                unknown += 1;
                previous.unwrap_or(config.temp_domain.midpoint().round() as i32)
            }
        };
        previous = Some(est);
        steps.push(StepError {
            index: i,
            temp_c: t,
            prev_temp_c: None,
            truth: f64::from(t),
            estimate: f64::from(est),
            error: f64::from(est - t),
            clamped: false,
        });
    }
    let errors: Vec<f64> = steps.iter().map(|s| s.error).collect();
    let report = CanaryReport {
        module_id: config.victim.module_id,
        seed: config.seed,
        sequence_length: config.sequence_length,
        enrollment_reps: map.reps,
        enrolled_total: map.total(),
        enrolled_per_temp: map.entries.iter().map(|(t, s)| (*t, s.len())).collect(),
        gaps: map.gaps(),
        unknown_readings: unknown,
        exact_fraction: errors.iter().filter(|e| **e == 0.0).count() as f64 / errors.len() as f64,
        all: PercentileTable::from_errors(&errors)?,
        errors,
    };
    if let Some(out) = out {
        create_dir(out)?;
        map.save(out.join("canaries.json"))?;
        write_errors_csv(BufWriter::new(File::create(out.join("errors.csv"))?), &steps)?;
        write_text(&out.join("report.json"), &report.to_json()?)?;
    }
    Ok(CanaryOutcome { report, map, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::{small_profile, BerCubic};
    use crate::experiment::{read_errors_csv, sibling_donor};
    use crate::hammer::{read_ber_csv, Noise};

    fn small_config() -> ExperimentConfig {
        let mut p = small_profile();
        p.ber_cubic = BerCubic::new(0.0, 0.0, 0.5, 10.0);
        let mut c = ExperimentConfig::new(p, 5);
        c.sequence_length = 60;
        c.sweep_sizes = vec![128, 256, 512];
        c.fingerprint.probe_start = 100;
        c.fingerprint.ber_rows = 512;
        c
    }

    #[test]
    fn noiseless_absolute_is_exact() {
        let mut c = small_config();
        c.hammer.noise = Noise::Off;
        let out = run_pipeline(&c, None).unwrap();
        assert_eq!(out.steps.len(), 60);
        assert!(out.report.all.p100 < 1e-2, "{:?}", out.report.all);
    }

    #[test]
    fn artifacts_and_recomputation() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_pipeline(&small_config(), Some(dir.path())).unwrap();
        for f in ["fingerprint.json", "model.json", "samples.csv", "test_samples.csv", "errors.csv", "report.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let steps = read_errors_csv(File::open(dir.path().join("errors.csv")).unwrap()).unwrap();
        let errors: Vec<f64> = steps.iter().map(|s| s.error).collect();
        assert_eq!(PercentileTable::from_errors(&errors).unwrap(), out.report.all);
        let samples = read_ber_csv(File::open(dir.path().join("samples.csv")).unwrap()).unwrap();
        assert_eq!(samples.len(), 46 * 10);
        let model = RegressionModel::load(dir.path().join("model.json")).unwrap();
        assert_eq!(model, out.model);
        assert_eq!(model.source, ModelSource::Victim);
    }

    #[test]
    fn relative_counts_and_source() {
        let base = small_config();
        let c = ExperimentConfig::relative(base.victim.clone(), sibling_donor(&base.victim, 1.2), 5);
        let c = ExperimentConfig { sequence_length: 60, fingerprint: base.fingerprint, sweep_sizes: base.sweep_sizes, ..c };
        let out = run_pipeline(&c, None).unwrap();
        assert_eq!(out.steps.len(), 59);
        assert_eq!(out.model.source, ModelSource::Donor);
        assert!(out.report.small.is_some());
        assert!(out.donor_fingerprint.is_some());
    }

    #[test]
    fn donor_manufacturer_mismatch_aborts() {
        let base = small_config();
        let mut donor = base.victim.clone();
        donor.single_sided_asymmetric = true;
        let c = ExperimentConfig {
            sequence_length: 10,
            fingerprint: base.fingerprint,
            sweep_sizes: base.sweep_sizes,
            ..ExperimentConfig::relative(base.victim.clone(), donor, 1)
        };
        assert!(matches!(run_pipeline(&c, None), Err(Error::FingerprintMismatch { .. })));
    }

    #[test]
    fn config_validation() {
        let mut c = small_config();
        c.model_reps = 15;
        assert!(matches!(run_pipeline(&c, None), Err(Error::Config(_))));
        let mut c = small_config();
        c.threat_model = ThreatModel::RelativeDonor;
        assert!(matches!(run_pipeline(&c, None), Err(Error::Config(_))));
        let mut c = small_config();
        c.sweep_sizes = vec![128, 1024];
        assert!(matches!(run_region_sweep(&c, None), Err(Error::Config(_))));
        let mut c = small_config();
        c.sweep_sizes = vec![256, 128];
        assert!(matches!(run_region_sweep(&c, None), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_shape_and_noiseless_limit() {
        let mut c = small_config();
        c.hammer.noise = Noise::Off;
        let rows = run_region_sweep(&c, None).unwrap();
        assert_eq!(rows.iter().map(|r| (r.size, r.regions)).collect::<Vec<_>>(), vec![(128, 4), (256, 2), (512, 1)]);
        // Only the full module is calibrated to the cubic exactly; sub-regions
        // carry per-row deviations even without noise.
        assert!(rows[2].mean_abs_error < 1e-2, "{:?}", rows[2]);
        assert!(rows.iter().all(|r| r.mean_abs_error.is_finite() && r.mean_abs_error < 2.0), "{rows:?}");
    }

    #[test]
    fn canary_experiment_deterministic_canaries_are_exact() {
        let mut c = small_config();
        c.victim.canary_flip_prob = 1.0;
        c.hammer.noise = Noise::Off;
        let out = run_canary_experiment(&c, None).unwrap();
        assert!(out.report.errors.iter().all(|e| *e == 0.0));
        assert_eq!(out.report.exact_fraction, 1.0);
        let mut none = small_config();
        none.victim.canary_density = 0.0;
        assert!(matches!(run_canary_experiment(&none, None), Err(Error::InsufficientSignal(_))));
    }
}
