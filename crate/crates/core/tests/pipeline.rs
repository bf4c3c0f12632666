mod common;

use spyhammer::dram::{Manufacturer, SimulatedModule};
use spyhammer::experiment::{
    generate_temperature_sequence, run_canary_experiment, run_pipeline, run_region_sweep, sibling_donor,
    ExperimentConfig, ThreatModel,
};
use spyhammer::fingerprint::{classify_manufacturer, FingerprintConfig};
use spyhammer::hammer::{HammerConfig, HammerEngine, Noise};
use spyhammer::Error;

fn small(p: spyhammer::dram::ModuleProfile, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(p, seed);
    c.sequence_length = 80;
    c.fingerprint.probe_start = 200;
    c.sweep_sizes = vec![512, 1024, 2048];
    c
}

#[test]
fn fingerprint_classifies_shrunk_profiles() {
    let cfg = FingerprintConfig { probe_start: 200, ..FingerprintConfig::default() };
    for (id, mfr) in [(1, Manufacturer::A), (4, Manufacturer::B), (7, Manufacturer::C), (10, Manufacturer::D)] {
        let m = SimulatedModule::build(&common::shrunk(id, 2048), 5).unwrap();
        let r = classify_manufacturer(&HammerEngine::new(&m, HammerConfig::default()), &cfg).unwrap();
        assert_eq!(r.manufacturer, mfr, "module {id}");
        assert!(r.confidence > 0.5, "module {id}: {r:?}");
    }
}

#[test]
fn absolute_pipeline_tracks_a_monotone_module() {
    let out = run_pipeline(&small(common::steep(2048), 1), None).unwrap();
    assert_eq!(out.report.threat_model, ThreatModel::AbsoluteSelf);
    assert_eq!(out.steps.len(), 80);
    assert!(out.report.all.p90 < 1.0, "{:?}", out.report.all);
    let seq = generate_temperature_sequence(1, 80, spyhammer::dram::TempDomain::default()).unwrap();
    assert!(out.steps.iter().zip(&seq).all(|(s, t)| s.temp_c == *t));
}

#[test]
fn relative_pipeline_with_sibling_donor() {
    let victim = common::steep(2048);
    let base = small(victim.clone(), 2);
    let c = ExperimentConfig { donor: Some(sibling_donor(&victim, 1.2)), threat_model: ThreatModel::RelativeDonor, ..base };
    let out = run_pipeline(&c, None).unwrap();
    assert_eq!(out.steps.len(), 79);
    let small = out.report.small.unwrap();
    assert!(small.p90 < 2.0, "{small:?}");
}

#[test]
fn noise_off_absolute_is_exact_on_shipped_curves() {
    for id in [1, 10] {
        let mut c = small(common::shrunk(id, 2048), 3);
        c.hammer.noise = Noise::Off;
        let out = run_pipeline(&c, None).unwrap();
        // A shrunk module is calibrated as a whole, so the full-module fit is exact.
        assert!(out.report.all.p100 < 1e-2, "module {id}: {:?}", out.report.all);
    }
}

#[test]
fn region_sweep_rows_per_size() {
    let rows = run_region_sweep(&small(common::steep(2048), 4), None).unwrap();
    let shape: Vec<(u32, usize)> = rows.iter().map(|r| (r.size, r.regions)).collect();
    assert_eq!(shape, vec![(512, 4), (1024, 2), (2048, 1)]);
}

#[test]
fn canary_experiment_on_shrunk_module() {
    let out = run_canary_experiment(&small(common::shrunk(1, 2048), 6), None).unwrap();
    assert!(out.report.gaps.is_empty());
    assert!(out.report.exact_fraction >= 0.25, "{:?}", out.report);
    assert!(out.report.all.p90 <= 5.0);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = small(common::steep(2048), 1);
    c.test_reps = 11;
    assert!(matches!(run_pipeline(&c, None), Err(Error::Config(_))));
    let mut c = small(common::steep(2048), 1);
    c.region = Some(spyhammer::hammer::Region::new(2000, 100));
    assert!(matches!(run_pipeline(&c, None), Err(Error::Config(_))));
}
