//! `spyhammer`: simulate modules, run the attack steps and the accuracy experiments.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use spyhammer::canary::{enroll_canaries_with, monitor_canaries, CanaryMap, EnrollConfig, MonitorConfig};
use spyhammer::dram::{ModuleProfile, SimulatedModule, TempDomain};
use spyhammer::experiment::{
    run_canary_experiment, run_pipeline, run_region_sweep, ExperimentConfig, ThreatModel,
};
use spyhammer::fingerprint::{classify_manufacturer, FingerprintConfig};
use spyhammer::hammer::{
    read_ber_csv, write_ber_csv, write_flip_csv, DataPattern, Fidelity, HammerConfig, HammerEngine, Noise, Region,
};
use spyhammer::regression::{estimate_relative_change, fit_cubic_with, invert_model, ModelSource, RegressionModel};
use spyhammer::{Error, Execution};

#[derive(Parser)]
#[command(name = "spyhammer", version, about = "RowHammer temperature side-channel simulator and attack harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure region BER on a simulated module and write `ber.csv`.
    Simulate(SimulateArgs),
    /// Classify the module's manufacturer and write `fingerprint.json`.
    Fingerprint(FingerprintArgs),
    /// Fit a cubic model to a BER CSV and write `model.json`.
    Fit(FitArgs),
    /// Invert a model: an absolute temperature or a temperature change.
    Estimate {
        #[command(subcommand)]
        mode: EstimateMode,
    },
    /// Enroll canary cells and write `canaries.json`.
    Enroll(EnrollArgs),
    /// Read the temperature from enrolled canaries.
    Monitor(MonitorArgs),
    /// Run an accuracy experiment and write its artifacts.
    Experiment {
        #[command(subcommand)]
        kind: ExperimentKind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum FidelityArg {
    Aggregate,
    Cell,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecutionArg {
    Sequential,
    Parallel,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Donor,
    Victim,
}

#[derive(Args, Clone)]
struct Common {
    /// Victim module profile (JSON).
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Donor module profile (JSON), for the relative threat model.
    #[arg(long)]
    donor: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "on")]
    noise: OnOff,
    #[arg(long, value_enum, default_value = "aggregate")]
    fidelity: FidelityArg,
    #[arg(long, value_enum, default_value = "parallel")]
    execution: ExecutionArg,
}

impl Common {
    fn victim(&self) -> Result<ModuleProfile> {
        let path = self.profile.as_ref().ok_or_else(|| Error::Config("--profile is required".into()))?;
        ModuleProfile::load(path).with_context(|| format!("loading profile {}", path.display()))
    }

    fn donor(&self) -> Result<Option<ModuleProfile>> {
        self.donor
            .as_ref()
            .map(|p| ModuleProfile::load(p).with_context(|| format!("loading donor profile {}", p.display())))
            .transpose()
    }

    fn no_donor(&self, command: &str) -> Result<()> {
        if self.donor.is_some() {
            return Err(Error::Config(format!("--donor is not used by {command}")).into());
        }
        Ok(())
    }

    fn execution(&self) -> Execution {
        match self.execution {
            ExecutionArg::Sequential => Execution::Sequential,
            ExecutionArg::Parallel => Execution::Parallel,
        }
    }

    fn hammer(&self) -> HammerConfig {
        HammerConfig {
            noise: match self.noise {
                OnOff::On => Noise::On,
                OnOff::Off => Noise::Off,
            },
            fidelity: match self.fidelity {
                FidelityArg::Aggregate => Fidelity::Aggregate,
                FidelityArg::Cell => Fidelity::CellAccurate,
            },
            execution: self.execution(),
            ..HammerConfig::default()
        }
    }

    fn build(&self, profile: &ModuleProfile) -> Result<SimulatedModule> {
        Ok(SimulatedModule::build_with(profile, self.seed, self.execution())?)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

/// Temperatures given as `A-B` (inclusive) or a comma-separated list.
#[derive(Clone)]
struct TempList(Vec<i32>);

fn parse_temp_list(s: &str) -> std::result::Result<TempList, String> {
    parse_temps(s).map(TempList)
}

fn parse_temps(s: &str) -> std::result::Result<Vec<i32>, String> {
    let bad = |_| format!("invalid temperature list '{s}'");
    let temps: Vec<i32> = match s.split_once('-').filter(|(a, _)| !a.is_empty()) {
        Some((a, b)) => (a.trim().parse().map_err(bad)?..=b.trim().parse().map_err(bad)?).collect(),
        None => s.split(',').map(|t| t.trim().parse().map_err(bad)).collect::<std::result::Result<_, _>>()?,
    };
    if temps.is_empty() {
        return Err(format!("empty temperature list '{s}'"));
    }
    Ok(temps)
}

/// `START:COUNT`.
fn parse_region(s: &str) -> std::result::Result<Region, String> {
    let bad = || format!("invalid region '{s}', expected START:COUNT");
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok(Region::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn parse_domain(s: &str) -> std::result::Result<TempDomain, String> {
    let t = parse_temps(s)?;
    Ok(TempDomain::new(t[0], t[t.len() - 1]))
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Temperatures, `A-B` or `a,b,c`; defaults to the module domain.
    #[arg(long, value_parser = parse_temp_list)]
    temps: Option<TempList>,
    #[arg(long, default_value_t = 20)]
    reps: u32,
    /// Logical rows as `START:COUNT`; defaults to the whole module.
    #[arg(long, value_parser = parse_region)]
    region: Option<Region>,
    /// Data pattern; defaults to the worst case found on the region.
    #[arg(long)]
    pattern: Option<DataPattern>,
    /// Also write `flips.csv` (cell fidelity only).
    #[arg(long)]
    flips: bool,
}

#[derive(Args)]
struct FingerprintArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// BER samples (CSV).
    #[arg(long)]
    samples: PathBuf,
    /// Validity domain `A-B`; defaults to the profile's domain, or 50-95.
    #[arg(long, value_parser = parse_domain)]
    domain: Option<TempDomain>,
    #[arg(long, value_enum, default_value = "victim")]
    source: SourceArg,
}

#[derive(Subcommand)]
enum EstimateMode {
    /// Temperature whose modeled BER equals the observation.
    Absolute {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        ber: f64,
        /// Preferred temperature when several match.
        #[arg(long)]
        prior: Option<f64>,
    },
    /// Temperature change between two observations.
    Relative {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        ber_ref: f64,
        #[arg(long)]
        ber_now: f64,
        /// Preferred reference temperature when several match.
        #[arg(long)]
        prior: Option<f64>,
    },
}

#[derive(Args)]
struct EnrollArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = parse_temp_list)]
    temps: Option<TempList>,
    #[arg(long, default_value_t = 10)]
    reps: u32,
    #[arg(long, value_parser = parse_region)]
    region: Option<Region>,
}

#[derive(Args)]
struct MonitorArgs {
    #[command(flatten)]
    common: Common,
    /// Enrolled canaries (JSON).
    #[arg(long)]
    canaries: PathBuf,
    /// True temperature of the simulated module during the reading.
    #[arg(long)]
    temp: i32,
    #[arg(long, default_value_t = 10)]
    rep: u32,
    /// Previous estimate, used to break ties.
    #[arg(long)]
    previous: Option<i32>,
    /// Maximum rows hammered.
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Subcommand)]
enum ExperimentKind {
    /// Fingerprint, fit, monitor a random temperature sequence and report errors.
    Accuracy(ExperimentArgs),
    /// Mean error per region size over disjoint regions.
    RegionSweep(ExperimentArgs),
    /// Canary enrollment and monitoring over a random temperature sequence.
    Canary(ExperimentArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 720)]
    sequence_length: usize,
    #[arg(long, default_value_t = 10)]
    model_reps: u32,
    #[arg(long, default_value_t = 10)]
    test_reps: u32,
    #[arg(long, value_parser = parse_region)]
    region: Option<Region>,
    /// Region sizes for the sweep, comma-separated.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<u32>>,
    #[arg(long, value_parser = parse_domain)]
    domain: Option<TempDomain>,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let victim = self.common.victim()?;
        let mut c = match self.common.donor()? {
            Some(d) => ExperimentConfig::relative(victim, d, self.common.seed),
            None => ExperimentConfig::new(victim, self.common.seed),
        };
        c.sequence_length = self.sequence_length;
        c.model_reps = self.model_reps;
        c.test_reps = self.test_reps;
        c.region = self.region;
        if let Some(s) = &self.sizes {
            c.sweep_sizes = s.clone();
        }
        if let Some(d) = self.domain {
            c.temp_domain = d;
        }
        c.hammer = self.common.hammer();
        c.fingerprint.execution = self.common.execution();
        c.monitor.execution = self.common.execution();
        Ok(c)
    }
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    a.common.no_donor("simulate")?;
    let profile = a.common.victim()?;
    let module = a.common.build(&profile)?;
    let hammer = a.common.hammer();
    if a.flips && hammer.fidelity != Fidelity::CellAccurate {
        return Err(Error::Config("--flips needs --fidelity cell".into()).into());
    }
    let engine = HammerEngine::new(&module, hammer);
    let region = a.region.unwrap_or(Region::new(0, profile.rows));
    let temps = a.temps.clone().map(|t| t.0).unwrap_or_else(|| profile.temp_domain.temps().collect());
    let pattern = match a.pattern {
        Some(p) => p,
        None => engine.select_worst_case_pattern(region, temps[0])?,
    };
    let mut samples = Vec::new();
    let mut flips = Vec::new();
    for &t in &temps {
        samples.extend(engine.measure_region_ber_reps(region, t, 0..a.reps, pattern)?);
        if a.flips {
            for rep in 0..a.reps {
                flips.extend(engine.region_flip_records(region, t, rep, pattern)?);
            }
        }
    }
    let out = a.common.out_dir()?;
    write_ber_csv(BufWriter::new(File::create(out.join("ber.csv"))?), profile.module_id, &samples)?;
    if a.flips {
        write_flip_csv(BufWriter::new(File::create(out.join("flips.csv"))?), profile.module_id, &flips)?;
    }
    println!(
        "module {}: {} samples ({} temperatures x {} reps, pattern {pattern}) -> {}",
        profile.module_id,
        samples.len(),
        temps.len(),
        a.reps,
        out.join("ber.csv").display()
    );
    Ok(())
}

fn fingerprint(a: &FingerprintArgs) -> Result<()> {
    let profile = a.common.victim()?;
    let module = a.common.build(&profile)?;
    let cfg = FingerprintConfig { execution: a.common.execution(), ..FingerprintConfig::default() };
    let report = classify_manufacturer(&HammerEngine::new(&module, a.common.hammer()), &cfg)?;
    let out = a.common.out_dir()?;
    let path = out.join("fingerprint.json");
    report.save(&path)?;
    if let Some(d) = a.common.donor()? {
        let seed = ExperimentConfig::new(profile.clone(), a.common.seed).donor_seed();
        let donor = SimulatedModule::build_with(&d, seed, a.common.execution())?;
        let dr = classify_manufacturer(&HammerEngine::new(&donor, a.common.hammer()), &cfg)?;
        dr.save(out.join("donor_fingerprint.json"))?;
        if dr.manufacturer != report.manufacturer {
            return Err(Error::FingerprintMismatch {
                donor: dr.manufacturer.to_string(),
                victim: report.manufacturer.to_string(),
            }
            .into());
        }
    }
    println!(
        "manufacturer {} (confidence {:.3}, mapping {:?}, asymmetric {}, BER {:.3}) -> {}",
        report.manufacturer,
        report.confidence,
        report.recovered_mapping.kind,
        report.single_sided_asymmetric,
        report.ber_magnitude,
        path.display()
    );
    Ok(())
}

fn fit(a: &FitArgs) -> Result<()> {
    a.common.no_donor("fit")?;
    let domain = match (a.domain, &a.common.profile) {
        (Some(d), _) => d,
        (None, Some(_)) => a.common.victim()?.temp_domain,
        (None, None) => TempDomain::default(),
    };
    let file = File::open(&a.samples).with_context(|| format!("opening {}", a.samples.display()))?;
    let points: Vec<(f64, f64)> =
        read_ber_csv(file)?.iter().map(|(_, s)| (f64::from(s.temp), s.flips_per_row)).collect();
    let source = match a.source {
        SourceArg::Donor => ModelSource::Donor,
        SourceArg::Victim => ModelSource::Victim,
    };
    let model = fit_cubic_with(&points, domain, source)?;
    let path = a.common.out_dir()?.join("model.json");
    model.save(&path)?;
    println!(
        "P(t) = {:+.6e} t^3 {:+.6e} t^2 {:+.6e} t {:+.6e} on [{}, {}] from {} samples -> {}",
        model.c3,
        model.c2,
        model.c1,
        model.c0,
        model.t_min,
        model.t_max,
        points.len(),
        path.display()
    );
    Ok(())
}

fn estimate(mode: &EstimateMode) -> Result<()> {
    let load = |p: &PathBuf| RegressionModel::load(p).with_context(|| format!("loading model {}", p.display()));
    let est = match mode {
        EstimateMode::Absolute { model, ber, prior } => invert_model(&load(model)?, *ber, *prior),
        EstimateMode::Relative { model, ber_ref, ber_now, prior } => {
            estimate_relative_change(&load(model)?, *ber_ref, *ber_now, *prior)
        }
    };
    println!("{est}");
    println!("{}", serde_json::to_string(&est)?);
    Ok(())
}

fn enroll(a: &EnrollArgs) -> Result<()> {
    a.common.no_donor("enroll")?;
    let profile = a.common.victim()?;
    let module = a.common.build(&profile)?;
    let hammer = HammerConfig { fidelity: Fidelity::CellAccurate, ..a.common.hammer() };
    let region = a.region.unwrap_or(Region::new(0, profile.rows));
    region.check(profile.rows).map_err(|e| Error::Config(e.to_string()))?;
    let map = enroll_canaries_with(
        &HammerEngine::new(&module, hammer),
        &EnrollConfig {
            temps: a.temps.clone().map(|t| t.0).unwrap_or_else(|| profile.temp_domain.temps().collect()),
            reps: 0..a.reps,
            rows: region.rows(),
            execution: a.common.execution(),
        },
    )?;
    if map.is_empty() {
        return Err(Error::InsufficientSignal("enrollment found no canary cells".into()).into());
    }
    let path = a.common.out_dir()?.join("canaries.json");
    map.save(&path)?;
    let gaps = map.gaps();
    println!(
        "{} canaries over {} temperatures ({} without canaries) -> {}",
        map.total(),
        map.temps.len(),
        gaps.len(),
        path.display()
    );
    Ok(())
}

fn monitor(a: &MonitorArgs) -> Result<()> {
    a.common.no_donor("monitor")?;
    let profile = a.common.victim()?;
    let module = a.common.build(&profile)?;
    let map = CanaryMap::load(&a.canaries).with_context(|| format!("loading {}", a.canaries.display()))?;
    let hammer = HammerConfig { fidelity: Fidelity::CellAccurate, ..a.common.hammer() };
    let cfg = MonitorConfig {
        probe_budget: a.budget.unwrap_or(usize::MAX),
        execution: a.common.execution(),
        ..MonitorConfig::default()
    };
    let reading = monitor_canaries(&HammerEngine::new(&module, hammer), &map, &cfg, a.temp, a.rep, a.previous)?;
    println!("{} ({} rows probed)", reading.estimate, reading.rows_probed);
    println!("{}", serde_json::to_string(&reading)?);
    Ok(())
}

fn experiment(kind: &ExperimentKind) -> Result<()> {
    match kind {
        ExperimentKind::Accuracy(a) => {
            let out = a.common.out_dir()?;
            let r = run_pipeline(&a.config()?, Some(out))?.report;
            let mode = match r.threat_model {
                ThreatModel::AbsoluteSelf => "absolute",
                ThreatModel::RelativeDonor => "relative",
            };
            print!(
                "module {} ({}) {mode}: |error| p50 {:.3} p90 {:.3} max {:.3} over {} estimates",
                r.module_id, r.manufacturer, r.all.p50, r.all.p90, r.all.p100, r.all.count
            );
            if let Some(s) = r.small {
                print!("; small changes p90 {:.3} over {}", s.p90, s.count);
            }
            println!(" -> {}", out.join("report.json").display());
        }
        ExperimentKind::RegionSweep(a) => {
            let out = a.common.out_dir()?;
            for row in run_region_sweep(&a.config()?, Some(out))? {
                println!(
                    "size {:>6} {:?}: {} regions, mean |error| {:.3}, p90 {:.3}",
                    row.size, row.threat_model, row.regions, row.mean_abs_error, row.p90_abs_error
                );
            }
            println!("-> {}", out.join("region_sweep.csv").display());
        }
        ExperimentKind::Canary(a) => {
            a.common.no_donor("experiment canary")?;
            let out = a.common.out_dir()?;
            let r = run_canary_experiment(&a.config()?, Some(out))?.report;
            println!(
                "module {}: {} canaries, exact {:.1}%, |error| p90 {:.1} max {:.1}, {} unknown readings -> {}",
                r.module_id,
                r.enrolled_total,
                100.0 * r.exact_fraction,
                r.all.p90,
                r.all.p100,
                r.unknown_readings,
                out.join("report.json").display()
            );
        }
    }
    Ok(())
}

/// 2 for configuration problems, 3 when the measurements carry too little signal.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::NotFound) {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::InsufficientSignal(_) | Error::UnknownTemperature(_) | Error::UnknownMapping { .. }) => 3,
        Some(
            Error::Config(_)
            | Error::Domain(_)
            | Error::Edge { .. }
            | Error::Calibration { .. }
            | Error::Underdetermined(_)
            | Error::FingerprintMismatch { .. }
            | Error::Json(_)
            | Error::Csv(_),
        ) => 2,
        Some(Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fingerprint(a) => fingerprint(a),
        Command::Fit(a) => fit(a),
        Command::Estimate { mode } => estimate(mode),
        Command::Enroll(a) => enroll(a),
        Command::Monitor(a) => monitor(a),
        Command::Experiment { kind } => experiment(kind),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
