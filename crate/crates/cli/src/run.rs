//! Stage runners. Every stage writes into one output directory, then a
//! manifest of the files it produced. Wall-clock timings go to a separate
//! file so everything else stays byte-identical for a fixed config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use entangle_core::chsh::{
    correlation_at, fit_cosine, scan_threshold, BinnedBatch, ChshError, CoincidenceCounts, SettingSeries, ThresholdBinning,
};
use entangle_core::decoy::{bound_interval, bounded_single_photon_statistic, DecoyError, GainVector, StatisticKind};
use entangle_core::fair_sampling::{run_factorization_suite, OverlapMode, SuiteReport};
use entangle_core::homodyne::{derive_seed, read_batch, write_record, write_sidecar, HomodyneError, CSV_HEADER};
use entangle_core::tomography::{
    build_povm_elements, decoy_correct_frequencies, format_density_matrix, histogram_from_counts, mle_reconstruct, BinCounts,
    QuadratureBins, TomographyError,
};
use entangle_core::{BatchPlan, IntensitySet, MeasurementSettings, SampleRecord, Source};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, SourceKind};

/// Chunks mapped per parallel window when streaming a batch.
const WINDOW: usize = 64;

pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.json";

const STAGE_CHSH: u64 = 1;
const STAGE_CORRELATION: u64 = 2;
const STAGE_TOMOGRAPHY: u64 = 3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("acceptance breach: {0}")]
    Breach(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("input: {0}")]
    Input(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Input(_) => 2,
            RunError::Breach(_) => 3,
            RunError::Numerical(_) => 4,
            RunError::Io { .. } => 1,
        }
    }
}

impl From<HomodyneError> for RunError {
    fn from(e: HomodyneError) -> Self {
        match e {
            HomodyneError::Io { path, source } => RunError::Io { path, message: source.to_string() },
            HomodyneError::Parse { .. } => RunError::Input(e.to_string()),
            other => RunError::Numerical(other.to_string()),
        }
    }
}

impl From<DecoyError> for RunError {
    fn from(e: DecoyError) -> Self {
        RunError::Numerical(e.to_string())
    }
}

impl From<ChshError> for RunError {
    fn from(e: ChshError) -> Self {
        RunError::Numerical(e.to_string())
    }
}

impl From<TomographyError> for RunError {
    fn from(e: TomographyError) -> Self {
        RunError::Numerical(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    CorrelationScan,
    ChshScan,
    Tomography,
    DecoyEstimate,
    FairSamplingCheck,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::CorrelationScan => "correlation-scan",
            Stage::ChshScan => "chsh-scan",
            Stage::Tomography => "tomography",
            Stage::DecoyEstimate => "decoy-estimate",
            Stage::FairSamplingCheck => "fair-sampling-check",
        }
    }
}

/// Stage options that are not part of the experiment config.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Directory of batches written by `simulate`, used instead of sampling.
    pub input: Option<PathBuf>,
    pub inject_fault: bool,
}

/// Files written under the output directory, in creation order.
#[derive(Debug)]
pub struct Outputs {
    root: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    pub fn new(root: &Path) -> Result<Self, RunError> {
        std::fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, RunError> {
        let path = self.path(rel)?;
        std::fs::write(&path, contents).map_err(io_err(&path))?;
        self.files.push(rel.to_string());
        Ok(path)
    }

    /// Reserve `rel` for a file the caller writes itself.
    fn path(&mut self, rel: &str) -> Result<PathBuf, RunError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        Ok(path)
    }

    fn track(&mut self, rel: &str) {
        self.files.push(rel.to_string());
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |e| RunError::Io { path: path.to_path_buf(), message: e.to_string() }
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    seed: u64,
    status: &'a str,
    files: Vec<ManifestEntry>,
    timings: &'a str,
}

/// Result of a completed stage. `breach` is set when the stage ran to the
/// end but its acceptance check failed.
#[derive(Debug)]
pub struct RunReport {
    pub files: Vec<String>,
    pub breach: Option<String>,
}

/// Run one stage and write its manifest and timings.
pub fn execute(stage: Stage, config: &ExperimentConfig, out: &Path, options: &RunOptions) -> Result<RunReport, RunError> {
    config.validate()?;
    let mut outputs = Outputs::new(out)?;
    outputs.write("config.toml", config.to_toml())?;
    let mut timings = Timings::default();
    let started = Instant::now();
    let result = match stage {
        Stage::Simulate => simulate(config, &mut outputs, &mut timings).map(|_| None),
        Stage::CorrelationScan => correlation_scan(config, &mut outputs, &mut timings).map(|_| None),
        Stage::ChshScan => chsh_scan(config, options, &mut outputs, &mut timings).map(|_| None),
        Stage::Tomography => tomography(config, &mut outputs, &mut timings).map(|_| None),
        Stage::DecoyEstimate => decoy_estimate(config, options, &mut outputs, &mut timings).map(|_| None),
        Stage::FairSamplingCheck => fair_sampling_check(config, options, &mut outputs, &mut timings),
    };
    timings.record("total", started);
    let status = match &result {
        Ok(None) => "ok",
        Ok(Some(_)) => "breach",
        Err(_) => "failed",
    };
    write_manifest(stage, config, &outputs, status)?;
    let json = serde_json::to_string_pretty(&timings.0).expect("timings serialize");
    std::fs::write(out.join(TIMINGS), json + "\n").map_err(io_err(&out.join(TIMINGS)))?;
    let breach = result?;
    Ok(RunReport { files: outputs.files, breach })
}

fn write_manifest(stage: Stage, config: &ExperimentConfig, outputs: &Outputs, status: &str) -> Result<(), RunError> {
    let mut files = Vec::with_capacity(outputs.files.len());
    for rel in &outputs.files {
        let path = outputs.root.join(rel);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        files.push(ManifestEntry { path: rel.clone(), bytes: bytes.len() as u64, sha256: hex::encode(Sha256::digest(&bytes)) });
    }
    let manifest = Manifest {
        command: stage.name(),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: config.hash(),
        seed: config.seed,
        status,
        files,
        timings: TIMINGS,
    };
    let path = outputs.root.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(io_err(&path))
}

#[derive(Default)]
struct Timings(BTreeMap<String, f64>);

impl Timings {
    fn record(&mut self, key: &str, since: Instant) {
        self.0.insert(key.to_string(), since.elapsed().as_secs_f64());
    }
}

/// Batches of one setting: vacuum then each decoy intensity, or one direct batch.
struct SettingPlan {
    settings: MeasurementSettings,
    batches: Vec<BatchPlan>,
}

fn setting_plans(config: &ExperimentConfig, stage: u64, settings: &[MeasurementSettings]) -> Result<Vec<SettingPlan>, RunError> {
    let noise = config.noise_model();
    settings
        .iter()
        .enumerate()
        .map(|(s, &settings)| {
            let seed = |j: usize| derive_seed(config.seed, &[stage, s as u64, j as u64]);
            let batches = match config.source.kind {
                SourceKind::Fock => {
                    let source = Source::Fock { n: config.source.photon_number };
                    vec![BatchPlan::new(source, settings, config.counts.direct as usize, &noise, config.pipeline, seed(0))?]
                }
                SourceKind::Coherent => {
                    let set = config.decoys().expect("coherent source has decoys");
                    let mut out = Vec::with_capacity(set.len() + 1);
                    let vacuum = Source::Coherent { mu: 0.0 };
                    out.push(BatchPlan::new(vacuum, settings, config.counts.vacuum as usize, &noise, config.pipeline, seed(0))?);
                    for (j, &mu) in set.intensities().iter().enumerate() {
                        let source = Source::Coherent { mu: config.emitted_intensity(mu) };
                        let plan = BatchPlan::new(
                            source,
                            settings,
                            config.counts.per_intensity as usize,
                            &noise,
                            config.pipeline,
                            seed(j + 1),
                        )?;
                        out.push(plan.with_intensity_label(j as u32 + 1));
                    }
                    out
                }
            };
            Ok(SettingPlan { settings, batches })
        })
        .collect()
}

/// Stream a batch into a threshold-grid accumulator.
fn bin_on_grid(plan: &BatchPlan, grid: &[f64]) -> Result<BinnedBatch, RunError> {
    let mut acc = BinnedBatch::on_grid(grid);
    let mut merge_err = None;
    plan.for_each_window(
        WINDOW,
        |records| {
            let mut b = BinnedBatch::on_grid(grid);
            b.accumulate(records);
            b
        },
        |b| {
            if let Err(e) = acc.merge(&b) {
                merge_err = Some(e);
            }
            Ok(())
        },
    )?;
    if let Some(e) = merge_err {
        return Err(e.into());
    }
    Ok(acc)
}

fn series_on_grid(plans: &[SettingPlan], grid: &[f64]) -> Result<Vec<SettingSeries>, RunError> {
    plans
        .iter()
        .map(|p| {
            let batches = p.batches.iter().map(|b| bin_on_grid(b, grid)).collect::<Result<_, _>>()?;
            Ok(SettingSeries { settings: p.settings, batches })
        })
        .collect()
}

fn fmt_value(v: f64) -> String {
    format!("{v:.8}")
}

fn batch_file(setting: usize, intensity: usize) -> String {
    format!("batches/setting{setting}_intensity{intensity}.csv")
}

/// Write the four CHSH settings' batches as CSV plus sidecar metadata.
fn simulate(config: &ExperimentConfig, outputs: &mut Outputs, timings: &mut Timings) -> Result<(), RunError> {
    let started = Instant::now();
    let plans = setting_plans(config, STAGE_CHSH, &MeasurementSettings::chsh_set())?;
    for (s, plan) in plans.iter().enumerate() {
        for (j, batch) in plan.batches.iter().enumerate() {
            let rel = batch_file(s, j);
            let path = outputs.path(&rel)?;
            let file = File::create(&path).map_err(io_err(&path))?;
            let mut w = BufWriter::new(file);
            writeln!(w, "{CSV_HEADER}").map_err(io_err(&path))?;
            batch.for_each_window(
                WINDOW,
                |records| {
                    let mut buf = Vec::with_capacity(records.len() * 56);
                    for r in records {
                        write_record(&mut buf, r).expect("writing to memory");
                    }
                    buf
                },
                |buf| w.write_all(&buf).map_err(|e| HomodyneError::Io { path: path.clone(), source: e }),
            )?;
            w.flush().map_err(io_err(&path))?;
            outputs.track(&rel);
            write_sidecar(&path, batch.meta())?;
            let side = entangle_core::homodyne::sidecar_path(Path::new(&rel));
            outputs.track(&side.to_string_lossy());
        }
    }
    timings.record("simulate", started);
    Ok(())
}

/// Batches from a `simulate` directory, grouped by CHSH setting.
fn load_chsh_series(config: &ExperimentConfig, dir: &Path) -> Result<Vec<SettingSeries>, RunError> {
    let expected = match config.source.kind {
        SourceKind::Fock => 1,
        SourceKind::Coherent => config.decoys().map_or(0, |d| d.len()) + 1,
    };
    let mut out = Vec::with_capacity(4);
    for (s, settings) in MeasurementSettings::chsh_set().into_iter().enumerate() {
        let mut batches = Vec::with_capacity(expected);
        for j in 0..expected {
            let path = dir.join(batch_file(s, j));
            let batch = read_batch(&path)?;
            let labels_ok = batch.meta.settings.label_a == settings.label_a
                && batch.meta.settings.label_b == settings.label_b
                && batch.meta.intensity_label == j as u32;
            if !labels_ok {
                return Err(RunError::Input(format!("{}: settings or intensity label do not match its name", path.display())));
            }
            batches.push(BinnedBatch::from_records(&batch.records));
        }
        out.push(SettingSeries { settings, batches });
    }
    Ok(out)
}

fn chsh_series(config: &ExperimentConfig, options: &RunOptions, grid: &[f64]) -> Result<[SettingSeries; 4], RunError> {
    let series = match &options.input {
        Some(dir) => load_chsh_series(config, dir)?,
        None => series_on_grid(&setting_plans(config, STAGE_CHSH, &MeasurementSettings::chsh_set())?, grid)?,
    };
    Ok(series.try_into().expect("four CHSH settings"))
}

fn chsh_scan(
    config: &ExperimentConfig,
    options: &RunOptions,
    outputs: &mut Outputs,
    timings: &mut Timings,
) -> Result<(), RunError> {
    let started = Instant::now();
    let grid = config.t_grid();
    let series = chsh_series(config, options, &grid)?;
    timings.record("sample_and_bin", started);
    let started = Instant::now();
    let decoys = config.decoys();
    let scan = scan_threshold(&series, decoys.as_ref(), &grid);
    let mut csv = String::from("T,s_est,s_lower,s_upper\n");
    let mut detail = String::from("T,std_error,note\n");
    for point in &scan {
        match &point.outcome {
            Ok(est) => {
                let r = &est.result;
                let _ = writeln!(csv, "{},{},{},{}", point.t, fmt_value(r.s_est), fmt_value(r.s_lower), fmt_value(r.s_upper));
                let _ = writeln!(detail, "{},{},ok", point.t, fmt_value(est.std_error));
            }
            Err(e) => {
                let _ = writeln!(csv, "{},invalid,invalid,invalid", point.t);
                let _ = writeln!(detail, "{},invalid,{}", point.t, e.to_string().replace(',', ";"));
            }
        }
    }
    outputs.write("chsh.csv", csv)?;
    outputs.write("chsh_errors.csv", detail)?;
    timings.record("scan", started);
    Ok(())
}

fn correlation_scan(config: &ExperimentConfig, outputs: &mut Outputs, timings: &mut Timings) -> Result<(), RunError> {
    let started = Instant::now();
    let t = config.correlation.threshold;
    let settings: Vec<MeasurementSettings> =
        config.correlation_phases().into_iter().map(MeasurementSettings::with_phase_difference).collect();
    let series = series_on_grid(&setting_plans(config, STAGE_CORRELATION, &settings)?, &[t])?;
    timings.record("sample_and_bin", started);
    let decoys = config.decoys();
    let binning = ThresholdBinning::new(t)?;
    let mut csv = String::from("dtheta,e_est,e_lower,e_upper\n");
    let mut detail = String::from("dtheta,std_error,survivors,note\n");
    let mut fit_points = Vec::new();
    for s in &series {
        let d = s.settings.dtheta();
        match correlation_at(s, decoys.as_ref(), binning) {
            Ok(est) => {
                let b = est.bound;
                let _ =
                    writeln!(csv, "{},{},{},{}", fmt_value(d), fmt_value(b.e_est), fmt_value(b.e_lower), fmt_value(b.e_upper));
                let _ = writeln!(detail, "{},{},{},ok", fmt_value(d), fmt_value(est.std_error), est.coincidences.survivors());
                fit_points.push((d, b.e_est));
            }
            Err(e) => {
                let _ = writeln!(csv, "{},invalid,invalid,invalid", fmt_value(d));
                let _ = writeln!(detail, "{},invalid,0,{}", fmt_value(d), e.to_string().replace(',', ";"));
            }
        }
    }
    outputs.write("correlation.csv", csv)?;
    outputs.write("correlation_errors.csv", detail)?;
    let (amplitude, phase) = fit_cosine(&fit_points);
    let summary = format!(
        "threshold={t}\npoints={}\nfit_amplitude={}\nfit_phase={}\n",
        fit_points.len(),
        fmt_value(amplitude),
        fmt_value(phase)
    );
    outputs.write("correlation_fit.txt", summary)?;
    Ok(())
}

fn bin_counts(plan: &BatchPlan, bins: &QuadratureBins) -> Result<BinCounts, RunError> {
    let mut acc = BinCounts::new(bins);
    plan.for_each_window(
        WINDOW,
        |records: &[SampleRecord]| BinCounts::from_records(records, bins),
        |c| {
            acc.add(&c);
            Ok(())
        },
    )?;
    Ok(acc)
}

fn tomography(config: &ExperimentConfig, outputs: &mut Outputs, timings: &mut Timings) -> Result<(), RunError> {
    let started = Instant::now();
    let mle = config.mle_config();
    let bins = mle.bins()?;
    let settings: Vec<MeasurementSettings> =
        config.tomography_phases().into_iter().map(MeasurementSettings::with_phase_difference).collect();
    let plans = setting_plans(config, STAGE_TOMOGRAPHY, &settings)?;
    let counts: Vec<Vec<BinCounts>> = plans
        .iter()
        .map(|p| p.batches.iter().map(|b| bin_counts(b, &bins)).collect::<Result<_, _>>())
        .collect::<Result<_, _>>()?;
    let hist = match config.decoys() {
        None => histogram_from_counts::<f64>(settings.clone(), &bins, &counts.iter().map(|c| c[0].clone()).collect::<Vec<_>>()),
        Some(set) => {
            let gains: Vec<Vec<Vec<f64>>> = counts.iter().map(|per| per.iter().map(|c| c.frequencies()).collect()).collect();
            decoy_correct_frequencies(settings.clone(), &bins, &gains, &set)?
        }
    };
    timings.record("sample_and_bin", started);
    let started = Instant::now();
    let povm = build_povm_elements::<f64>(&settings, &bins, mle.cutoff)?;
    timings.record("povm", started);
    let started = Instant::now();
    let (result, failure) = match mle_reconstruct(&hist, &povm, &mle) {
        Ok(r) => (r, None),
        Err(TomographyError::NotConverged { iterations, partial, .. }) => {
            (*partial, Some(format!("MLE did not converge in {iterations} iterations")))
        }
        Err(e) => return Err(e.into()),
    };
    timings.record("mle", started);
    outputs.write("density_matrix.txt", format_density_matrix(&result.rho))?;
    let ll = result.log_likelihood.last().copied().unwrap_or(f64::NAN);
    let monotone = result.log_likelihood.windows(2).all(|w| w[1] >= w[0]);
    let summary = format!(
        "cutoff={}\nsettings={}\nfidelity={}\nmultiphoton_mass={:.6e}\niterations={}\nconverged={}\nlog_likelihood={:.10e}\nlog_likelihood_monotone={}\nclamp_fraction={}\ndegenerate={}\n",
        mle.cutoff,
        settings.len(),
        fmt_value(result.fidelity),
        result.multiphoton_mass,
        result.iterations,
        result.converged,
        ll,
        monotone,
        fmt_value(hist.clamp_fraction),
        hist.degenerate,
    );
    outputs.write("tomography_summary.txt", summary)?;
    match failure {
        Some(msg) => Err(RunError::Numerical(msg)),
        None => Ok(()),
    }
}

fn decoy_summary(set: &IntensitySet, config: &ExperimentConfig) -> Result<String, RunError> {
    let w = set.weights();
    let delta = bound_interval(set)?;
    let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let emitted: Vec<f64> = set.intensities().iter().map(|&m| config.emitted_intensity(m)).collect();
    Ok(format!(
        "intensities={}\nemitted_intensities={}\nvacuum_weight={:.12e}\nintensity_weights={}\ndelta={:.12e}\nestimate_is_upper={}\n",
        list(set.intensities()),
        list(&emitted),
        w.vacuum,
        w.per_intensity.iter().map(|x| format!("{x:.12e}")).collect::<Vec<_>>().join(","),
        delta,
        set.estimate_is_upper()
    ))
}

/// Bounded single-photon coincidence probabilities per CHSH setting at
/// the correlation threshold.
fn decoy_estimate(
    config: &ExperimentConfig,
    options: &RunOptions,
    outputs: &mut Outputs,
    timings: &mut Timings,
) -> Result<(), RunError> {
    let Some(set) = config.decoys() else {
        return Err(ConfigError::Invalid {
            location: "<config>".into(),
            field: "source.kind".into(),
            message: "decoy-estimate needs a coherent source".into(),
        }
        .into());
    };
    outputs.write("decoy.txt", decoy_summary(&set, config)?)?;
    let started = Instant::now();
    let t = config.correlation.threshold;
    let series = chsh_series(config, options, &[t])?;
    timings.record("sample_and_bin", started);
    let binning = ThresholdBinning::new(t)?;
    let mut csv = String::from("setting_a,setting_b,outcome,p_est,p_lower,p_upper\n");
    for s in &series {
        let counts: Vec<CoincidenceCounts> = s.batches.iter().map(|b| b.counts(binning)).collect::<Result<_, _>>()?;
        for (k, outcome) in ["00", "01", "10", "11"].iter().enumerate() {
            let q: Vec<f64> = counts.iter().map(|c| c.as_array()[k] as f64 / c.total as f64).collect();
            let gains = GainVector::new(q[0], q[1..].to_vec()).with_counts(counts.iter().map(|c| c.total).collect());
            let b = bounded_single_photon_statistic(&gains, &set, StatisticKind::Probability)?;
            let _ = writeln!(
                csv,
                "{},{},{outcome},{},{},{}",
                s.settings.label_a,
                s.settings.label_b,
                fmt_value(b.estimate),
                fmt_value(b.lower),
                fmt_value(b.upper)
            );
        }
    }
    outputs.write("decoy_estimates.csv", csv)?;
    Ok(())
}

fn format_report(report: &SuiteReport, fault: bool) -> String {
    let c = &report.config;
    let mut s = String::new();
    let _ = writeln!(s, "states={}", c.states);
    let _ = writeln!(s, "thresholds={}", c.thresholds.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(","));
    let _ = writeln!(s, "settings={}", c.settings);
    let _ = writeln!(s, "cutoff={}", c.cutoff);
    let _ = writeln!(s, "seed={}", c.seed);
    let _ = writeln!(s, "injected_fault={fault}");
    let _ = writeln!(s, "asserted={}", report.asserted);
    let _ = writeln!(s, "max_residual={:.6e}", report.max_residual);
    let _ = writeln!(s, "max_theta_deviation={:.6e}", report.max_theta_deviation);
    let _ = writeln!(s, "state,threshold,max_residual,max_theta_deviation,max_trace_defect");
    for t in &report.tuples {
        match &t.outcome {
            Ok(chk) => {
                let _ = writeln!(
                    s,
                    "{},{},{:.6e},{:.6e},{:.6e}",
                    t.state, t.threshold, chk.max_residual, chk.max_theta_deviation, chk.max_trace_defect
                );
            }
            Err(e) => {
                let _ = writeln!(s, "{},{},error: {},,", t.state, t.threshold, e.replace(',', ";"));
            }
        }
    }
    let verdict = match (report.asserted, report.pass) {
        (false, _) => "REPORT-ONLY",
        (true, true) => "PASS",
        (true, false) => "FAIL",
    };
    let _ = writeln!(s, "{verdict}");
    s
}

fn fair_sampling_check(
    config: &ExperimentConfig,
    options: &RunOptions,
    outputs: &mut Outputs,
    timings: &mut Timings,
) -> Result<Option<String>, RunError> {
    let started = Instant::now();
    let mode = if options.inject_fault { OverlapMode::KeepOddCrossTerms } else { OverlapMode::Exact };
    let report = run_factorization_suite(&config.suite_config(mode)).map_err(|e| RunError::Numerical(e.to_string()))?;
    timings.record("suite", started);
    outputs.write("fair_sampling_report.txt", format_report(&report, options.inject_fault))?;
    if report.asserted && !report.pass {
        return Ok(Some(format!(
            "factorization residual {:.3e} (θ deviation {:.3e}) exceeds tolerance",
            report.max_residual, report.max_theta_deviation
        )));
    }
    Ok(None)
}
