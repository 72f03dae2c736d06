//! Experiment configuration: TOML, one table per stage, every key optional.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use entangle_core::decoy::DecoyIntensitySet;
use entangle_core::fair_sampling::{OverlapMode, SuiteConfig};
use entangle_core::fock::MAX_PHOTON_NUMBER;
use entangle_core::tomography::MleConfig;
use entangle_core::{IntensitySet, Noise, Pipeline};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("{path}:{line}:{column}: {message}")]
    Syntax { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{location}: `{field}`: {message}")]
    Invalid { location: String, field: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    /// Phase-randomized weak coherent pulses, analysed with decoys.
    Coherent,
    /// Photon-number state, analysed directly.
    Fock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    pub kind: SourceKind,
    /// Decoy intensities as seen after the total loss.
    pub intensities: Vec<f64>,
    pub photon_number: usize,
    /// Raise the emitted intensity by `1/η_tot` so the detected one is on target.
    pub compensate: bool,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self { kind: SourceKind::Coherent, intensities: vec![0.0872, 0.2314, 0.9840], photon_number: 1, compensate: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub eta_pd: f64,
    pub v_e: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        // η_ele = 1/(1 + v_e) = 0.6
        Self { eta_pd: 0.617, v_e: 2.0 / 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CountsConfig {
    /// Records per (setting, decoy intensity).
    pub per_intensity: u64,
    /// Records per setting at zero intensity.
    pub vacuum: u64,
    /// Records per setting for a Fock source.
    pub direct: u64,
}

impl Default for CountsConfig {
    fn default() -> Self {
        Self { per_intensity: 1_000_000, vacuum: 50_000_000, direct: 1_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChshConfig {
    pub t_start: f64,
    pub t_stop: f64,
    pub t_step: f64,
}

impl Default for ChshConfig {
    fn default() -> Self {
        Self { t_start: 0.0, t_stop: 2.0, t_step: 0.02 }
    }
}

fn eight_phases_deg() -> Vec<f64> {
    (0..8).map(|k| -180.0 + 45.0 * k as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationConfig {
    pub threshold: f64,
    pub dtheta_deg: Vec<f64>,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self { threshold: 1.0, dtheta_deg: eight_phases_deg() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TomographyConfig {
    pub cutoff: usize,
    pub dtheta_deg: Vec<f64>,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub bin_width: f64,
    pub bin_range: f64,
    pub phase_averaged: bool,
}

impl Default for TomographyConfig {
    fn default() -> Self {
        let m = MleConfig::default();
        Self {
            cutoff: m.cutoff,
            dtheta_deg: eight_phases_deg(),
            max_iterations: m.max_iterations,
            tolerance: m.tolerance,
            bin_width: m.bin_width,
            bin_range: m.bin_range,
            phase_averaged: m.phase_averaged,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FairSamplingConfig {
    pub states: usize,
    pub thresholds: Vec<f64>,
    pub settings: usize,
    pub cutoff: usize,
    pub seed: u64,
}

impl Default for FairSamplingConfig {
    fn default() -> Self {
        let s = SuiteConfig::default();
        Self { states: s.states, thresholds: s.thresholds, settings: s.settings, cutoff: s.cutoff, seed: s.seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub pipeline: Pipeline,
    pub source: SourceConfig,
    pub noise: NoiseConfig,
    pub counts: CountsConfig,
    pub chsh: ChshConfig,
    pub correlation: CorrelationConfig,
    pub tomography: TomographyConfig,
    pub fair_sampling: FairSamplingConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            pipeline: Pipeline::Equivalent,
            source: SourceConfig::default(),
            noise: NoiseConfig::default(),
            counts: CountsConfig::default(),
            chsh: ChshConfig::default(),
            correlation: CorrelationConfig::default(),
            tomography: TomographyConfig::default(),
            fair_sampling: FairSamplingConfig::default(),
        }
    }
}

/// A semantic problem, located by section and key.
#[derive(Debug)]
struct Problem {
    section: &'static str,
    key: &'static str,
    message: String,
}

fn problem(section: &'static str, key: &'static str, message: impl fmt::Display) -> Problem {
    Problem { section, key, message: message.to_string() }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
        Self::parse(&text, path)
    }

    /// Parse and validate; `origin` only labels diagnostics.
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_column(text, s.start)).unwrap_or((1, 1));
            ConfigError::Syntax { path: origin.to_path_buf(), line, column, message: e.message().to_string() }
        })?;
        config.check().map_err(|p| {
            let location = match locate_key(text, p.section, p.key) {
                Some(line) => format!("{}:{line}", origin.display()),
                None => origin.display().to_string(),
            };
            let field = if p.section.is_empty() { p.key.to_string() } else { format!("{}.{}", p.section, p.key) };
            ConfigError::Invalid { location, field, message: p.message }
        })?;
        Ok(config)
    }

    /// Validate a config built in code.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.check().map_err(|p| ConfigError::Invalid {
            location: "<config>".into(),
            field: if p.section.is_empty() { p.key.to_string() } else { format!("{}.{}", p.section, p.key) },
            message: p.message,
        })
    }

    fn check(&self) -> Result<(), Problem> {
        match self.source.kind {
            SourceKind::Coherent => {
                DecoyIntensitySet::<f64>::new(self.source.intensities.clone())
                    .map_err(|e| problem("source", "intensities", e))?;
            }
            SourceKind::Fock => {
                if self.pipeline != Pipeline::IdealFock {
                    return Err(problem("", "pipeline", "a Fock source needs the ideal-fock pipeline"));
                }
                if self.source.photon_number > MAX_PHOTON_NUMBER {
                    return Err(problem("source", "photon_number", format!("at most {MAX_PHOTON_NUMBER}")));
                }
            }
        }
        Noise::new(self.noise.eta_pd, self.noise.v_e).map_err(|e| {
            let key = if (0.0..=1.0).contains(&self.noise.eta_pd) && self.noise.eta_pd > 0.0 { "v_e" } else { "eta_pd" };
            problem("noise", key, e)
        })?;
        for (key, v) in
            [("per_intensity", self.counts.per_intensity), ("vacuum", self.counts.vacuum), ("direct", self.counts.direct)]
        {
            if v == 0 {
                return Err(problem("counts", key, "must be at least 1"));
            }
        }
        let c = &self.chsh;
        if !(c.t_start >= 0.0) || !c.t_start.is_finite() {
            return Err(problem("chsh", "t_start", "must be a non-negative number"));
        }
        if !(c.t_stop >= c.t_start) || !c.t_stop.is_finite() {
            return Err(problem("chsh", "t_stop", "must be at least t_start"));
        }
        if !(c.t_step > 0.0) || !c.t_step.is_finite() {
            return Err(problem("chsh", "t_step", "must be positive"));
        }
        if !(self.correlation.threshold >= 0.0) || !self.correlation.threshold.is_finite() {
            return Err(problem("correlation", "threshold", "must be a non-negative number"));
        }
        check_phases("correlation", &self.correlation.dtheta_deg)?;
        check_phases("tomography", &self.tomography.dtheta_deg)?;
        self.mle_config().validate().map_err(|e| {
            let t = &self.tomography;
            let key = if t.cutoff < 1 || t.cutoff > MAX_PHOTON_NUMBER {
                "cutoff"
            } else if !(t.tolerance > 0.0) {
                "tolerance"
            } else {
                "bin_width"
            };
            problem("tomography", key, e)
        })?;
        let f = &self.fair_sampling;
        if f.states == 0 {
            return Err(problem("fair_sampling", "states", "must be at least 1"));
        }
        if f.settings == 0 {
            return Err(problem("fair_sampling", "settings", "must be at least 1"));
        }
        if f.thresholds.is_empty() || f.thresholds.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(problem("fair_sampling", "thresholds", "must be a non-empty list of non-negative numbers"));
        }
        if f.cutoff < 1 || f.cutoff > MAX_PHOTON_NUMBER {
            return Err(problem("fair_sampling", "cutoff", format!("must be in 1..={MAX_PHOTON_NUMBER}")));
        }
        Ok(())
    }

    /// Divide every sample count by `k`, keeping at least one record.
    pub fn scaled(mut self, k: u64) -> Self {
        let k = k.max(1);
        for v in [&mut self.counts.per_intensity, &mut self.counts.vacuum, &mut self.counts.direct] {
            *v = (*v / k).max(1);
        }
        self
    }

    pub fn noise_model(&self) -> Noise {
        Noise::new(self.noise.eta_pd, self.noise.v_e).expect("validated noise")
    }

    /// `None` for a Fock source.
    pub fn decoys(&self) -> Option<IntensitySet> {
        match self.source.kind {
            SourceKind::Coherent => Some(DecoyIntensitySet::new(self.source.intensities.clone()).expect("validated intensities")),
            SourceKind::Fock => None,
        }
    }

    /// Emitted intensity that yields `target` after the modelled loss.
    pub fn emitted_intensity(&self, target: f64) -> f64 {
        if self.source.compensate && self.pipeline != Pipeline::IdealFock {
            entangle_core::channels::compensated_intensity(target, &self.noise_model()).expect("validated noise")
        } else {
            target
        }
    }

    /// `t_start, t_start + t_step, …` up to `t_stop`, rounded to 12 decimals
    /// so grid values print cleanly.
    pub fn t_grid(&self) -> Vec<f64> {
        let c = &self.chsh;
        let steps = ((c.t_stop - c.t_start) / c.t_step + 1e-9).floor() as usize;
        (0..=steps).map(|k| ((c.t_start + k as f64 * c.t_step) * 1e12).round() / 1e12).collect()
    }

    pub fn correlation_phases(&self) -> Vec<f64> {
        self.correlation.dtheta_deg.iter().map(|d| d * PI / 180.0).collect()
    }

    pub fn tomography_phases(&self) -> Vec<f64> {
        self.tomography.dtheta_deg.iter().map(|d| d * PI / 180.0).collect()
    }

    pub fn mle_config(&self) -> MleConfig {
        let t = &self.tomography;
        MleConfig {
            cutoff: t.cutoff,
            max_iterations: t.max_iterations,
            tolerance: t.tolerance,
            bin_width: t.bin_width,
            bin_range: t.bin_range,
            phase_averaged: t.phase_averaged,
        }
    }

    pub fn suite_config(&self, mode: OverlapMode) -> SuiteConfig {
        let f = &self.fair_sampling;
        SuiteConfig {
            states: f.states,
            thresholds: f.thresholds.clone(),
            settings: f.settings,
            cutoff: f.cutoff,
            seed: f.seed,
            mode,
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn check_phases(section: &'static str, phases: &[f64]) -> Result<(), Problem> {
    if phases.is_empty() {
        return Err(problem(section, "dtheta_deg", "must not be empty"));
    }
    if phases.iter().any(|p| !p.is_finite()) {
        return Err(problem(section, "dtheta_deg", "phases must be finite"));
    }
    Ok(())
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Line on which `key` is assigned inside `[section]` (top level for "").
fn locate_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else { continue };
        if current == section && lhs.trim().trim_matches('"') == key {
            return Some(i + 1);
        }
    }
    None
}
