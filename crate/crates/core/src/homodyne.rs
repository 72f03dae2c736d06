//! Monte Carlo homodyne outcomes for the two-arm experiment and the
//! analytic joint densities of Fock inputs.
//!
//! Sampling is done in `f64`. A batch is split into chunks of
//! [`CHUNK_SIZE`] records; chunk `i` draws from a ChaCha8 stream seeded
//! with the batch seed and stream id `i`, so the output does not depend on
//! how chunks are scheduled across threads.

use std::f64::consts::PI;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use num_complex::Complex;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{splitter_coefficients, ChannelError, NoiseModel};
use crate::fock::{hermite_functions, MAX_PHOTON_NUMBER};
use crate::scalar::{from_usize, phase, Real};

/// Records per RNG stream.
pub const CHUNK_SIZE: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum HomodyneError {
    #[error("unknown pipeline `{0}` (expected physical, equivalent or ideal-fock)")]
    UnknownPipeline(String),
    #[error("pipeline {pipeline} cannot sample a {source_kind} source")]
    PipelineMismatch { pipeline: Pipeline, source_kind: &'static str },
    #[error("photon number {n} exceeds the supported maximum {max}")]
    PhotonNumberTooLarge { n: usize, max: usize },
    #[error("rejection envelope too small for n={n}: ratio {ratio:.4} > bound {bound:.4}")]
    EnvelopeFailure { n: usize, ratio: f64, bound: f64 },
    #[error("sample count must be at least 1")]
    EmptyBatch,
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

/// How outcomes are generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    /// Per-arm loss, additive electronic noise, then rescaling.
    Physical,
    /// All imperfections folded into one transmittance.
    Equivalent,
    /// Exact Fock-state densities; noise ignored.
    IdealFock,
}

impl Pipeline {
    pub fn tag(self) -> &'static str {
        match self {
            Pipeline::Physical => "physical",
            Pipeline::Equivalent => "equivalent",
            Pipeline::IdealFock => "ideal-fock",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Pipeline {
    type Err = HomodyneError;
    fn from_str(s: &str) -> Result<Self, HomodyneError> {
        match s {
            "physical" => Ok(Pipeline::Physical),
            "equivalent" => Ok(Pipeline::Equivalent),
            "ideal-fock" => Ok(Pipeline::IdealFock),
            other => Err(HomodyneError::UnknownPipeline(other.to_string())),
        }
    }
}

/// Local-oscillator phases of both arms and their CHSH labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSettings {
    pub phi_a: f64,
    pub phi_b: f64,
    pub label_a: u8,
    pub label_b: u8,
}

impl MeasurementSettings {
    /// Alice's phases for labels 0 and 1.
    pub const ALICE_PHASES: [f64; 2] = [0.0, PI / 2.0];
    /// Bob's phases for labels 0 and 1.
    pub const BOB_PHASES: [f64; 2] = [PI / 4.0, -PI / 4.0];

    pub fn chsh(label_a: u8, label_b: u8) -> Self {
        assert!(label_a < 2 && label_b < 2, "CHSH labels are 0 or 1");
        Self { phi_a: Self::ALICE_PHASES[label_a as usize], phi_b: Self::BOB_PHASES[label_b as usize], label_a, label_b }
    }

    /// `(a₀,b₀), (a₁,b₀), (a₀,b₁), (a₁,b₁)`.
    pub fn chsh_set() -> [Self; 4] {
        [Self::chsh(0, 0), Self::chsh(1, 0), Self::chsh(0, 1), Self::chsh(1, 1)]
    }

    /// `φ_a = dθ`, `φ_b = 0`, labels 0.
    pub fn with_phase_difference(dtheta: f64) -> Self {
        Self { phi_a: dtheta, phi_b: 0.0, label_a: 0, label_b: 0 }
    }

    pub fn dtheta(&self) -> f64 {
        self.phi_a - self.phi_b
    }
}

/// One pair of homodyne outcomes. The state phase is never stored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRecord {
    pub x_a: f64,
    pub x_b: f64,
    pub intensity_label: u32,
    pub setting_a: u8,
    pub setting_b: u8,
}

/// What enters the splitter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Source {
    /// Phase-randomized coherent state of mean photon number `mu`.
    Coherent { mu: f64 },
    /// Photon-number state `|n⟩`.
    Fock { n: usize },
}

/// Everything needed to regenerate a batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchMetadata {
    pub seed: u64,
    pub pipeline: Pipeline,
    pub source: Source,
    pub settings: MeasurementSettings,
    pub noise: NoiseModel<f64>,
    pub intensity_label: u32,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub meta: BatchMetadata,
    pub records: Vec<SampleRecord>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn with_intensity_label(mut self, label: u32) -> Self {
        self.meta.intensity_label = label;
        for r in &mut self.records {
            r.intensity_label = label;
        }
        self
    }

    pub fn x_a(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.x_a).collect()
    }

    pub fn x_b(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.x_b).collect()
    }
}

fn standard_normal<G: Rng + ?Sized>(rng: &mut G) -> f64 {
    StandardNormal.sample(rng)
}

/// One outcome pair for a coherent state `|√μ e^{iθ}⟩` split 50:50.
pub fn sample_coherent_pair<G: Rng + ?Sized>(
    mu: f64,
    theta: f64,
    settings: &MeasurementSettings,
    noise: &NoiseModel<f64>,
    pipeline: Pipeline,
    rng: &mut G,
) -> Result<(f64, f64), HomodyneError> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(ChannelError::BadIntensity(mu).into());
    }
    let shot = 0.5f64.sqrt();
    match pipeline {
        Pipeline::Equivalent => {
            let amp = (mu * noise.eta_tot()).sqrt();
            let xa = amp * (theta - settings.phi_a).cos() + shot * standard_normal(rng);
            let xb = amp * (theta - settings.phi_b).cos() + shot * standard_normal(rng);
            Ok((xa, xb))
        }
        Pipeline::Physical => {
            // each arm carries α/√2; mean √2·Re(α' e^{−iφ}) after photodiode loss
            let amp = (mu * noise.eta_pd()).sqrt();
            let elec = (noise.v_e() / 2.0).sqrt();
            let rescale = noise.eta_ele().sqrt();
            let mut arm = |phi: f64| {
                let x = amp * (theta - phi).cos() + shot * standard_normal(rng);
                (x + elec * standard_normal(rng)) * rescale
            };
            let xa = arm(settings.phi_a);
            let xb = arm(settings.phi_b);
            Ok((xa, xb))
        }
        Pipeline::IdealFock => Err(HomodyneError::PipelineMismatch { pipeline, source_kind: "fixed-phase coherent" }),
    }
}

/// Deterministic batch of `count` records. θ is redrawn uniformly per record.
pub fn sample_batch(
    source: Source,
    settings: MeasurementSettings,
    count: usize,
    noise: &NoiseModel<f64>,
    pipeline: Pipeline,
    seed: u64,
) -> Result<SampleBatch, HomodyneError> {
    BatchPlan::new(source, settings, count, noise, pipeline, seed)?.generate()
}

/// A validated batch description that can be materialized or streamed
/// chunk by chunk. Streaming yields exactly the records of
/// [`BatchPlan::generate`], in the same order.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    meta: BatchMetadata,
    fock: Vec<FockPairSampler>,
    poisson: Option<Poisson<f64>>,
}

impl BatchPlan {
    pub fn new(
        source: Source,
        settings: MeasurementSettings,
        count: usize,
        noise: &NoiseModel<f64>,
        pipeline: Pipeline,
        seed: u64,
    ) -> Result<Self, HomodyneError> {
        if count == 0 {
            return Err(HomodyneError::EmptyBatch);
        }
        let dtheta = settings.dtheta();
        let fock = match (source, pipeline) {
            (Source::Coherent { mu }, _) if !(mu >= 0.0) || !mu.is_finite() => {
                return Err(ChannelError::BadIntensity(mu).into());
            }
            (Source::Fock { .. }, Pipeline::Physical | Pipeline::Equivalent) => {
                return Err(HomodyneError::PipelineMismatch { pipeline, source_kind: "Fock" });
            }
            (Source::Fock { n }, Pipeline::IdealFock) => vec![FockPairSampler::new(n, dtheta)?],
            (Source::Coherent { .. }, Pipeline::IdealFock) => {
                (0..=MAX_PHOTON_NUMBER).map(|n| FockPairSampler::new(n, dtheta)).collect::<Result<_, _>>()?
            }
            (Source::Coherent { .. }, _) => Vec::new(),
        };
        let poisson = match source {
            Source::Coherent { mu } if mu > 0.0 && pipeline == Pipeline::IdealFock => {
                Some(Poisson::new(mu).map_err(|_| ChannelError::BadIntensity(mu))?)
            }
            _ => None,
        };
        let meta = BatchMetadata { seed, pipeline, source, settings, noise: *noise, intensity_label: 0, count };
        Ok(Self { meta, fock, poisson })
    }

    pub fn with_intensity_label(mut self, label: u32) -> Self {
        self.meta.intensity_label = label;
        self
    }

    pub fn meta(&self) -> &BatchMetadata {
        &self.meta
    }

    pub fn chunks(&self) -> usize {
        self.meta.count.div_ceil(CHUNK_SIZE)
    }

    /// Records of chunk `chunk`.
    pub fn chunk(&self, chunk: usize) -> Result<Vec<SampleRecord>, HomodyneError> {
        let meta = &self.meta;
        let mut rng = ChaCha8Rng::seed_from_u64(meta.seed);
        rng.set_stream(chunk as u64);
        let len = CHUNK_SIZE.min(meta.count - chunk * CHUNK_SIZE);
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let (x_a, x_b) = match meta.source {
                Source::Fock { .. } => self.fock[0].sample(&mut rng)?,
                Source::Coherent { .. } if meta.pipeline == Pipeline::IdealFock => {
                    let n = match &self.poisson {
                        Some(p) => p.sample(&mut rng) as usize,
                        None => 0,
                    };
                    self.fock.get(n).ok_or(HomodyneError::PhotonNumberTooLarge { n, max: MAX_PHOTON_NUMBER })?.sample(&mut rng)?
                }
                Source::Coherent { mu } => {
                    let theta = rng.random::<f64>() * 2.0 * PI;
                    sample_coherent_pair(mu, theta, &meta.settings, &meta.noise, meta.pipeline, &mut rng)?
                }
            };
            out.push(SampleRecord {
                x_a,
                x_b,
                intensity_label: meta.intensity_label,
                setting_a: meta.settings.label_a,
                setting_b: meta.settings.label_b,
            });
        }
        Ok(out)
    }

    /// Map every chunk in parallel, `window` chunks at a time, and hand the
    /// results to `sink` in chunk order. Peak memory is bounded by the window.
    pub fn for_each_window<T, M, S>(&self, window: usize, map: M, mut sink: S) -> Result<(), HomodyneError>
    where
        T: Send,
        M: Fn(&[SampleRecord]) -> T + Sync,
        S: FnMut(T) -> Result<(), HomodyneError>,
    {
        let window = window.max(1);
        let chunks = self.chunks();
        let mut start = 0;
        while start < chunks {
            let stop = (start + window).min(chunks);
            let mapped: Vec<Result<T, HomodyneError>> =
                (start..stop).into_par_iter().map(|c| self.chunk(c).map(|records| map(&records))).collect();
            for item in mapped {
                sink(item?)?;
            }
            start = stop;
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<SampleBatch, HomodyneError> {
        let pieces: Vec<Result<Vec<SampleRecord>, HomodyneError>> =
            (0..self.chunks()).into_par_iter().map(|c| self.chunk(c)).collect();
        let mut records = Vec::with_capacity(self.meta.count);
        for piece in pieces {
            records.extend(piece?);
        }
        Ok(SampleBatch { meta: self.meta.clone(), records })
    }
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent per-batch seed from a master seed and a tuple of tags.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(master), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Amplitude `Σ_k c_k ψ_k(x_a, φ_a) ψ_{n−k}(x_b, φ_b)`.
fn fock_amplitude<R: Real>(n: usize, x_a: R, x_b: R, phi_a: R, phi_b: R) -> Complex<R> {
    let pa = hermite_functions(n, x_a);
    let pb = hermite_functions(n, x_b);
    let mut acc = Complex::new(R::zero(), R::zero());
    for (k, c) in splitter_coefficients::<R>(n).into_iter().enumerate() {
        let ph = phase(from_usize::<R>(k) * phi_a + from_usize::<R>(n - k) * phi_b);
        acc += ph * (c * pa[k] * pb[n - k]);
    }
    acc
}

fn check_photon_number(n: usize) -> Result<(), HomodyneError> {
    if n > MAX_PHOTON_NUMBER {
        return Err(HomodyneError::PhotonNumberTooLarge { n, max: MAX_PHOTON_NUMBER });
    }
    Ok(())
}

/// Joint density of both outcomes for `|n⟩` at the splitter, with explicit
/// local-oscillator phases.
pub fn joint_pdf_fock_phases<R: Real>(n: usize, x_a: R, x_b: R, phi_a: R, phi_b: R) -> Result<R, HomodyneError> {
    check_photon_number(n)?;
    Ok(fock_amplitude(n, x_a, x_b, phi_a, phi_b).norm_sqr())
}

/// Joint density of both outcomes for `|n⟩` at the splitter; depends on the
/// phases only through `dθ = φ_a − φ_b`.
pub fn joint_pdf_fock<R: Real>(n: usize, x_a: R, x_b: R, dtheta: R) -> Result<R, HomodyneError> {
    joint_pdf_fock_phases(n, x_a, x_b, dtheta, R::zero())
}

/// Single-arm marginal `Σ_k |c_k|² ψ_k(x)²`.
pub fn marginal_pdf_fock<R: Real>(n: usize, x: R) -> Result<R, HomodyneError> {
    check_photon_number(n)?;
    let psi = hermite_functions(n, x);
    Ok(splitter_coefficients::<R>(n).into_iter().enumerate().fold(R::zero(), |acc, (k, c)| acc + c * c * psi[k] * psi[k]))
}

fn hermite_array(nmax: usize, x: f64) -> [f64; MAX_PHOTON_NUMBER + 1] {
    let mut out = [0.0; MAX_PHOTON_NUMBER + 1];
    out[0] = PI.powf(-0.25) * (-x * x / 2.0).exp();
    if nmax > 0 {
        out[1] = 2f64.sqrt() * x * out[0];
    }
    for n in 1..nmax {
        let nf = n as f64;
        out[n + 1] = (2.0 / (nf + 1.0)).sqrt() * x * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
    }
    out
}

const ENVELOPE_GRID_EDGE: f64 = 9.0;
const ENVELOPE_GRID_STEP: f64 = 0.04;
const ENVELOPE_SAFETY: f64 = 1.1;

/// `max (p / g)` over a grid with the phases replaced by their worst case,
/// where `g` is the product `Normal(0, 1)` density. Independent of `dθ`.
fn envelope_bounds() -> &'static [f64; MAX_PHOTON_NUMBER + 1] {
    static BOUNDS: OnceLock<[f64; MAX_PHOTON_NUMBER + 1]> = OnceLock::new();
    BOUNDS.get_or_init(|| {
        let steps = (2.0 * ENVELOPE_GRID_EDGE / ENVELOPE_GRID_STEP).round() as usize;
        let grid: Vec<(f64, [f64; MAX_PHOTON_NUMBER + 1])> = (0..=steps)
            .map(|i| {
                let x = -ENVELOPE_GRID_EDGE + i as f64 * ENVELOPE_GRID_STEP;
                let mut psi = hermite_array(MAX_PHOTON_NUMBER, x);
                // fold the envelope's e^{x²/4} per amplitude factor in now
                for v in &mut psi {
                    *v = v.abs() * (x * x / 4.0).exp();
                }
                (x, psi)
            })
            .collect();
        let mut out = [0.0; MAX_PHOTON_NUMBER + 1];
        for (n, slot) in out.iter_mut().enumerate() {
            let c = splitter_coefficients::<f64>(n);
            let mut best = 0.0f64;
            for (_, pa) in &grid {
                for (_, pb) in &grid {
                    let s: f64 = (0..=n).map(|k| c[k] * pa[k] * pb[n - k]).sum();
                    best = best.max(s * s);
                }
            }
            *slot = 2.0 * PI * best * ENVELOPE_SAFETY;
        }
        out
    })
}

/// Rejection sampler for [`joint_pdf_fock`] with a product `Normal(0, 1)`
/// envelope.
#[derive(Clone, Debug)]
pub struct FockPairSampler {
    n: usize,
    weights: Vec<Complex<f64>>,
    bound: f64,
}

impl FockPairSampler {
    pub fn new(n: usize, dtheta: f64) -> Result<Self, HomodyneError> {
        check_photon_number(n)?;
        let weights =
            splitter_coefficients::<f64>(n).into_iter().enumerate().map(|(k, c)| phase(k as f64 * dtheta) * c).collect();
        Ok(Self { n, weights, bound: envelope_bounds()[n] })
    }

    pub fn envelope_bound(&self) -> f64 {
        self.bound
    }

    /// `p(x_a, x_b) / g(x_a, x_b)`.
    pub fn ratio(&self, x_a: f64, x_b: f64) -> f64 {
        let pa = hermite_array(self.n, x_a);
        let pb = hermite_array(self.n, x_b);
        let amp: Complex<f64> = self.weights.iter().enumerate().map(|(k, w)| w * (pa[k] * pb[self.n - k])).sum();
        2.0 * PI * amp.norm_sqr() * ((x_a * x_a + x_b * x_b) / 2.0).exp()
    }

    pub fn sample<G: Rng + ?Sized>(&self, rng: &mut G) -> Result<(f64, f64), HomodyneError> {
        if self.n == 0 {
            let s = 0.5f64.sqrt();
            return Ok((s * standard_normal(rng), s * standard_normal(rng)));
        }
        loop {
            let x_a = standard_normal(rng);
            let x_b = standard_normal(rng);
            let r = self.ratio(x_a, x_b);
            if r > self.bound {
                return Err(HomodyneError::EnvelopeFailure { n: self.n, ratio: r, bound: self.bound });
            }
            if rng.random::<f64>() * self.bound < r {
                return Ok((x_a, x_b));
            }
        }
    }
}

/// One draw from [`joint_pdf_fock`].
pub fn sample_fock_pair<G: RngCore + ?Sized>(n: usize, dtheta: f64, rng: &mut G) -> Result<(f64, f64), HomodyneError> {
    FockPairSampler::new(n, dtheta)?.sample(rng)
}

pub const CSV_HEADER: &str = "x_a,x_b,intensity_label,setting_a,setting_b";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HomodyneError + '_ {
    move |source| HomodyneError::Io { path: path.to_path_buf(), source }
}

/// Sidecar path next to a batch file.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// One CSV line at 17 significant digits, matching [`CSV_HEADER`].
pub fn write_record<W: Write>(w: &mut W, r: &SampleRecord) -> std::io::Result<()> {
    writeln!(w, "{:.16e},{:.16e},{},{},{}", r.x_a, r.x_b, r.intensity_label, r.setting_a, r.setting_b)
}

/// Write records as CSV at 17 significant digits.
pub fn write_records_csv(path: &Path, records: &[SampleRecord]) -> Result<(), HomodyneError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in records {
            write_record(&mut w, r)?;
        }
        w.flush()
    };
    body().map_err(io_err(path))
}

pub fn read_records_csv(path: &Path) -> Result<Vec<SampleRecord>, HomodyneError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let parse_err = |line: usize, message: String| HomodyneError::Parse { path: path.to_path_buf(), line, message };
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == CSV_HEADER => {}
        Some((_, Ok(h))) => return Err(parse_err(1, format!("unexpected header `{h}`"))),
        Some((_, Err(e))) => return Err(io_err(path)(e)),
        None => return Err(parse_err(1, "empty file".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(parse_err(i + 1, format!("expected 5 fields, found {}", f.len())));
        }
        let bad = |what: &str| parse_err(i + 1, format!("bad {what}"));
        let x_a: f64 = f[0].parse().map_err(|_| bad("x_a"))?;
        let x_b: f64 = f[1].parse().map_err(|_| bad("x_b"))?;
        if !x_a.is_finite() || !x_b.is_finite() {
            return Err(bad("non-finite quadrature"));
        }
        out.push(SampleRecord {
            x_a,
            x_b,
            intensity_label: f[2].parse().map_err(|_| bad("intensity_label"))?,
            setting_a: f[3].parse().map_err(|_| bad("setting_a"))?,
            setting_b: f[4].parse().map_err(|_| bad("setting_b"))?,
        });
    }
    Ok(out)
}

/// CSV plus JSON sidecar.
pub fn write_batch(path: &Path, batch: &SampleBatch) -> Result<(), HomodyneError> {
    write_records_csv(path, &batch.records)?;
    write_sidecar(path, &batch.meta)
}

/// Metadata file next to the CSV at `path`.
pub fn write_sidecar(path: &Path, meta: &BatchMetadata) -> Result<(), HomodyneError> {
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta).expect("metadata serializes");
    std::fs::write(&side, json + "\n").map_err(io_err(&side))
}

pub fn read_batch(path: &Path) -> Result<SampleBatch, HomodyneError> {
    let records = read_records_csv(path)?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(io_err(&side))?;
    let meta: BatchMetadata = serde_json::from_str(&text).map_err(|e| HomodyneError::Parse {
        path: side.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    Ok(SampleBatch { meta, records })
}

/// 2-D tensor Gauss–Legendre integral of `joint_pdf_fock` over a rectangle.
pub fn integrate_joint_pdf<R: Real>(n: usize, dtheta: R, a: (R, R), b: (R, R)) -> Result<R, HomodyneError> {
    integrate_joint_pdf_with(&crate::fock::quadrature::default_rule::<R>(), n, dtheta, a, b)
}

/// [`integrate_joint_pdf`] with an explicit panel rule.
pub fn integrate_joint_pdf_with<R: Real>(
    rule: &crate::fock::quadrature::GaussLegendre<R>,
    n: usize,
    dtheta: R,
    a: (R, R),
    b: (R, R),
) -> Result<R, HomodyneError> {
    check_photon_number(n)?;
    let mut acc = R::zero();
    let mut nodes_b = Vec::new();
    crate::fock::quadrature::for_each_node(rule, b.0, b.1, |x, w| nodes_b.push((x, w, hermite_functions(n, x))));
    let c = splitter_coefficients::<R>(n);
    let ph: Vec<Complex<R>> = (0..=n).map(|k| phase(from_usize::<R>(k) * dtheta)).collect();
    crate::fock::quadrature::for_each_node(rule, a.0, a.1, |xa, wa| {
        let pa = hermite_functions(n, xa);
        for (_, wb, pb) in &nodes_b {
            let amp: Complex<R> =
                (0..=n).map(|k| ph[k] * (c[k] * pa[k] * pb[n - k])).fold(Complex::new(R::zero(), R::zero()), |s, t| s + t);
            acc += wa * *wb * amp.norm_sqr();
        }
    });
    Ok(acc)
}
