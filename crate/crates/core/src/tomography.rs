//! Binned joint-quadrature histograms, their decoy correction, and
//! maximum-likelihood reconstruction of the two-mode density matrix.
//!
//! The POVM of a 2-D bin factorizes, `Π_{ij}(φ_a, φ_b) = A_i(φ_a) ⊗ B_j(φ_b)`,
//! with one-mode bin overlaps `A_i[m,n] = e^{i(n−m)φ} ∫_bin ψ_m ψ_n dx`.
//! Only these one-mode blocks are stored; full elements are materialized on
//! request.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::TwoModeFockState;
use crate::decoy::{DecoyError, DecoyIntensitySet};
use crate::fock::{interval_overlaps, phased_overlaps, FockError, Modes, TruncatedOperator, MAX_PHOTON_NUMBER};
use crate::homodyne::{MeasurementSettings, SampleBatch, SampleRecord};
use crate::scalar::{lit, to_f64, Real, C};

#[derive(Debug, Error)]
pub enum TomographyError {
    #[error("bin edges must be strictly increasing (violated at edge {0})")]
    OverlappingBins(usize),
    #[error("at least one bin is required")]
    NoBins,
    #[error("bin width must be positive and the range non-empty")]
    BadBinning,
    #[error("cutoff must be between 1 and {max}, got {found}")]
    BadCutoff { found: usize, max: usize },
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("histogram and POVM disagree on {0}")]
    Incompatible(&'static str),
    #[error("setting {setting}: expected {expected} intensity batches (vacuum first), found {found}")]
    MissingIntensity { setting: usize, expected: usize, found: usize },
    #[error("setting {0} has no data")]
    EmptySetting(usize),
    #[error("likelihood undefined: an observed bin has zero model probability")]
    ZeroProbability,
    #[error("no convergence after {iterations} iterations; last log-likelihoods {last:?}")]
    NotConverged { iterations: usize, last: Vec<f64>, partial: Box<TomographyResult<f64>> },
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Decoy(#[from] DecoyError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Contiguous 1-D bins `[e_0, e_1), [e_1, e_2), …`, shared by both arms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureBins {
    edges: Vec<f64>,
}

impl QuadratureBins {
    pub fn from_edges(edges: Vec<f64>) -> Result<Self, TomographyError> {
        if edges.len() < 2 {
            return Err(TomographyError::NoBins);
        }
        if let Some(i) = edges.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(TomographyError::OverlappingBins(i + 1));
        }
        Ok(Self { edges })
    }

    /// Equal-width bins over `[-range, range]`.
    pub fn uniform(range: f64, width: f64) -> Result<Self, TomographyError> {
        if !(width > 0.0 && range > 0.0) {
            return Err(TomographyError::BadBinning);
        }
        let n = (2.0 * range / width).round().max(1.0) as usize;
        Self::from_edges((0..=n).map(|i| -range + 2.0 * range * i as f64 / n as f64).collect())
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    pub fn index(&self, x: f64) -> Option<usize> {
        let p = self.edges.partition_point(|&e| e <= x);
        (p >= 1 && p < self.edges.len()).then(|| p - 1)
    }
}

/// One-mode bin overlaps at every setting plus the out-of-range remainder.
#[derive(Clone, Debug)]
pub struct FactorizedPovm<R: Real> {
    cutoff: usize,
    bins: QuadratureBins,
    settings: Vec<MeasurementSettings>,
    /// `[setting][bin]`.
    alice: Vec<Vec<DMatrix<C<R>>>>,
    bob: Vec<Vec<DMatrix<C<R>>>>,
    /// Overlap outside the binned range, per setting.
    alice_out: Vec<DMatrix<C<R>>>,
    bob_out: Vec<DMatrix<C<R>>>,
}

/// Factorized bin POVM for every setting.
pub fn build_povm_elements<R: Real>(
    settings: &[MeasurementSettings],
    bins: &QuadratureBins,
    cutoff: usize,
) -> Result<FactorizedPovm<R>, TomographyError> {
    if cutoff > MAX_PHOTON_NUMBER {
        return Err(TomographyError::BadCutoff { found: cutoff, max: MAX_PHOTON_NUMBER });
    }
    let e = bins.edges();
    let g: Vec<DMatrix<R>> =
        (0..bins.len()).into_par_iter().map(|i| interval_overlaps(lit::<R>(e[i]), lit::<R>(e[i + 1]), cutoff)).collect();
    let inf: R = lit(f64::INFINITY);
    let lo: R = lit(e[0]);
    let hi: R = lit(*e.last().expect("non-empty"));
    let out = interval_overlaps(-inf, lo, cutoff) + interval_overlaps(hi, inf, cutoff);
    let lift = |phi: f64| -> (Vec<DMatrix<C<R>>>, DMatrix<C<R>>) {
        let phi: R = lit(phi);
        (g.iter().map(|gi| phased_overlaps(gi, phi)).collect(), phased_overlaps(&out, phi))
    };
    let mut alice = Vec::new();
    let mut bob = Vec::new();
    let mut alice_out = Vec::new();
    let mut bob_out = Vec::new();
    for s in settings {
        let (a, ao) = lift(s.phi_a);
        let (b, bo) = lift(s.phi_b);
        alice.push(a);
        alice_out.push(ao);
        bob.push(b);
        bob_out.push(bo);
    }
    Ok(FactorizedPovm { cutoff, bins: bins.clone(), settings: settings.to_vec(), alice, bob, alice_out, bob_out })
}

fn kron<R: Real>(a: &DMatrix<C<R>>, b: &DMatrix<C<R>>) -> DMatrix<C<R>> {
    a.kronecker(b)
}

impl<R: Real> FactorizedPovm<R> {
    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn bins(&self) -> &QuadratureBins {
        &self.bins
    }

    pub fn settings(&self) -> &[MeasurementSettings] {
        &self.settings
    }

    /// One-mode overlap of bin `i` for Alice at setting `s`.
    pub fn alice_block(&self, s: usize, i: usize) -> &DMatrix<C<R>> {
        &self.alice[s][i]
    }

    /// Two-mode element for bins `(i, j)` at setting `s`.
    pub fn element(&self, s: usize, i: usize, j: usize) -> TruncatedOperator<R> {
        TruncatedOperator::from_matrix(self.cutoff, Modes::Two, kron(&self.alice[s][i], &self.bob[s][j]))
            .expect("consistent dimensions")
    }

    /// Element for "at least one arm outside the binned range".
    pub fn complement(&self, s: usize) -> TruncatedOperator<R> {
        let a_in = self.alice[s].iter().fold(DMatrix::zeros(self.cutoff + 1, self.cutoff + 1), |acc, m| acc + m);
        let b_in = self.bob[s].iter().fold(DMatrix::zeros(self.cutoff + 1, self.cutoff + 1), |acc, m| acc + m);
        let m = kron(&a_in, &self.bob_out[s]) + kron(&self.alice_out[s], &b_in) + kron(&self.alice_out[s], &self.bob_out[s]);
        TruncatedOperator::from_matrix(self.cutoff, Modes::Two, m).expect("consistent dimensions")
    }

    /// `[p_{ij}]` row-major over bins, plus the complement probability.
    fn probabilities(&self, s: usize, rho: &DMatrix<C<R>>) -> (Vec<R>, R) {
        let d = self.cutoff + 1;
        let nb = self.bins.len();
        let mut out = Vec::with_capacity(nb * nb);
        let zero = Complex::new(R::zero(), R::zero());
        let mut c = DMatrix::from_element(d, d, zero);
        for a in &self.alice[s] {
            // C[k,l] = Σ_{m,n} ρ[(m,k),(n,l)] A[n,m]
            c.fill(zero);
            for m in 0..d {
                for n in 0..d {
                    let anm = a[(n, m)];
                    if anm == zero {
                        continue;
                    }
                    for k in 0..d {
                        for l in 0..d {
                            c[(k, l)] += rho[(m * d + k, n * d + l)] * anm;
                        }
                    }
                }
            }
            for b in &self.bob[s] {
                let mut p = zero;
                for k in 0..d {
                    for l in 0..d {
                        p += c[(k, l)] * b[(l, k)];
                    }
                }
                out.push(p.re);
            }
        }
        let comp = self.complement(s);
        let pc = trace_product(rho, comp.matrix()).re;
        (out, pc)
    }

    /// `Σ_{ij} w_ij A_i ⊗ B_j + w_out Π_out` at setting `s`.
    fn weighted_sum(&self, s: usize, w: &[R], w_out: R) -> DMatrix<C<R>> {
        let d = self.cutoff + 1;
        let nb = self.bins.len();
        let zero = Complex::new(R::zero(), R::zero());
        let mut acc = DMatrix::from_element(d * d, d * d, zero);
        for (i, a) in self.alice[s].iter().enumerate() {
            let mut m = DMatrix::from_element(d, d, zero);
            for (j, b) in self.bob[s].iter().enumerate() {
                let wij = w[i * nb + j];
                if wij != R::zero() {
                    m += b * Complex::new(wij, R::zero());
                }
            }
            acc += kron(a, &m);
        }
        if w_out != R::zero() {
            acc += self.complement(s).into_matrix() * Complex::new(w_out, R::zero());
        }
        acc
    }
}

fn trace_product<R: Real>(a: &DMatrix<C<R>>, b: &DMatrix<C<R>>) -> C<R> {
    let mut acc = Complex::new(R::zero(), R::zero());
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// What the histogram values are.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HistogramKind {
    /// Raw event counts.
    Counts,
    /// Decoy-estimated single-photon bin probabilities, unit mass per setting.
    SinglePhoton,
}

/// Per-setting 2-D histograms over `bins × bins`, row-major in `(x_a, x_b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedHistogram<R> {
    pub settings: Vec<MeasurementSettings>,
    pub bins: QuadratureBins,
    pub kind: HistogramKind,
    /// `[setting][i·nb + j]`.
    pub values: Vec<Vec<R>>,
    /// Weight outside the binned range, per setting.
    pub out_of_range: Vec<R>,
    /// Fraction of bins whose corrected value was negative and set to 0.
    pub clamp_fraction: f64,
    /// Set when a setting had no positive corrected mass to normalize.
    pub degenerate: bool,
}

impl<R: Real> BinnedHistogram<R> {
    /// Probability per unit area of bin `(i, j)`, relative to the total of its setting.
    pub fn density(&self, s: usize, i: usize, j: usize) -> R {
        let nb = self.bins.len();
        let total = self.values[s].iter().fold(self.out_of_range[s], |a, &v| a + v);
        let area = self.bins.width(i) * self.bins.width(j);
        if total > R::zero() {
            self.values[s][i * nb + j] / (total * lit::<R>(area))
        } else {
            R::zero()
        }
    }

    /// Per-setting relative frequencies (bins, out-of-range).
    fn frequencies(&self) -> Result<Vec<(Vec<R>, R)>, TomographyError> {
        self.values
            .iter()
            .zip(&self.out_of_range)
            .enumerate()
            .map(|(s, (v, &o))| {
                let total = v.iter().fold(o, |a, &x| a + x);
                if !(total > R::zero()) {
                    return Err(TomographyError::EmptySetting(s));
                }
                Ok((v.iter().map(|&x| x / total).collect(), o / total))
            })
            .collect()
    }
}

/// Integer counts of one batch on a bin grid; mergeable across chunks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinCounts {
    pub counts: Vec<u64>,
    pub out_of_range: u64,
}

impl BinCounts {
    pub fn new(bins: &QuadratureBins) -> Self {
        Self { counts: vec![0; bins.len() * bins.len()], out_of_range: 0 }
    }

    pub fn from_records(records: &[SampleRecord], bins: &QuadratureBins) -> Self {
        let nb = bins.len();
        let mut out = Self::new(bins);
        for r in records {
            match (bins.index(r.x_a), bins.index(r.x_b)) {
                (Some(i), Some(j)) => out.counts[i * nb + j] += 1,
                _ => out.out_of_range += 1,
            }
        }
        out
    }

    pub fn add(&mut self, other: &BinCounts) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.out_of_range += other.out_of_range;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.out_of_range
    }

    /// Frequencies relative to every record, in range or not.
    pub fn frequencies<R: Real>(&self) -> Vec<R> {
        let total = self.total().max(1) as f64;
        self.counts.iter().map(|&c| lit(c as f64 / total)).collect()
    }
}

/// Raw-count histogram from pre-binned settings.
pub fn histogram_from_counts<R: Real>(
    settings: Vec<MeasurementSettings>,
    bins: &QuadratureBins,
    counts: &[BinCounts],
) -> BinnedHistogram<R> {
    BinnedHistogram {
        settings,
        bins: bins.clone(),
        kind: HistogramKind::Counts,
        values: counts.iter().map(|c| c.counts.iter().map(|&n| lit(n as f64)).collect()).collect(),
        out_of_range: counts.iter().map(|c| lit(c.out_of_range as f64)).collect(),
        clamp_fraction: 0.0,
        degenerate: false,
    }
}

/// Raw counts, one batch per setting.
pub fn count_histogram<R: Real>(batches: &[SampleBatch], bins: &QuadratureBins) -> BinnedHistogram<R> {
    let counts: Vec<BinCounts> = batches.par_iter().map(|b| BinCounts::from_records(&b.records, bins)).collect();
    histogram_from_counts(batches.iter().map(|b| b.meta.settings).collect(), bins, &counts)
}

/// Apply the single-photon estimator bin by bin to per-intensity
/// frequencies `gains[setting][intensity][bin]` (vacuum first), clamp
/// negatives to zero and renormalize each setting to unit mass.
pub fn decoy_correct_frequencies<R: Real>(
    settings: Vec<MeasurementSettings>,
    bins: &QuadratureBins,
    gains: &[Vec<Vec<R>>],
    set: &DecoyIntensitySet<R>,
) -> Result<BinnedHistogram<R>, TomographyError> {
    let w = set.weights();
    let nbins = bins.len() * bins.len();
    let mut values = Vec::with_capacity(gains.len());
    let mut clamped = 0usize;
    let mut degenerate = false;
    for (s, per_intensity) in gains.iter().enumerate() {
        if per_intensity.len() != set.len() + 1 {
            return Err(TomographyError::MissingIntensity { setting: s, expected: set.len() + 1, found: per_intensity.len() });
        }
        if per_intensity.iter().any(|g| g.len() != nbins) {
            return Err(TomographyError::Incompatible("bin count"));
        }
        let mut row: Vec<R> = (0..nbins)
            .map(|k| {
                let q: Vec<R> = per_intensity[1..].iter().map(|g| g[k]).collect();
                w.apply(per_intensity[0][k], &q)
            })
            .collect();
        for v in &mut row {
            if *v < R::zero() {
                *v = R::zero();
                clamped += 1;
            }
        }
        let mass = row.iter().fold(R::zero(), |a, &v| a + v);
        // a mass indistinguishable from cancellation noise is no signal
        if mass > lit(1e-12) {
            for v in &mut row {
                *v /= mass;
            }
        } else {
            degenerate = true;
        }
        values.push(row);
    }
    Ok(BinnedHistogram {
        out_of_range: vec![R::zero(); values.len()],
        settings,
        bins: bins.clone(),
        kind: HistogramKind::SinglePhoton,
        values,
        clamp_fraction: if gains.is_empty() { 0.0 } else { clamped as f64 / (gains.len() * nbins) as f64 },
        degenerate,
    })
}

/// Decoy-corrected histogram from `batches[setting] = [vacuum, μ₁, …, μ_L]`.
/// Frequencies are relative to every record of a batch, in range or not.
pub fn decoy_corrected_histogram<R: Real>(
    batches: &[Vec<SampleBatch>],
    set: &DecoyIntensitySet<R>,
    bins: &QuadratureBins,
) -> Result<BinnedHistogram<R>, TomographyError> {
    let mut settings = Vec::with_capacity(batches.len());
    for (s, per) in batches.iter().enumerate() {
        let first = per.first().ok_or(TomographyError::MissingIntensity { setting: s, expected: set.len() + 1, found: 0 })?;
        settings.push(first.meta.settings);
        if let Some(j) = per.iter().position(|b| b.is_empty()) {
            return Err(TomographyError::MissingIntensity { setting: s, expected: set.len() + 1, found: j });
        }
    }
    let gains: Vec<Vec<Vec<R>>> = batches
        .par_iter()
        .map(|per| per.iter().map(|b| BinCounts::from_records(&b.records, bins).frequencies()).collect())
        .collect();
    decoy_correct_frequencies(settings, bins, &gains, set)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    pub cutoff: usize,
    pub max_iterations: usize,
    /// Stop once the log-likelihood gains less than this in one iteration.
    pub tolerance: f64,
    pub bin_width: f64,
    /// Bins cover `[-bin_range, bin_range]` in both arms.
    pub bin_range: f64,
    /// Average every element over a common shift of both LO phases, which
    /// restricts the estimate to states diagonal in total photon number.
    /// Appropriate whenever the source phase is randomized, so that only
    /// `φ_a − φ_b` is meaningful.
    pub phase_averaged: bool,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self { cutoff: 10, max_iterations: 20_000, tolerance: 1e-10, bin_width: 0.2, bin_range: 5.0, phase_averaged: true }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<(), TomographyError> {
        if self.cutoff < 1 || self.cutoff > MAX_PHOTON_NUMBER {
            return Err(TomographyError::BadCutoff { found: self.cutoff, max: MAX_PHOTON_NUMBER });
        }
        if !(self.tolerance > 0.0) {
            return Err(TomographyError::BadTolerance);
        }
        self.bins().map(|_| ())
    }

    pub fn bins(&self) -> Result<QuadratureBins, TomographyError> {
        QuadratureBins::uniform(self.bin_range, self.bin_width)
    }
}

#[derive(Clone, Debug)]
pub struct TomographyResult<R: Real> {
    pub rho: TruncatedOperator<R>,
    /// Log-likelihood of the start point followed by every accepted iterate.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Against `(|01⟩ + |10⟩)/√2`.
    pub fidelity: R,
    pub multiphoton_mass: R,
}

fn hermitize<R: Real>(m: &DMatrix<C<R>>) -> DMatrix<C<R>> {
    (m + m.adjoint()) * Complex::new(lit::<R>(0.5), R::zero())
}

fn normalize<R: Real>(m: DMatrix<C<R>>) -> DMatrix<C<R>> {
    let tr = m.trace().re;
    hermitize(&m) * Complex::new(R::one() / tr, R::zero())
}

struct Likelihood<'a, R: Real> {
    povm: &'a FactorizedPovm<R>,
    freqs: Vec<(Vec<R>, R)>,
    phase_averaged: bool,
}

/// Zero every entry between different total photon numbers.
fn number_block_diagonal<R: Real>(m: &mut DMatrix<C<R>>, cutoff: usize) {
    let d = cutoff + 1;
    let total = |i: usize| i / d + i % d;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if total(i) != total(j) {
                m[(i, j)] = Complex::new(R::zero(), R::zero());
            }
        }
    }
}

/// Log-likelihood and, on request, `R(ρ)`.
type Evaluation<R> = (f64, Option<DMatrix<C<R>>>);

impl<R: Real> Likelihood<'_, R> {
    /// Log-likelihood and the `R(ρ)` operator, averaged over settings.
    fn evaluate(&self, rho: &DMatrix<C<R>>, with_r: bool) -> Result<Evaluation<R>, TomographyError> {
        let per: Vec<Result<Evaluation<R>, TomographyError>> = (0..self.freqs.len())
            .into_par_iter()
            .map(|s| {
                let (f, f_out) = &self.freqs[s];
                let (p, p_out) = self.povm.probabilities(s, rho);
                let mut ll = 0.0;
                let mut w = vec![R::zero(); p.len()];
                for (k, (&fk, &pk)) in f.iter().zip(&p).enumerate() {
                    if fk > R::zero() {
                        if !(pk > R::zero()) {
                            return Err(TomographyError::ZeroProbability);
                        }
                        ll += to_f64(fk) * to_f64(pk).ln();
                        w[k] = fk / pk;
                    }
                }
                let mut w_out = R::zero();
                if *f_out > R::zero() {
                    if !(p_out > R::zero()) {
                        return Err(TomographyError::ZeroProbability);
                    }
                    ll += to_f64(*f_out) * to_f64(p_out).ln();
                    w_out = *f_out / p_out;
                }
                Ok((ll, with_r.then(|| self.povm.weighted_sum(s, &w, w_out))))
            })
            .collect();
        let scale = Complex::new(R::one() / lit::<R>(self.freqs.len() as f64), R::zero());
        let mut ll = 0.0;
        let mut r: Option<DMatrix<C<R>>> = None;
        for item in per {
            let (l, rs) = item?;
            ll += l;
            if let Some(rs) = rs {
                r = Some(match r {
                    Some(acc) => acc + rs,
                    None => rs,
                });
            }
        }
        let mut r = r.map(|m| m * scale);
        if self.phase_averaged {
            if let Some(m) = r.as_mut() {
                number_block_diagonal(m, self.povm.cutoff);
            }
        }
        Ok((ll, r))
    }
}

/// Smallest dilution step tried before the iterate is declared stationary.
const MIN_DILUTION: f64 = 1e-12;

/// RρR fixed-point reconstruction from the maximally mixed start.
///
/// When the plain step `RρR` would lower the likelihood the diluted step
/// `(I + εR) ρ (I + εR)` is used instead, halving `ε` until the likelihood
/// does not decrease.
pub fn mle_reconstruct<R: Real>(
    hist: &BinnedHistogram<R>,
    povm: &FactorizedPovm<R>,
    config: &MleConfig,
) -> Result<TomographyResult<R>, TomographyError> {
    config.validate()?;
    if hist.bins != povm.bins {
        return Err(TomographyError::Incompatible("bins"));
    }
    if hist.settings != povm.settings {
        return Err(TomographyError::Incompatible("settings"));
    }
    if config.cutoff != povm.cutoff {
        return Err(TomographyError::Incompatible("cutoff"));
    }
    let cutoff = povm.cutoff;
    let lk = Likelihood { povm, freqs: hist.frequencies()?, phase_averaged: config.phase_averaged };
    let d = (cutoff + 1) * (cutoff + 1);
    let identity = DMatrix::<C<R>>::identity(d, d);
    let mut rho = TruncatedOperator::<R>::maximally_mixed(cutoff, Modes::Two).into_matrix();
    let (mut ll, mut r) = lk.evaluate(&rho, config.max_iterations > 0)?;
    let mut trace = vec![ll];
    let mut converged = config.max_iterations == 0;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        let rm = r.take().expect("R requested");
        let mut candidate = normalize(&rm * &rho * &rm);
        let mut eval = lk.evaluate(&candidate, true);
        let mut eps = 1.0;
        while !matches!(&eval, Ok((l, _)) if *l >= ll) {
            if eps < MIN_DILUTION {
                break;
            }
            let step = &identity + &rm * Complex::new(lit::<R>(eps), R::zero());
            candidate = normalize(&step * &rho * &step);
            eval = lk.evaluate(&candidate, true);
            eps *= 0.5;
        }
        let (new_ll, new_r) = match eval {
            Ok((l, nr)) if l >= ll => (l, nr),
            // no ascent direction left at this precision
            _ => {
                converged = true;
                r = Some(rm);
                break;
            }
        };
        iterations += 1;
        let gain = new_ll - ll;
        rho = candidate;
        ll = new_ll;
        r = new_r;
        trace.push(ll);
        if gain < config.tolerance {
            converged = true;
            break;
        }
    }
    let _ = r;
    let rho = TruncatedOperator::from_matrix(cutoff, Modes::Two, rho)?;
    let bell = TwoModeFockState::<R>::single_photon_bell(cutoff);
    let result = TomographyResult {
        fidelity: fidelity(&rho, &bell)?,
        multiphoton_mass: multiphoton_mass(&rho),
        rho,
        log_likelihood: trace,
        iterations,
        converged,
    };
    if !converged {
        let last = result.log_likelihood.iter().rev().take(10).rev().copied().collect();
        return Err(TomographyError::NotConverged { iterations, last, partial: Box::new(result.into_f64()) });
    }
    Ok(result)
}

impl<R: Real> TomographyResult<R> {
    fn into_f64(self) -> TomographyResult<f64> {
        let m = self.rho.matrix().map(|z| Complex::new(to_f64(z.re), to_f64(z.im)));
        TomographyResult {
            rho: TruncatedOperator::from_matrix(self.rho.cutoff(), self.rho.modes(), m).expect("same shape"),
            log_likelihood: self.log_likelihood,
            iterations: self.iterations,
            converged: self.converged,
            fidelity: to_f64(self.fidelity),
            multiphoton_mass: to_f64(self.multiphoton_mass),
        }
    }
}

/// `⟨Ψ|ρ|Ψ⟩`, clamped to `[0, 1]` against round-off.
pub fn fidelity<R: Real>(rho: &TruncatedOperator<R>, target: &TwoModeFockState<R>) -> Result<R, TomographyError> {
    if rho.modes() != Modes::Two || rho.cutoff() != target.cutoff() {
        return Err(FockError::DimensionMismatch { expected: rho.dim(), found: target.amplitudes().len() }.into());
    }
    let psi = target.amplitudes();
    let m = rho.matrix();
    let mut acc = Complex::new(R::zero(), R::zero());
    for i in 0..psi.len() {
        for j in 0..psi.len() {
            acc += psi[i].conj() * m[(i, j)] * psi[j];
        }
    }
    Ok(acc.re.max(R::zero()).min(R::one()))
}

/// Diagonal mass on basis states with more than two photons in total.
pub fn multiphoton_mass<R: Real>(rho: &TruncatedOperator<R>) -> R {
    let d = rho.cutoff() + 1;
    let m = rho.matrix();
    (0..rho.dim())
        .filter(|&i| match rho.modes() {
            Modes::One => i > 2,
            Modes::Two => i / d + i % d > 2,
        })
        .fold(R::zero(), |a, i| a + m[(i, i)].re)
}

/// Text form: `dimension=D`, then one row per line of `re,im` pairs.
pub fn format_density_matrix<R: Real>(rho: &TruncatedOperator<R>) -> String {
    let m = rho.matrix();
    let mut s = format!("dimension={}\n", rho.dim());
    for i in 0..m.nrows() {
        let row: Vec<String> =
            (0..m.ncols()).map(|j| format!("{:.16e},{:.16e}", to_f64(m[(i, j)].re), to_f64(m[(i, j)].im))).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

pub fn write_density_matrix<R: Real>(path: &Path, rho: &TruncatedOperator<R>) -> Result<(), TomographyError> {
    std::fs::write(path, format_density_matrix(rho))
        .map_err(|e| TomographyError::Io { path: path.into(), message: e.to_string() })
}

/// Inverse of [`format_density_matrix`] for a two-mode operator.
pub fn parse_density_matrix(text: &str) -> Result<TruncatedOperator<f64>, String> {
    let mut lines = text.lines();
    let dim: usize = lines
        .next()
        .and_then(|h| h.strip_prefix("dimension="))
        .and_then(|d| d.trim().parse().ok())
        .ok_or("missing dimension header")?;
    let cutoff = (dim as f64).sqrt().round() as usize - 1;
    if (cutoff + 1) * (cutoff + 1) != dim {
        return Err(format!("dimension {dim} is not a two-mode square"));
    }
    let mut m = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let line = lines.next().ok_or(format!("missing row {i}"))?;
        let v: Vec<f64> =
            line.split(',').map(|x| x.parse::<f64>()).collect::<Result<_, _>>().map_err(|e| format!("row {i}: {e}"))?;
        if v.len() != 2 * dim {
            return Err(format!("row {i}: expected {} numbers, found {}", 2 * dim, v.len()));
        }
        for j in 0..dim {
            m[(i, j)] = Complex::new(v[2 * j], v[2 * j + 1]);
        }
    }
    TruncatedOperator::from_matrix(cutoff, Modes::Two, m).map_err(|e| e.to_string())
}

/// The tomography settings: `φ_a = dθ`, `φ_b = 0`, `dθ = −π, −3π/4, …, 3π/4`.
pub fn phase_grid_settings() -> Vec<MeasurementSettings> {
    (0..8)
        .map(|k| MeasurementSettings::with_phase_difference(-std::f64::consts::PI + k as f64 * std::f64::consts::FRAC_PI_4))
        .collect()
}
