//! Threshold binning, bounded correlations and the CHSH combination.
//!
//! Outcome 0 means `x < −T`, outcome 1 means `x > T`; a record is kept only
//! when both arms clear the threshold. Coincidence probabilities are taken
//! relative to every record of the batch, discarded ones included.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::decoy::{bound_interval, bound_statistic, BoundedEstimate, DecoyError, DecoyIntensitySet, StatisticKind};
use crate::fock::quadrature::GaussLegendre;
use crate::homodyne::{HomodyneError, MeasurementSettings, SampleRecord};
use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Error)]
pub enum ChshError {
    #[error("threshold must be non-negative, got {0}")]
    NegativeThreshold(f64),
    #[error("no coincidences survive the threshold")]
    NoSurvivors,
    #[error("lower bound of the coincidence total is {0:.3e}; correlation bound undefined")]
    NonPositiveDenominator(f64),
    #[error("2-D quadrature did not converge: {0:.3e} between rule orders")]
    QuadratureNotConverged(f64),
    #[error("expected {expected} batches per setting, got {found}")]
    BatchCount { expected: usize, found: usize },
    #[error("threshold {0} is not on the binning grid")]
    ThresholdOffGrid(f64),
    #[error("cannot merge exact and grid-binned batches")]
    IncompatibleBatches,
    #[error(transparent)]
    Decoy(#[from] DecoyError),
    #[error(transparent)]
    Homodyne(#[from] HomodyneError),
}

/// Post-selection threshold in shot-noise units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdBinning {
    t: f64,
}

impl ThresholdBinning {
    pub fn new(t: f64) -> Result<Self, ChshError> {
        if !(t >= 0.0) {
            return Err(ChshError::NegativeThreshold(t));
        }
        Ok(Self { t })
    }

    pub fn threshold(&self) -> f64 {
        self.t
    }

    /// `Some(0)`, `Some(1)` or `None` (discarded).
    pub fn outcome(&self, x: f64) -> Option<u8> {
        if x < -self.t {
            Some(0)
        } else if x > self.t {
            Some(1)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CoincidenceCounts {
    pub n00: u64,
    pub n01: u64,
    pub n10: u64,
    pub n11: u64,
    pub n_discarded: u64,
    pub total: u64,
}

impl CoincidenceCounts {
    pub fn survivors(&self) -> u64 {
        self.n00 + self.n01 + self.n10 + self.n11
    }

    /// `[n00, n01, n10, n11]`.
    pub fn as_array(&self) -> [u64; 4] {
        [self.n00, self.n01, self.n10, self.n11]
    }

    fn from_classes(c: [u64; 4], total: u64) -> Self {
        let kept: u64 = c.iter().sum();
        Self { n00: c[0], n01: c[1], n10: c[2], n11: c[3], n_discarded: total - kept, total }
    }
}

/// Direct application of the binning rule.
pub fn bin_coincidences(records: &[SampleRecord], binning: ThresholdBinning) -> CoincidenceCounts {
    let mut c = [0u64; 4];
    for r in records {
        if let (Some(a), Some(b)) = (binning.outcome(r.x_a), binning.outcome(r.x_b)) {
            c[(2 * a + b) as usize] += 1;
        }
    }
    CoincidenceCounts::from_classes(c, records.len() as u64)
}

/// A batch reduced for fast binning at many thresholds.
///
/// A record lands in the quadrant given by the signs of its outcomes and
/// survives threshold `T` exactly when `min(|x_a|, |x_b|) > T`. The exact
/// form keeps every sorted minimum; the grid form only keeps counts per
/// grid cell and answers thresholds on that grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedBatch {
    total: u64,
    repr: Binned,
}

#[derive(Clone, Debug, PartialEq)]
enum Binned {
    Exact([Vec<f64>; 4]),
    /// `cells[c][p]`: records of class `c` with exactly `p` grid points below their minimum.
    Grid {
        grid: Vec<f64>,
        cells: [Vec<u64>; 4],
    },
}

fn quadrant(r: &SampleRecord) -> (usize, f64) {
    let a = usize::from(r.x_a > 0.0);
    let b = usize::from(r.x_b > 0.0);
    (2 * a + b, r.x_a.abs().min(r.x_b.abs()))
}

impl BinnedBatch {
    pub fn from_records(records: &[SampleRecord]) -> Self {
        let mut classes: [Vec<f64>; 4] = Default::default();
        for r in records {
            let (c, m) = quadrant(r);
            classes[c].push(m);
        }
        for c in &mut classes {
            c.sort_by(|x, y| x.partial_cmp(y).expect("finite quadratures"));
        }
        Self { total: records.len() as u64, repr: Binned::Exact(classes) }
    }

    /// Empty accumulator answering thresholds in `grid` only.
    pub fn on_grid(grid: &[f64]) -> Self {
        let mut grid = grid.to_vec();
        grid.sort_by(|x, y| x.partial_cmp(y).expect("finite thresholds"));
        grid.dedup();
        let cells = std::array::from_fn(|_| vec![0; grid.len() + 1]);
        Self { total: 0, repr: Binned::Grid { grid, cells } }
    }

    /// Add records to a grid accumulator, or rebuild an exact batch.
    pub fn accumulate(&mut self, records: &[SampleRecord]) {
        match &mut self.repr {
            Binned::Grid { grid, cells } => {
                for r in records {
                    let (c, m) = quadrant(r);
                    cells[c][grid.partition_point(|&g| g < m)] += 1;
                }
                self.total += records.len() as u64;
            }
            Binned::Exact(classes) => {
                for r in records {
                    let (c, m) = quadrant(r);
                    classes[c].push(m);
                }
                for c in classes.iter_mut() {
                    c.sort_by(|x, y| x.partial_cmp(y).expect("finite quadratures"));
                }
                self.total += records.len() as u64;
            }
        }
    }

    /// Sum two batches of the same form (and grid).
    pub fn merge(&mut self, other: &BinnedBatch) -> Result<(), ChshError> {
        match (&mut self.repr, &other.repr) {
            (Binned::Grid { grid, cells }, Binned::Grid { grid: g2, cells: c2 }) if grid == g2 => {
                for (a, b) in cells.iter_mut().zip(c2) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
            }
            (Binned::Exact(a), Binned::Exact(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    x.extend_from_slice(y);
                    x.sort_by(|p, q| p.partial_cmp(q).expect("finite quadratures"));
                }
            }
            _ => return Err(ChshError::IncompatibleBatches),
        }
        self.total += other.total;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self, binning: ThresholdBinning) -> Result<CoincidenceCounts, ChshError> {
        let t = binning.threshold();
        let mut out = [0u64; 4];
        match &self.repr {
            Binned::Exact(classes) => {
                for (slot, v) in out.iter_mut().zip(classes) {
                    *slot = (v.len() - v.partition_point(|&m| m <= t)) as u64;
                }
            }
            Binned::Grid { grid, cells } => {
                let k =
                    grid.iter().position(|&g| (g - t).abs() <= 1e-12 * g.abs().max(1.0)).ok_or(ChshError::ThresholdOffGrid(t))?;
                // survivors have more than k grid points below their minimum
                for (slot, c) in out.iter_mut().zip(cells) {
                    *slot = c[k + 1..].iter().sum();
                }
            }
        }
        Ok(CoincidenceCounts::from_classes(out, self.total))
    }
}

/// `(n00 + n11 − n01 − n10) / survivors`.
pub fn correlation(counts: &CoincidenceCounts) -> Result<f64, ChshError> {
    let m = counts.survivors();
    if m == 0 {
        return Err(ChshError::NoSurvivors);
    }
    Ok(((counts.n00 + counts.n11) as f64 - (counts.n01 + counts.n10) as f64) / m as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CorrelationBound<R> {
    pub e_est: R,
    pub e_lower: R,
    pub e_upper: R,
}

impl<R: Real> CorrelationBound<R> {
    pub fn exact(e: R) -> Self {
        Self { e_est: e, e_lower: e, e_upper: e }
    }
}

/// Interval ratio of the bounded coincidence probabilities, clamped to `[−1, 1]`.
///
/// With `N = P00 + P11 − P01 − P10` and `D = P00 + P11 + P01 + P10`, the
/// upper bound is `N⁺/D⁻` and the lower bound `N⁻/D⁺`, as long as the
/// numerator bound is non-negative. A negative numerator bound is divided by
/// the other end of `D`, so the interval always contains the point estimate.
pub fn correlation_bounds<R: Real>(
    p00: &BoundedEstimate<R>,
    p01: &BoundedEstimate<R>,
    p10: &BoundedEstimate<R>,
    p11: &BoundedEstimate<R>,
) -> Result<CorrelationBound<R>, ChshError> {
    let d_lo = p00.lower + p11.lower + p01.lower + p10.lower;
    let d_hi = p00.upper + p11.upper + p01.upper + p10.upper;
    let d_est = p00.estimate + p11.estimate + p01.estimate + p10.estimate;
    if !(d_lo > R::zero()) {
        return Err(ChshError::NonPositiveDenominator(to_f64(d_lo)));
    }
    let n_hi = p00.upper + p11.upper - p01.lower - p10.lower;
    let n_lo = p00.lower + p11.lower - p01.upper - p10.upper;
    let n_est = p00.estimate + p11.estimate - p01.estimate - p10.estimate;
    let upper = if n_hi >= R::zero() { n_hi / d_lo } else { n_hi / d_hi };
    let lower = if n_lo >= R::zero() { n_lo / d_hi } else { n_lo / d_lo };
    let clamp = |x: R| x.max(-R::one()).min(R::one());
    Ok(CorrelationBound { e_est: clamp(n_est / d_est), e_lower: clamp(lower), e_upper: clamp(upper) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChshResult<R> {
    #[serde(rename = "T")]
    pub t: R,
    pub s_est: R,
    pub s_lower: R,
    pub s_upper: R,
}

/// `S = E(a₀,b₀) + E(a₁,b₀) + E(a₀,b₁) − E(a₁,b₁)`; the last term enters
/// the upper bound through its lower bound and vice versa.
pub fn chsh_from_correlations<R: Real>(
    t: R,
    e00: &CorrelationBound<R>,
    e10: &CorrelationBound<R>,
    e01: &CorrelationBound<R>,
    e11: &CorrelationBound<R>,
) -> ChshResult<R> {
    ChshResult {
        t,
        s_est: e00.e_est + e10.e_est + e01.e_est - e11.e_est,
        s_upper: e00.e_upper + e10.e_upper + e01.e_upper - e11.e_lower,
        s_lower: e00.e_lower + e10.e_lower + e01.e_lower - e11.e_upper,
    }
}

const ORACLE_TOLERANCE: f64 = 1e-10;

/// Quadrant probabilities `[P00, P01, P10, P11]` of a single photon by 2-D
/// quadrature, converged between two rule orders.
pub fn ideal_single_photon_probabilities<R: Real>(dtheta: R, t: R) -> Result<[R; 4], ChshError> {
    if !(t >= R::zero()) {
        return Err(ChshError::NegativeThreshold(to_f64(t)));
    }
    let quadrants = |order: usize| -> Result<[R; 4], ChshError> {
        let rule = GaussLegendre::<R>::new(order);
        let inf: R = lit(f64::INFINITY);
        let neg = (-inf, -t);
        let pos = (t, inf);
        let mut out = [R::zero(); 4];
        for (i, (a, b)) in [(neg, neg), (neg, pos), (pos, neg), (pos, pos)].into_iter().enumerate() {
            out[i] = crate::homodyne::integrate_joint_pdf_with(&rule, 1, dtheta, a, b)?;
        }
        Ok(out)
    };
    let fine = quadrants(20)?;
    let coarse = quadrants(14)?;
    let drift = fine.iter().zip(&coarse).map(|(a, b)| to_f64((*a - *b).abs())).fold(0.0, f64::max);
    let tolerance = ORACLE_TOLERANCE.max(1e3 * to_f64(R::default_epsilon()));
    if drift > tolerance {
        return Err(ChshError::QuadratureNotConverged(drift));
    }
    Ok(fine)
}

/// Correlation of an ideal single photon split 50:50, binned at `t`.
pub fn ideal_single_photon_correlation<R: Real>(dtheta: R, t: R) -> Result<R, ChshError> {
    let [p00, p01, p10, p11] = ideal_single_photon_probabilities(dtheta, t)?;
    let d = p00 + p01 + p10 + p11;
    if !(d > R::zero()) {
        return Err(ChshError::NoSurvivors);
    }
    Ok((p00 + p11 - p01 - p10) / d)
}

/// `S(T)` of the ideal single photon at the fixed CHSH settings.
pub fn ideal_single_photon_chsh<R: Real>(t: R) -> Result<R, ChshError> {
    let e: Vec<R> = MeasurementSettings::chsh_set()
        .iter()
        .map(|s| ideal_single_photon_correlation(lit::<R>(s.dtheta()), t))
        .collect::<Result<_, _>>()?;
    Ok(e[0] + e[1] + e[2] - e[3])
}

/// Batches for one measurement setting: the vacuum batch first, then one per
/// decoy intensity in ascending order. Without decoys, a single batch of
/// direct data.
#[derive(Clone, Debug)]
pub struct SettingSeries {
    pub settings: MeasurementSettings,
    pub batches: Vec<BinnedBatch>,
}

/// Bounded correlation at one setting and threshold, with its delta-method
/// standard error and the summed counts behind it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CorrelationEstimate {
    pub bound: CorrelationBound<f64>,
    pub std_error: f64,
    pub coincidences: CoincidenceCounts,
}

/// Per-class estimators `P_c = Σ_j w_j Q_{c,j}`.
fn class_weights(series: &SettingSeries, decoys: Option<&DecoyIntensitySet<f64>>) -> Result<Vec<f64>, ChshError> {
    match decoys {
        None => {
            if series.batches.len() != 1 {
                return Err(ChshError::BatchCount { expected: 1, found: series.batches.len() });
            }
            Ok(vec![1.0])
        }
        Some(set) => {
            if series.batches.len() != set.len() + 1 {
                return Err(ChshError::BatchCount { expected: set.len() + 1, found: series.batches.len() });
            }
            let w = set.weights();
            Ok(std::iter::once(w.vacuum).chain(w.per_intensity).collect())
        }
    }
}

pub fn correlation_at(
    series: &SettingSeries,
    decoys: Option<&DecoyIntensitySet<f64>>,
    binning: ThresholdBinning,
) -> Result<CorrelationEstimate, ChshError> {
    let weights = class_weights(series, decoys)?;
    let counts: Vec<CoincidenceCounts> = series.batches.iter().map(|b| b.counts(binning)).collect::<Result<_, _>>()?;
    let mut summed = CoincidenceCounts::default();
    for c in &counts {
        summed.n00 += c.n00;
        summed.n01 += c.n01;
        summed.n10 += c.n10;
        summed.n11 += c.n11;
        summed.n_discarded += c.n_discarded;
        summed.total += c.total;
    }
    if summed.survivors() == 0 {
        return Err(ChshError::NoSurvivors);
    }
    let freq = |c: &CoincidenceCounts| c.as_array().map(|n| n as f64 / c.total as f64);
    let raw: Vec<f64> = (0..4).map(|k| weights.iter().zip(&counts).map(|(w, c)| w * freq(c)[k]).sum()).collect();
    let probs: Vec<BoundedEstimate<f64>> = match decoys {
        None => raw.iter().map(|&p| BoundedEstimate::exact(p)).collect(),
        Some(set) => {
            let delta = bound_interval(set)?;
            raw.iter().map(|&p| bound_statistic(p, delta, set, StatisticKind::Probability)).collect()
        }
    };
    let bound = correlation_bounds(&probs[0], &probs[1], &probs[2], &probs[3])?;

    // delta method over independent multinomial batches
    let d: f64 = raw.iter().sum();
    let n: f64 = raw[0] + raw[3] - raw[1] - raw[2];
    let e = n / d;
    let sign = [1.0, -1.0, -1.0, 1.0];
    let g: Vec<f64> = sign.iter().map(|s| (s - e) / d).collect();
    let mut var = 0.0;
    for (w, c) in weights.iter().zip(&counts) {
        let q = freq(c);
        let m1: f64 = (0..4).map(|k| g[k] * q[k]).sum();
        let m2: f64 = (0..4).map(|k| g[k] * g[k] * q[k]).sum();
        var += w * w * (m2 - m1 * m1) / c.total as f64;
    }
    Ok(CorrelationEstimate { bound, std_error: var.max(0.0).sqrt(), coincidences: summed })
}

/// CHSH value with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChshEstimate {
    pub result: ChshResult<f64>,
    pub std_error: f64,
}

/// One row of a threshold scan; `outcome` carries the reason when invalid.
#[derive(Debug)]
pub struct ScanPoint {
    pub t: f64,
    pub outcome: Result<ChshEstimate, ChshError>,
}

/// Full pipeline at every `T`: bin, estimate single-photon coincidence
/// probabilities, bound `E` per setting and assemble `S`. `series` is in
/// the order `(a₀,b₀), (a₁,b₀), (a₀,b₁), (a₁,b₁)`.
pub fn scan_threshold(series: &[SettingSeries; 4], decoys: Option<&DecoyIntensitySet<f64>>, t_grid: &[f64]) -> Vec<ScanPoint> {
    t_grid.par_iter().map(|&t| ScanPoint { t, outcome: chsh_at(series, decoys, t) }).collect()
}

pub fn chsh_at(series: &[SettingSeries; 4], decoys: Option<&DecoyIntensitySet<f64>>, t: f64) -> Result<ChshEstimate, ChshError> {
    let binning = ThresholdBinning::new(t)?;
    let e: Vec<CorrelationEstimate> = series.iter().map(|s| correlation_at(s, decoys, binning)).collect::<Result<_, _>>()?;
    let result = chsh_from_correlations(t, &e[0].bound, &e[1].bound, &e[2].bound, &e[3].bound);
    let std_error = e.iter().map(|c| c.std_error * c.std_error).sum::<f64>().sqrt();
    Ok(ChshEstimate { result, std_error })
}

/// One row of a correlation scan over phase differences.
#[derive(Debug)]
pub struct CorrelationPoint {
    pub dtheta: f64,
    pub outcome: Result<CorrelationEstimate, ChshError>,
}

pub fn scan_correlation(series: &[SettingSeries], decoys: Option<&DecoyIntensitySet<f64>>, t: f64) -> Vec<CorrelationPoint> {
    series
        .par_iter()
        .map(|s| CorrelationPoint {
            dtheta: s.settings.dtheta(),
            outcome: ThresholdBinning::new(t).and_then(|b| correlation_at(s, decoys, b)),
        })
        .collect()
}

/// Least-squares `E(dθ) ≈ A cos dθ + B sin dθ`; returns `(√(A²+B²), atan2(B, A))`.
pub fn fit_cosine(points: &[(f64, f64)]) -> (f64, f64) {
    let (mut cc, mut ss, mut cs, mut ec, mut es) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(d, e) in points {
        let (s, c) = d.sin_cos();
        cc += c * c;
        ss += s * s;
        cs += c * s;
        ec += e * c;
        es += e * s;
    }
    let det = cc * ss - cs * cs;
    let a = (ec * ss - es * cs) / det;
    let b = (es * cc - ec * cs) / det;
    (a.hypot(b), b.atan2(a))
}
