//! Decoy-state linear estimator for the single-photon component of a
//! measured statistic, with its parity-dependent rigorous bound.
//!
//! A gain is `Q_μ = Σ_n Y_n μⁿ e^{−μ}/n!`. With intensities
//! `0 = μ₀ < μ₁ < … < μ_L` the estimator
//!
//! ```text
//! Y₁ᴱ = μ₁⋯μ_L Σ_j μ_j⁻² (e^{μ_j} Q_{μ_j} − Q₀) / Π_{i≠j} (μ_i − μ_j)
//! ```
//!
//! cancels every yield `Y_2 … Y_L` exactly; the remainder has sign
//! `(−1)^{L+1}` and is at most `Δ_L` for yields in `[0, 1]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecoyError {
    #[error("at least one non-vacuum intensity is required")]
    Empty,
    #[error("intensities must be positive and finite, got {0}")]
    NonPositive(f64),
    #[error("intensities must be strictly increasing (duplicate or out of order at index {0})")]
    NotIncreasing(usize),
    #[error("expected {expected} gains (vacuum + {intensities} intensities), got {found}")]
    GainCount { expected: usize, found: usize, intensities: usize },
    #[error("bound interval evaluated to {0:.6e} < 0; estimator weights are inconsistent")]
    NegativeBoundInterval(f64),
}

/// Strictly increasing positive intensities `μ₁ < … < μ_L`; vacuum implicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DecoyIntensitySet<R: Real> {
    mus: Vec<R>,
}

impl<R: Real> TryFrom<Vec<f64>> for DecoyIntensitySet<R> {
    type Error = DecoyError;
    fn try_from(v: Vec<f64>) -> Result<Self, DecoyError> {
        Self::new(v.into_iter().map(lit).collect())
    }
}

impl<R: Real> From<DecoyIntensitySet<R>> for Vec<f64> {
    fn from(s: DecoyIntensitySet<R>) -> Self {
        s.mus.into_iter().map(to_f64).collect()
    }
}

impl<R: Real> DecoyIntensitySet<R> {
    /// Accepts the intensities in any order; they are sorted ascending.
    pub fn new(mut mus: Vec<R>) -> Result<Self, DecoyError> {
        if mus.is_empty() {
            return Err(DecoyError::Empty);
        }
        if let Some(&bad) = mus.iter().find(|m| !(**m > R::zero()) || !m.is_finite()) {
            return Err(DecoyError::NonPositive(to_f64(bad)));
        }
        mus.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        if let Some(i) = mus.windows(2).position(|w| w[0] >= w[1]) {
            return Err(DecoyError::NotIncreasing(i + 1));
        }
        Ok(Self { mus })
    }

    /// The three intensities of the reference experiment.
    pub fn reference_operating_point() -> Self {
        Self::new(vec![lit(0.0872), lit(0.2314), lit(0.9840)]).expect("valid constants")
    }

    /// `L`.
    pub fn len(&self) -> usize {
        self.mus.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn intensities(&self) -> &[R] {
        &self.mus
    }

    /// `true` when the point estimate is an upper bound (`L` odd).
    pub fn estimate_is_upper(&self) -> bool {
        self.len() % 2 == 1
    }

    fn product(&self) -> R {
        self.mus.iter().fold(R::one(), |a, &b| a * b)
    }

    /// `Π_{i≠j} (μ_i − μ_j)`.
    fn denominator(&self, j: usize) -> R {
        let mj = self.mus[j];
        self.mus.iter().enumerate().filter(|&(i, _)| i != j).fold(R::one(), |a, (_, &mi)| a * (mi - mj))
    }

    /// Coefficients `(w₀, w₁…w_L)` with `Y₁ᴱ = w₀ Q₀ + Σ_j w_j Q_{μ_j}`.
    pub fn weights(&self) -> EstimatorWeights<R> {
        let p = self.product();
        let mut per_intensity = Vec::with_capacity(self.len());
        let mut vacuum = R::zero();
        for (j, &mj) in self.mus.iter().enumerate() {
            let c = p / (mj * mj * self.denominator(j));
            per_intensity.push(c * mj.exp());
            vacuum -= c;
        }
        EstimatorWeights { vacuum, per_intensity }
    }
}

/// Linear form of the estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorWeights<R> {
    pub vacuum: R,
    pub per_intensity: Vec<R>,
}

impl<R: Real> EstimatorWeights<R> {
    pub fn apply(&self, vacuum: R, gains: &[R]) -> R {
        debug_assert_eq!(gains.len(), self.per_intensity.len());
        self.per_intensity.iter().zip(gains).fold(self.vacuum * vacuum, |acc, (&w, &q)| acc + w * q)
    }
}

/// Measured statistic at the vacuum and every decoy intensity.
#[derive(Clone, Debug, PartialEq)]
pub struct GainVector<R> {
    /// `Q_{μ₀}`, always measured.
    pub vacuum: R,
    /// `Q_{μ_j}`, ordered like the intensity set.
    pub gains: Vec<R>,
    /// Sample counts behind each entry, vacuum first; empty for synthetic gains.
    pub counts: Vec<u64>,
}

impl<R: Real> GainVector<R> {
    pub fn new(vacuum: R, gains: Vec<R>) -> Self {
        Self { vacuum, gains, counts: Vec::new() }
    }

    pub fn with_counts(mut self, counts: Vec<u64>) -> Self {
        self.counts = counts;
        self
    }

    /// Exact gains for a yield sequence: `Q_μ = Σ_{n<N} Y_n μⁿ e^{−μ}/n!`.
    pub fn synthesize(yields: &[R], set: &DecoyIntensitySet<R>) -> Self {
        let gain = |mu: R| {
            let mut term = (-mu).exp();
            let mut acc = R::zero();
            for (n, &y) in yields.iter().enumerate() {
                if n > 0 {
                    term = term * mu / lit(n as f64);
                }
                acc += y * term;
            }
            acc
        };
        Self::new(yields.first().copied().unwrap_or(R::zero()), set.intensities().iter().map(|&m| gain(m)).collect())
    }
}

/// `Y₁ᴱ` from measured gains.
pub fn estimate_single_photon_statistic<R: Real>(gains: &GainVector<R>, set: &DecoyIntensitySet<R>) -> Result<R, DecoyError> {
    if gains.gains.len() != set.len() {
        return Err(DecoyError::GainCount { expected: set.len() + 1, found: gains.gains.len() + 1, intensities: set.len() });
    }
    let p = set.product();
    let mut acc = R::zero();
    for (j, (&mj, &q)) in set.intensities().iter().zip(&gains.gains).enumerate() {
        acc += (mj.exp() * q - gains.vacuum) / (mj * mj * set.denominator(j));
    }
    Ok(p * acc)
}

/// `Δ_L = (−1)^{L+1} (μ₁⋯μ_L Σ_j μ_j⁻² (e^{μ_j} − 1) / Π_{i≠j}(μ_i − μ_j) − 1)`.
///
/// This is the estimator evaluated on the saturating yields `Y₁ = 0`,
/// `Y_{n≥2} = 1`, so it is non-negative for every valid set.
pub fn bound_interval<R: Real>(set: &DecoyIntensitySet<R>) -> Result<R, DecoyError> {
    let p = set.product();
    let mut acc = R::zero();
    for (j, &mj) in set.intensities().iter().enumerate() {
        acc += mj.exp_m1() / (mj * mj * set.denominator(j));
    }
    let signed = p * acc - R::one();
    let delta = if set.estimate_is_upper() { signed } else { -signed };
    // cancellation in `p·acc − 1` leaves round-off of a few ulps
    let slack: R = R::default_epsilon() * lit(64.0);
    if delta < -slack {
        return Err(DecoyError::NegativeBoundInterval(to_f64(delta)));
    }
    Ok(delta.max(R::zero()))
}

/// Whether a statistic is a probability (bounds clamped to `[0, 1]`) or a density.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StatisticKind {
    Probability,
    Density,
}

/// Point estimate with its rigorous interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundedEstimate<R> {
    /// Unclamped linear estimate, kept for diagnostics.
    pub raw: R,
    /// Estimate clamped into `[lower, upper]`.
    pub estimate: R,
    pub lower: R,
    pub upper: R,
}

impl<R: Real> BoundedEstimate<R> {
    /// Zero-width interval.
    pub fn exact(value: R) -> Self {
        Self { raw: value, estimate: value, lower: value, upper: value }
    }

    pub fn width(&self) -> R {
        self.upper - self.lower
    }
}

/// Parity rule: `L` odd → `[Y₁ᴱ − Δ, Y₁ᴱ]`, `L` even → `[Y₁ᴱ, Y₁ᴱ + Δ]`.
pub fn bound_statistic<R: Real>(estimate: R, delta: R, set: &DecoyIntensitySet<R>, kind: StatisticKind) -> BoundedEstimate<R> {
    let (mut lower, mut upper) =
        if set.estimate_is_upper() { (estimate - delta, estimate) } else { (estimate, estimate + delta) };
    if kind == StatisticKind::Probability {
        lower = lower.max(R::zero()).min(R::one());
        upper = upper.max(R::zero()).min(R::one());
    } else {
        lower = lower.max(R::zero());
        upper = upper.max(R::zero());
    }
    BoundedEstimate { raw: estimate, estimate: estimate.max(lower).min(upper), lower, upper }
}

/// Estimate and bound in one step.
pub fn bounded_single_photon_statistic<R: Real>(
    gains: &GainVector<R>,
    set: &DecoyIntensitySet<R>,
    kind: StatisticKind,
) -> Result<BoundedEstimate<R>, DecoyError> {
    let est = estimate_single_photon_statistic(gains, set)?;
    Ok(bound_statistic(est, bound_interval(set)?, set, kind))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> DecoyIntensitySet<f64> {
        DecoyIntensitySet::reference_operating_point()
    }

    #[test]
    fn rejects_bad_sets() {
        assert_eq!(DecoyIntensitySet::<f64>::new(vec![]), Err(DecoyError::Empty));
        assert!(matches!(DecoyIntensitySet::new(vec![0.1, 0.1]), Err(DecoyError::NotIncreasing(1))));
        assert!(matches!(DecoyIntensitySet::new(vec![0.0, 0.1]), Err(DecoyError::NonPositive(_))));
        assert!(DecoyIntensitySet::new(vec![0.9840, 0.0872, 0.2314]).is_ok());
    }

    #[test]
    fn single_intensity_reduces_to_one_term() {
        let set = DecoyIntensitySet::new(vec![0.3]).unwrap();
        let g = GainVector::new(0.1, vec![0.25]);
        let want = (0.3f64.exp() * 0.25 - 0.1) / 0.3;
        assert!((estimate_single_photon_statistic(&g, &set).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn single_intensity_interval() {
        let set = DecoyIntensitySet::<f64>::new(vec![0.1]).unwrap();
        let d = bound_interval(&set).unwrap();
        // (e^0.1 − 1)/0.1 − 1, 40-digit reference
        assert!((d - 0.051_709_180_756_476_25).abs() < 1e-15);
        let mut sat = vec![1.0; 80];
        sat[0] = 0.0;
        sat[1] = 0.0;
        let est = estimate_single_photon_statistic(&GainVector::synthesize(&sat, &set), &set).unwrap();
        assert!((est - d).abs() < 1e-14);
        let tiny = DecoyIntensitySet::new(vec![1e-6]).unwrap();
        assert!(bound_interval(&tiny).unwrap() < 1e-6);
    }

    #[test]
    fn reference_interval_regression() {
        let d = bound_interval(&reference()).unwrap();
        assert!((d - 1.086_521_830_497_795e-3).abs() < 1e-14, "{d:e}");
        let mut sat = vec![1.0; 60];
        sat[0] = 0.0;
        sat[1] = 0.0;
        let est = estimate_single_photon_statistic(&GainVector::synthesize(&sat, &reference()), &reference()).unwrap();
        assert!((est - d).abs() < 1e-13);
    }

    #[test]
    fn geometric_yields() {
        let y: Vec<f64> = (0..31).map(|n| 0.8f64.powi(n)).collect();
        let est = estimate_single_photon_statistic(&GainVector::synthesize(&y, &reference()), &reference()).unwrap();
        // 40-digit reference: 0.80042058661048465949
        assert!((est - 0.800_420_586_610_484_7).abs() < 1e-12);
        assert!(est >= 0.8 && est - 0.8 <= bound_interval(&reference()).unwrap());
    }

    #[test]
    fn constant_yields() {
        let y = vec![0.37f64; 40];
        let set = reference();
        let est = estimate_single_photon_statistic(&GainVector::synthesize(&y, &set), &set).unwrap();
        assert!((est - 0.37).abs() <= bound_interval(&set).unwrap());
    }

    #[test]
    fn weights_match_direct_formula() {
        let set = reference();
        let g = GainVector::new(0.013, vec![0.02, 0.05, 0.16]);
        let direct = estimate_single_photon_statistic(&g, &set).unwrap();
        let via = set.weights().apply(g.vacuum, &g.gains);
        assert!((direct - via).abs() < 1e-14);
    }

    #[test]
    fn parity_rule_and_clamp() {
        let odd = reference();
        let even = DecoyIntensitySet::<f64>::new(vec![0.1, 0.5]).unwrap();
        let b = bound_statistic(0.5, 0.02, &odd, StatisticKind::Probability);
        assert!((b.lower - 0.48).abs() < 1e-15 && b.upper == 0.5);
        let b = bound_statistic(0.5, 0.02, &even, StatisticKind::Probability);
        assert!(b.lower == 0.5 && (b.upper - 0.52).abs() < 1e-15);
        let b = bound_statistic(0.005, 0.02, &odd, StatisticKind::Probability);
        assert_eq!((b.lower, b.upper), (0.0, 0.005));
        let b = bound_statistic(-0.01, 0.02, &odd, StatisticKind::Probability);
        assert_eq!((b.lower, b.estimate, b.upper, b.raw), (0.0, 0.0, 0.0, -0.01));
    }

    #[test]
    fn gain_count_checked() {
        let g = GainVector::new(0.1, vec![0.2, 0.3]);
        assert!(matches!(estimate_single_photon_statistic(&g, &reference()), Err(DecoyError::GainCount { .. })));
    }

    #[test]
    fn serde_round_trip_validates() {
        let s: DecoyIntensitySet<f64> = serde_json::from_str("[0.2314, 0.0872, 0.984]").unwrap();
        assert_eq!(s, reference());
        assert!(serde_json::from_str::<DecoyIntensitySet<f64>>("[0.1, 0.1]").is_err());
    }

    fn intensity_set() -> impl Strategy<Value = DecoyIntensitySet<f64>> {
        prop::collection::vec(0.01f64..1.5, 1..=4).prop_filter_map("distinct", |mut v| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.windows(2).all(|w| w[1] - w[0] > 0.05).then(|| DecoyIntensitySet::new(v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn exact_without_multiphoton(set in intensity_set(), y0 in 0.0f64..1.0, y1 in 0.0f64..1.0) {
            let est = estimate_single_photon_statistic(&GainVector::synthesize(&[y0, y1], &set), &set).unwrap();
            prop_assert!((est - y1).abs() < 1e-12, "{} vs {}", est, y1);
        }

        #[test]
        fn linear_in_gains(a in -2.0f64..2.0, b in -2.0f64..2.0,
                           q1 in prop::collection::vec(0.0f64..1.0, 4), q2 in prop::collection::vec(0.0f64..1.0, 4)) {
            let set = reference();
            let g1 = GainVector::new(q1[0], q1[1..].to_vec());
            let g2 = GainVector::new(q2[0], q2[1..].to_vec());
            let mix = GainVector::new(a * q1[0] + b * q2[0], (1..4).map(|i| a * q1[i] + b * q2[i]).collect());
            let lhs = estimate_single_photon_statistic(&mix, &set).unwrap();
            let rhs = a * estimate_single_photon_statistic(&g1, &set).unwrap() + b * estimate_single_photon_statistic(&g2, &set).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-11);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn containment_and_parity(set in intensity_set(), yields in prop::collection::vec(0.0f64..=1.0, 41)) {
            let g = GainVector::synthesize(&yields, &set);
            let est = estimate_single_photon_statistic(&g, &set).unwrap();
            let delta = bound_interval(&set).unwrap();
            let b = bound_statistic(est, delta, &set, StatisticKind::Density);
            let y1 = yields[1];
            let slack = 1e-10;
            prop_assert!(b.lower - slack <= y1 && y1 <= b.upper + slack);
            if set.estimate_is_upper() {
                prop_assert!(est - y1 >= -slack);
            } else {
                prop_assert!(est - y1 <= slack);
            }
        }
    }
}
