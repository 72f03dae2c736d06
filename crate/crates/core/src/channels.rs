//! Sources and channels: phase-randomized coherent states, the 50:50
//! splitter acting on Fock states, and the loss-equivalent reduction of
//! detector inefficiency and electronic noise.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fock::MAX_PHOTON_NUMBER;
use crate::scalar::{from_usize, lit, to_f64, Real, C};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("intensity must be non-negative and finite, got {0}")]
    BadIntensity(f64),
    #[error("transmittance must lie in [0, 1], got {0}")]
    BadTransmittance(f64),
    #[error("photodiode transmittance must lie in (0, 1], got {0}")]
    BadPhotodiodeEfficiency(f64),
    #[error("electronic noise variance must be non-negative and finite, got {0}")]
    BadElectronicNoise(f64),
    #[error("total transmittance is zero; intensity cannot be compensated")]
    ZeroTransmittance,
    #[error("photon number {n} exceeds cutoff {cutoff}")]
    PhotonNumberTooLarge { n: usize, cutoff: usize },
}

/// Poisson photon-number distribution truncated at a cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonWeights<R> {
    pub weights: Vec<R>,
    /// Probability of more than `cutoff` photons.
    pub tail: R,
}

/// `μⁿ e^{−μ} / n!` for `n ≤ cutoff`, plus the mass above the cutoff.
///
/// The tail is summed directly rather than formed as `1 − Σ weights`, which
/// would lose all significant digits once it drops below ~1e-8.
pub fn poisson_weights<R: Real>(mu: R, cutoff: usize) -> Result<PoissonWeights<R>, ChannelError> {
    if !(mu >= R::zero()) || !mu.is_finite() {
        return Err(ChannelError::BadIntensity(to_f64(mu)));
    }
    let mut weights = Vec::with_capacity(cutoff + 1);
    let mut term = (-mu).exp();
    for n in 0..=cutoff {
        if n > 0 {
            term = term * mu / from_usize::<R>(n);
        }
        weights.push(term);
    }
    if mu == R::zero() {
        return Ok(PoissonWeights { weights, tail: R::zero() });
    }
    let head: R = weights.iter().fold(R::zero(), |a, &b| a + b);
    let mut tail = R::zero();
    let mut n = cutoff;
    let eps = R::default_epsilon();
    loop {
        n += 1;
        term = term * mu / from_usize::<R>(n);
        tail += term;
        // terms decrease geometrically once n > μ
        if from_usize::<R>(n) > mu + R::one() && term <= tail * eps {
            break;
        }
        if n > cutoff + 100_000 {
            break;
        }
    }
    // for large μ the head is the small side; keep the sum consistent
    if tail > lit(0.5) {
        tail = R::one() - head;
    }
    Ok(PoissonWeights { weights, tail })
}

/// A phase-randomized coherent source with mean photon number `mu`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRandomizedSource<R> {
    mu: R,
}

impl<R: Real> PhaseRandomizedSource<R> {
    pub fn new(mu: R) -> Result<Self, ChannelError> {
        if !(mu >= R::zero()) || !mu.is_finite() {
            return Err(ChannelError::BadIntensity(to_f64(mu)));
        }
        Ok(Self { mu })
    }

    pub fn intensity(&self) -> R {
        self.mu
    }

    pub fn photon_statistics(&self, cutoff: usize) -> PoissonWeights<R> {
        poisson_weights(self.mu, cutoff).expect("validated intensity")
    }
}

/// Balanced-homodyne noise: photodiode transmittance and electronic noise
/// variance in shot-noise units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel<R> {
    eta_pd: R,
    v_e: R,
}

impl<R: Real> NoiseModel<R> {
    pub fn new(eta_pd: R, v_e: R) -> Result<Self, ChannelError> {
        if !(eta_pd > R::zero() && eta_pd <= R::one()) {
            return Err(ChannelError::BadPhotodiodeEfficiency(to_f64(eta_pd)));
        }
        if !(v_e >= R::zero()) || !v_e.is_finite() {
            return Err(ChannelError::BadElectronicNoise(to_f64(v_e)));
        }
        Ok(Self { eta_pd, v_e })
    }

    /// Unit-efficiency, noiseless detectors.
    pub fn ideal() -> Self {
        Self { eta_pd: R::one(), v_e: R::zero() }
    }

    /// Noise model whose electronic noise is equivalent to loss `eta_ele`.
    pub fn from_efficiencies(eta_pd: R, eta_ele: R) -> Result<Self, ChannelError> {
        if !(eta_ele > R::zero() && eta_ele <= R::one()) {
            return Err(ChannelError::BadTransmittance(to_f64(eta_ele)));
        }
        Self::new(eta_pd, R::one() / eta_ele - R::one())
    }

    pub fn eta_pd(&self) -> R {
        self.eta_pd
    }

    pub fn v_e(&self) -> R {
        self.v_e
    }

    pub fn eta_ele(&self) -> R {
        R::one() / (R::one() + self.v_e)
    }

    pub fn eta_tot(&self) -> R {
        self.eta_pd * self.eta_ele()
    }
}

/// Two-mode pure state over `|j, k⟩`, `j, k ≤ cutoff`, stored at `j·(cutoff+1) + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoModeFockState<R> {
    cutoff: usize,
    amplitudes: Vec<C<R>>,
}

impl<R: Real> TwoModeFockState<R> {
    pub fn from_amplitudes(cutoff: usize, amplitudes: Vec<C<R>>) -> Option<Self> {
        ((cutoff + 1) * (cutoff + 1) == amplitudes.len()).then_some(Self { cutoff, amplitudes })
    }

    /// `|j, k⟩`.
    pub fn basis(cutoff: usize, j: usize, k: usize) -> Self {
        let mut amplitudes = vec![Complex::new(R::zero(), R::zero()); (cutoff + 1) * (cutoff + 1)];
        amplitudes[j * (cutoff + 1) + k] = Complex::new(R::one(), R::zero());
        Self { cutoff, amplitudes }
    }

    /// `(|0,1⟩ + |1,0⟩)/√2`.
    pub fn single_photon_bell(cutoff: usize) -> Self {
        assert!(cutoff >= 1);
        splitter_output(1, cutoff).expect("cutoff ≥ 1")
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn amplitudes(&self) -> &[C<R>] {
        &self.amplitudes
    }

    pub fn amplitude(&self, j: usize, k: usize) -> C<R> {
        self.amplitudes[j * (self.cutoff + 1) + k]
    }

    pub fn norm_sqr(&self) -> R {
        self.amplitudes.iter().fold(R::zero(), |a, z| a + z.norm_sqr())
    }
}

/// `|n⟩` through a symmetric 50:50 splitter with real amplitudes
/// (`a† → (a† + b†)/√2`): `Σ_k √(C(n,k)/2ⁿ) |k, n−k⟩`.
pub fn splitter_output<R: Real>(n: usize, cutoff: usize) -> Result<TwoModeFockState<R>, ChannelError> {
    if n > cutoff {
        return Err(ChannelError::PhotonNumberTooLarge { n, cutoff });
    }
    let mut amplitudes = vec![Complex::new(R::zero(), R::zero()); (cutoff + 1) * (cutoff + 1)];
    for (k, c) in splitter_coefficients::<R>(n).into_iter().enumerate() {
        amplitudes[k * (cutoff + 1) + (n - k)] = Complex::new(c, R::zero());
    }
    Ok(TwoModeFockState { cutoff, amplitudes })
}

/// `c_k = √(C(n,k)/2ⁿ)`, `k = 0..=n`: amplitude of `|k, n−k⟩`.
pub fn splitter_coefficients<R: Real>(n: usize) -> Vec<R> {
    assert!(n <= 4 * MAX_PHOTON_NUMBER, "photon number out of range");
    // running-product binomial stays exact in f64 far beyond the cutoff
    let mut out = Vec::with_capacity(n + 1);
    let mut binom = 1.0f64;
    let scale = 0.5f64.powi(n as i32);
    for k in 0..=n {
        if k > 0 {
            binom = binom * (n - k + 1) as f64 / k as f64;
        }
        out.push(lit::<R>((binom * scale).sqrt()));
    }
    out
}

/// Intensity after a coherent state passes transmittance `eta`.
pub fn loss_on_coherent<R: Real>(mu: R, eta: R) -> Result<R, ChannelError> {
    if !(eta >= R::zero() && eta <= R::one()) {
        return Err(ChannelError::BadTransmittance(to_f64(eta)));
    }
    if !(mu >= R::zero()) || !mu.is_finite() {
        return Err(ChannelError::BadIntensity(to_f64(mu)));
    }
    Ok(mu * eta)
}

/// Loss-equivalent view of Gaussian electronic noise of variance `v_e`
/// (shot-noise units).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElectronicNoiseEquivalent<R> {
    /// `1 / (1 + v_e)`.
    pub eta_ele: R,
    /// `√eta_ele`, applied to noisy samples to restore vacuum variance 1/2.
    pub rescale: R,
}

pub fn electronic_noise_equivalent<R: Real>(v_e: R) -> Result<ElectronicNoiseEquivalent<R>, ChannelError> {
    if !(v_e >= R::zero()) || !v_e.is_finite() {
        return Err(ChannelError::BadElectronicNoise(to_f64(v_e)));
    }
    let eta_ele = R::one() / (R::one() + v_e);
    Ok(ElectronicNoiseEquivalent { eta_ele, rescale: eta_ele.sqrt() })
}

/// Source intensity that delivers `mu_target` after the total fictitious loss.
pub fn compensated_intensity<R: Real>(mu_target: R, noise: &NoiseModel<R>) -> Result<R, ChannelError> {
    if !(mu_target >= R::zero()) || !mu_target.is_finite() {
        return Err(ChannelError::BadIntensity(to_f64(mu_target)));
    }
    let eta = noise.eta_tot();
    if eta <= R::zero() {
        return Err(ChannelError::ZeroTransmittance);
    }
    Ok(mu_target / eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vacuum_weights() {
        let p = poisson_weights(0.0f64, 5).unwrap();
        assert_eq!(p.weights[0], 1.0);
        assert!(p.weights[1..].iter().all(|&w| w == 0.0));
        assert_eq!(p.tail, 0.0);
    }

    #[test]
    fn tail_at_strongest_decoy() {
        let p = poisson_weights(0.984f64, 10).unwrap();
        // P(n > 10 | μ = 0.984), evaluated at 40 digits
        assert!((p.tail - 8.537_726_668_794_06e-9).abs() < 1e-20);
        assert!((p.tail / 8.5e-9 - 1.0).abs() < 0.05);
    }

    #[test]
    fn single_photon_weight() {
        let p = poisson_weights(0.2314f64, 3).unwrap();
        assert!((p.weights[1] - 0.183_597_858_607_324_98).abs() < 1e-15);
    }

    #[test]
    fn rejects_negative_intensity() {
        assert!(poisson_weights(-0.1f64, 3).is_err());
        assert!(PhaseRandomizedSource::new(-1.0f64).is_err());
    }

    #[test]
    fn splitter_small_cases() {
        let s = splitter_output::<f64>(0, 2).unwrap();
        assert_eq!(s.amplitude(0, 0).re, 1.0);
        let s = splitter_output::<f64>(1, 1).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.amplitude(0, 1).re - h).abs() < 1e-15);
        assert!((s.amplitude(1, 0).re - h).abs() < 1e-15);
        let s = splitter_output::<f64>(2, 2).unwrap();
        assert!((s.amplitude(0, 2).re - 0.5).abs() < 1e-15);
        assert!((s.amplitude(1, 1).re - h).abs() < 1e-15);
        assert!((s.amplitude(2, 0).re - 0.5).abs() < 1e-15);
        assert!(splitter_output::<f64>(3, 2).is_err());
    }

    /// `(a† + b†)ⁿ |00⟩ / √(2ⁿ n!)` by repeated creation-operator action.
    fn splitter_by_operator_algebra(n: usize) -> Vec<f64> {
        let d = n + 1;
        let mut state = vec![0.0; d * d];
        state[0] = 1.0;
        for _ in 0..n {
            let mut next = vec![0.0; d * d];
            for j in 0..d {
                for k in 0..d {
                    let amp = state[j * d + k];
                    if amp == 0.0 {
                        continue;
                    }
                    if j + 1 < d {
                        next[(j + 1) * d + k] += amp * ((j + 1) as f64).sqrt() / 2f64.sqrt();
                    }
                    if k + 1 < d {
                        next[j * d + k + 1] += amp * ((k + 1) as f64).sqrt() / 2f64.sqrt();
                    }
                }
            }
            state = next;
        }
        let fact: f64 = (1..=n).map(|i| i as f64).product();
        state.iter().map(|a| a / fact.sqrt()).collect()
    }

    #[test]
    fn splitter_matches_operator_algebra() {
        for n in 0..=8 {
            let brute = splitter_by_operator_algebra(n);
            let s = splitter_output::<f64>(n, n).unwrap();
            for (a, b) in s.amplitudes().iter().zip(&brute) {
                assert!((a.re - b).abs() < 1e-13 && a.im == 0.0, "n={n}");
            }
        }
    }

    #[test]
    fn electronic_noise_cases() {
        let e = electronic_noise_equivalent(0.0f64).unwrap();
        assert_eq!((e.eta_ele, e.rescale), (1.0, 1.0));
        let e = electronic_noise_equivalent(2.0f64 / 3.0).unwrap();
        assert!((e.eta_ele - 0.6).abs() < 1e-15);
        assert!((e.rescale - 0.6f64.sqrt()).abs() < 1e-15);
        let e = electronic_noise_equivalent(1.0f64).unwrap();
        assert_eq!(e.eta_ele, 0.5);
        assert!((e.rescale - 0.5f64.sqrt()).abs() < 1e-16);
    }

    #[test]
    fn compensation_at_operating_point() {
        let nm = NoiseModel::new(0.617f64, 2.0 / 3.0).unwrap();
        assert!((nm.eta_tot() - 0.3702).abs() < 1e-12);
        let mu = compensated_intensity(0.984, &nm).unwrap();
        assert!((mu - 2.658_022_690_437_601).abs() < 1e-12);
        assert!((loss_on_coherent(mu, nm.eta_tot()).unwrap() - 0.984).abs() < 1e-15);
        assert_eq!(compensated_intensity(0.984, &NoiseModel::ideal()).unwrap(), 0.984);
        assert_eq!(compensated_intensity(0.0, &nm).unwrap(), 0.0);
    }

    #[test]
    fn loss_cases() {
        assert_eq!(loss_on_coherent(1.0f64, 1.0).unwrap(), 1.0);
        assert_eq!(loss_on_coherent(1.0f64, 0.0).unwrap(), 0.0);
        assert!((loss_on_coherent(0.984f64, 0.37).unwrap() - 0.36408).abs() < 1e-15);
        assert!(loss_on_coherent(1.0f64, 1.1).is_err());
        assert!(loss_on_coherent(1.0f64, -0.1).is_err());
    }

    #[test]
    fn noise_model_validation() {
        assert!(NoiseModel::new(0.0f64, 0.0).is_err());
        assert!(NoiseModel::new(1.2f64, 0.0).is_err());
        assert!(NoiseModel::new(0.5f64, -0.1).is_err());
        let nm = NoiseModel::from_efficiencies(0.617f64, 0.6).unwrap();
        assert!((nm.v_e() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_precision_splitter() {
        let s = splitter_output::<f32>(3, 3).unwrap();
        assert!((s.norm_sqr() - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn splitter_norm_and_support(n in 0usize..=16) {
            let s = splitter_output::<f64>(n, 16).unwrap();
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
            for j in 0..=16 {
                for k in 0..=16 {
                    if j + k != n {
                        prop_assert_eq!(s.amplitude(j, k).norm(), 0.0);
                    }
                }
            }
        }

        #[test]
        fn poisson_mass_is_conserved(mu in 0.0f64..12.0, cutoff in 0usize..30) {
            let p = poisson_weights(mu, cutoff).unwrap();
            let total: f64 = p.weights.iter().sum::<f64>() + p.tail;
            prop_assert!((total - 1.0).abs() < 1e-14);
        }

        #[test]
        fn compensation_round_trip(mu in 0.0f64..10.0, eta_pd in 0.01f64..=1.0, eta_ele in 0.01f64..=1.0) {
            let nm = NoiseModel::from_efficiencies(eta_pd, eta_ele).unwrap();
            prop_assume!(nm.eta_tot() > 0.01);
            let back = loss_on_coherent(compensated_intensity(mu, &nm).unwrap(), nm.eta_tot()).unwrap();
            prop_assert!((back - mu).abs() <= 1e-12);
        }

        #[test]
        fn eta_ele_strictly_decreasing(a in 0.0f64..50.0, d in 1e-6f64..10.0) {
            let lo = electronic_noise_equivalent(a).unwrap().eta_ele;
            let hi = electronic_noise_equivalent(a + d).unwrap().eta_ele;
            prop_assert!(hi < lo);
        }
    }
}
