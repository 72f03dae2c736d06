//! Numerical check that the threshold filter factorizes into a classical
//! part acting on the setting register and a quantum part acting on the
//! optical mode, with the flags combined by logical AND.
//!
//! A setting `a` is identified with its LO phase `θ_a`. The full filter uses
//! `M_f = Σ_a |a⟩⟨a| ⊗ Q̂_f(θ_a)`; the quantum part uses `Q̂_f` at θ = 0.
//! The two agree exactly when `Q̂_f` does not depend on θ, which holds on the
//! `{|0⟩, |1⟩}` subspace.

use nalgebra::DMatrix;
use num_complex::Complex;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fock::{
    build_postselection_from_overlaps, build_postselection_operators_at_phase, interval_overlaps, max_abs_entry, psd_sqrt_matrix,
    FockError, PostselectionOperators,
};
use crate::scalar::{lit, to_f64, Real, C};

#[derive(Debug, Error)]
pub enum FairSamplingError {
    #[error("settings must be distinct (duplicate at index {0})")]
    DuplicateSetting(usize),
    #[error("setting register is empty")]
    EmptyRegister,
    #[error("setting index {index} outside a register of {len}")]
    UnknownSetting { index: usize, len: usize },
    #[error("state dimension {found} does not match cutoff {cutoff}")]
    StateDimension { found: usize, cutoff: usize },
    #[error(transparent)]
    Fock(#[from] FockError),
}

/// Finite, distinct settings given by their LO phases.
#[derive(Clone, Debug, PartialEq)]
pub struct SettingsRegister<R> {
    thetas: Vec<R>,
}

impl<R: Real> SettingsRegister<R> {
    pub fn new(thetas: Vec<R>) -> Result<Self, FairSamplingError> {
        if thetas.is_empty() {
            return Err(FairSamplingError::EmptyRegister);
        }
        for (i, t) in thetas.iter().enumerate() {
            if thetas[..i].contains(t) {
                return Err(FairSamplingError::DuplicateSetting(i));
            }
        }
        Ok(Self { thetas })
    }

    /// `n` equally spaced phases on `[0, 2π)`.
    pub fn uniform(n: usize) -> Result<Self, FairSamplingError> {
        Self::new((0..n).map(|k| R::two_pi() * lit::<R>(k as f64) / lit::<R>(n as f64)).collect())
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn thetas(&self) -> &[R] {
        &self.thetas
    }

    fn check(&self, a: usize) -> Result<(), FairSamplingError> {
        if a >= self.len() {
            return Err(FairSamplingError::UnknownSetting { index: a, len: self.len() });
        }
        Ok(())
    }
}

/// The `✓` and `∅` blocks of a flag-diagonal operator.
#[derive(Clone, Debug, PartialEq)]
pub struct FlaggedState<R: Real> {
    pub keep: DMatrix<C<R>>,
    pub discard: DMatrix<C<R>>,
}

impl<R: Real> FlaggedState<R> {
    pub fn keep_mass(&self) -> R {
        self.keep.trace().re
    }

    pub fn discard_mass(&self) -> R {
        self.discard.trace().re
    }

    pub fn max_abs_diff(&self, other: &Self) -> R {
        max_abs_entry(&(&self.keep - &other.keep)).max(max_abs_entry(&(&self.discard - &other.discard)))
    }
}

fn projector<R: Real>(dim: usize, a: usize) -> DMatrix<C<R>> {
    let mut p = DMatrix::zeros(dim, dim);
    p[(a, a)] = Complex::new(R::one(), R::zero());
    p
}

fn check_state<R: Real>(rho: &DMatrix<C<R>>, cutoff: usize) -> Result<(), FairSamplingError> {
    if rho.nrows() != cutoff + 1 || rho.ncols() != cutoff + 1 {
        return Err(FairSamplingError::StateDimension { found: rho.nrows().max(rho.ncols()), cutoff });
    }
    Ok(())
}

/// How the post-selection operators are built; the faulty variant keeps the
/// odd window integral `∫_0^T ψ_0 ψ_1` that should vanish by parity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapMode {
    Exact,
    KeepOddCrossTerms,
}

/// `(Q̂_∅, Q̂_✓)` at phase `theta`, optionally with the parity fault injected.
pub fn postselection_operators<R: Real>(
    threshold: R,
    cutoff: usize,
    theta: R,
    mode: OverlapMode,
) -> Result<PostselectionOperators<R>, FockError> {
    match mode {
        OverlapMode::Exact => build_postselection_operators_at_phase(threshold, cutoff, theta),
        OverlapMode::KeepOddCrossTerms => build_postselection_from_overlaps(threshold, cutoff, theta, |t, n| {
            let mut g = interval_overlaps(-t, t, n);
            let half = interval_overlaps(R::zero(), t, n);
            for m in 0..=n {
                for k in 0..=n {
                    if (m + k) % 2 == 1 {
                        g[(m, k)] = half[(m, k)];
                    }
                }
            }
            Ok(g)
        }),
    }
}

/// `F(|a⟩⟨a| ⊗ ρ)` with `√M_f` taken over the whole register.
pub fn apply_filter<R: Real>(
    register: &SettingsRegister<R>,
    a: usize,
    rho: &DMatrix<C<R>>,
    threshold: R,
    cutoff: usize,
) -> Result<FlaggedState<R>, FairSamplingError> {
    apply_filter_with(register, a, rho, threshold, cutoff, OverlapMode::Exact)
}

pub fn apply_filter_with<R: Real>(
    register: &SettingsRegister<R>,
    a: usize,
    rho: &DMatrix<C<R>>,
    threshold: R,
    cutoff: usize,
    mode: OverlapMode,
) -> Result<FlaggedState<R>, FairSamplingError> {
    register.check(a)?;
    check_state(rho, cutoff)?;
    let ops: Vec<PostselectionOperators<R>> =
        register.thetas().iter().map(|&th| postselection_operators(threshold, cutoff, th, mode)).collect::<Result<_, _>>()?;
    let na = register.len();
    let lift = |pick: fn(&PostselectionOperators<R>) -> &DMatrix<C<R>>| {
        ops.iter().enumerate().fold(DMatrix::zeros(na * (cutoff + 1), na * (cutoff + 1)), |acc, (k, o)| {
            acc + projector::<R>(na, k).kronecker(pick(o))
        })
    };
    let sqrt_keep = psd_sqrt_matrix(&lift(|o| o.keep.matrix()))?;
    let sqrt_discard = psd_sqrt_matrix(&lift(|o| o.discard.matrix()))?;
    let xi = projector::<R>(na, a).kronecker(rho);
    Ok(FlaggedState { keep: &sqrt_keep * &xi * &sqrt_keep, discard: &sqrt_discard * &xi * &sqrt_discard })
}

/// The classical part never discards: `F_C(|a⟩⟨a|) = |✓⟩⟨✓| ⊗ |a⟩⟨a|`.
pub fn classical_filter<R: Real>(register: &SettingsRegister<R>, a: usize) -> Result<FlaggedState<R>, FairSamplingError> {
    register.check(a)?;
    let n = register.len();
    Ok(FlaggedState { keep: projector(n, a), discard: DMatrix::zeros(n, n) })
}

/// `F_Q(ρ)` with θ = 0 operators.
pub fn quantum_filter<R: Real>(rho: &DMatrix<C<R>>, threshold: R, cutoff: usize) -> Result<FlaggedState<R>, FairSamplingError> {
    quantum_filter_with(rho, threshold, cutoff, OverlapMode::Exact)
}

pub fn quantum_filter_with<R: Real>(
    rho: &DMatrix<C<R>>,
    threshold: R,
    cutoff: usize,
    mode: OverlapMode,
) -> Result<FlaggedState<R>, FairSamplingError> {
    check_state(rho, cutoff)?;
    let ops = postselection_operators(threshold, cutoff, R::zero(), mode)?;
    let sk = psd_sqrt_matrix(ops.keep.matrix())?;
    let sd = psd_sqrt_matrix(ops.discard.matrix())?;
    Ok(FlaggedState { keep: &sk * rho * &sk, discard: &sd * rho * &sd })
}

/// Flag AND of a register state and a mode state: only `✓ ∧ ✓` is kept.
pub fn and_combine<R: Real>(classical: &FlaggedState<R>, quantum: &FlaggedState<R>) -> FlaggedState<R> {
    let keep = classical.keep.kronecker(&quantum.keep);
    let discard = classical.keep.kronecker(&quantum.discard)
        + classical.discard.kronecker(&quantum.keep)
        + classical.discard.kronecker(&quantum.discard);
    FlaggedState { keep, discard }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FactorizationCheck {
    /// `max_a ‖F(|a⟩⟨a| ⊗ ρ) − ∧[F_C(|a⟩⟨a|) ⊗ F_Q(ρ)]‖_max`.
    pub max_residual: f64,
    /// `max_a ‖Q̂_∅(θ_a) − Q̂_∅(0)‖_max`.
    pub max_theta_deviation: f64,
    /// Largest `|Tr σ_✓ + Tr σ_∅ − Tr ρ|` over the register.
    pub max_trace_defect: f64,
}

pub fn verify_factorization<R: Real>(
    rho: &DMatrix<C<R>>,
    threshold: R,
    register: &SettingsRegister<R>,
    cutoff: usize,
) -> Result<FactorizationCheck, FairSamplingError> {
    verify_factorization_with(rho, threshold, register, cutoff, OverlapMode::Exact)
}

pub fn verify_factorization_with<R: Real>(
    rho: &DMatrix<C<R>>,
    threshold: R,
    register: &SettingsRegister<R>,
    cutoff: usize,
    mode: OverlapMode,
) -> Result<FactorizationCheck, FairSamplingError> {
    let fq = quantum_filter_with(rho, threshold, cutoff, mode)?;
    let reference = postselection_operators(threshold, cutoff, R::zero(), mode)?;
    let mut out = FactorizationCheck { max_residual: 0.0, max_theta_deviation: 0.0, max_trace_defect: 0.0 };
    for (a, &th) in register.thetas().iter().enumerate() {
        let full = apply_filter_with(register, a, rho, threshold, cutoff, mode)?;
        let split = and_combine(&classical_filter(register, a)?, &fq);
        out.max_residual = out.max_residual.max(to_f64(full.max_abs_diff(&split)));
        let q = postselection_operators(threshold, cutoff, th, mode)?;
        out.max_theta_deviation = out.max_theta_deviation.max(to_f64(q.discard.max_abs_diff(&reference.discard)));
        let defect = full.keep_mass() + full.discard_mass() - rho.trace().re;
        out.max_trace_defect = out.max_trace_defect.max(to_f64(defect.abs()));
    }
    Ok(out)
}

/// `A A† / Tr(A A†)` with i.i.d. complex Gaussian `A`.
pub fn random_density_matrix<G: Rng + ?Sized>(dim: usize, rng: &mut G) -> DMatrix<C<f64>> {
    let a = DMatrix::from_fn(dim, dim, |_, _| {
        Complex::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let m = &a * a.adjoint();
    let tr = m.trace().re;
    m / Complex::new(tr, 0.0)
}

/// Parameters of the verification grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteConfig {
    pub states: usize,
    pub thresholds: Vec<f64>,
    pub settings: usize,
    pub cutoff: usize,
    pub seed: u64,
    pub mode: OverlapMode,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { states: 100, thresholds: vec![0.2, 0.82, 1.0, 2.0], settings: 8, cutoff: 1, seed: 1, mode: OverlapMode::Exact }
    }
}

pub const RESIDUAL_TOLERANCE: f64 = 1e-10;
pub const THETA_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct TupleReport {
    pub state: usize,
    pub threshold: f64,
    pub outcome: Result<FactorizationCheck, String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub config: SuiteConfig,
    pub tuples: Vec<TupleReport>,
    pub max_residual: f64,
    pub max_theta_deviation: f64,
    /// Only cutoff 1 carries a claim; larger cutoffs are reported as data.
    pub asserted: bool,
    pub pass: bool,
}

/// Random states on the truncated space × thresholds × register phases.
pub fn run_factorization_suite(config: &SuiteConfig) -> Result<SuiteReport, FairSamplingError> {
    let register = SettingsRegister::<f64>::uniform(config.settings)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let states: Vec<DMatrix<C<f64>>> = (0..config.states).map(|_| random_density_matrix(config.cutoff + 1, &mut rng)).collect();
    let jobs: Vec<(usize, f64)> = (0..states.len()).flat_map(|s| config.thresholds.iter().map(move |&t| (s, t))).collect();
    let tuples: Vec<TupleReport> = jobs
        .par_iter()
        .map(|&(s, t)| TupleReport {
            state: s,
            threshold: t,
            outcome: verify_factorization_with(&states[s], t, &register, config.cutoff, config.mode).map_err(|e| e.to_string()),
        })
        .collect();
    let ok = || tuples.iter().filter_map(|r| r.outcome.as_ref().ok());
    let max_residual = ok().map(|c| c.max_residual).fold(0.0, f64::max);
    let max_theta_deviation = ok().map(|c| c.max_theta_deviation).fold(0.0, f64::max);
    let all_ok = tuples.iter().all(|r| r.outcome.is_ok());
    let asserted = config.cutoff == 1;
    let pass = all_ok && max_residual <= RESIDUAL_TOLERANCE && max_theta_deviation <= THETA_TOLERANCE;
    Ok(SuiteReport { config: config.clone(), tuples, max_residual, max_theta_deviation, asserted, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use libm::erf;

    fn diag(values: &[f64]) -> DMatrix<C<f64>> {
        DMatrix::from_fn(
            values.len(),
            values.len(),
            |i, j| if i == j { Complex::new(values[i], 0.0) } else { Complex::new(0.0, 0.0) },
        )
    }

    fn gamma(t: f64) -> f64 {
        erf(t) - 2.0 * t * (-t * t).exp() / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn register_validation() {
        assert!(matches!(SettingsRegister::new(vec![0.0, 1.0, 0.0]), Err(FairSamplingError::DuplicateSetting(2))));
        assert!(matches!(SettingsRegister::<f64>::new(vec![]), Err(FairSamplingError::EmptyRegister)));
        let r = SettingsRegister::<f64>::uniform(4).unwrap();
        assert!(matches!(classical_filter(&r, 4), Err(FairSamplingError::UnknownSetting { .. })));
    }

    #[test]
    fn classical_filter_always_keeps() {
        let r = SettingsRegister::<f64>::uniform(3).unwrap();
        let a = classical_filter(&r, 0).unwrap();
        let b = classical_filter(&r, 2).unwrap();
        assert_eq!(a.keep_mass(), 1.0);
        assert_eq!(a.discard_mass(), 0.0);
        assert_eq!((&a.keep * &b.keep).trace().norm(), 0.0);
    }

    #[test]
    fn zero_threshold_passes_everything() {
        let rho = diag(&[0.3, 0.7]);
        let r = SettingsRegister::<f64>::uniform(2).unwrap();
        let f = apply_filter(&r, 1, &rho, 0.0, 1).unwrap();
        assert!(max_abs_entry(&f.discard) < 1e-15);
        assert!(max_abs_entry(&(f.keep - projector::<f64>(2, 1).kronecker(&rho))) < 1e-14);
        let q = quantum_filter(&rho, 0.0, 1).unwrap();
        assert!((q.keep_mass() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn discard_masses_match_window_integrals() {
        let r = SettingsRegister::<f64>::uniform(4).unwrap();
        let f = apply_filter(&r, 2, &diag(&[1.0, 0.0]), 1.0, 1).unwrap();
        assert!((f.discard_mass() - erf(1.0)).abs() < 1e-12);
        let q = quantum_filter(&diag(&[0.5, 0.5]), 1.0, 1).unwrap();
        assert!((q.discard_mass() - (erf(1.0) + gamma(1.0)) / 2.0).abs() < 1e-12);
        assert!((gamma(1.0) - 0.427_593_295_529_120_2).abs() < 1e-15);
        let one = quantum_filter(&diag(&[0.0, 1.0]), 0.9, 1).unwrap();
        assert!((one.keep_mass() + one.discard_mass() - 1.0).abs() < 1e-12);
        let far = quantum_filter(&diag(&[0.4, 0.6]), 9.0, 1).unwrap();
        assert!(far.keep_mass() < 1e-12);
    }

    #[test]
    fn factorization_on_qubit_subspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = SettingsRegister::<f64>::uniform(8).unwrap();
        for _ in 0..5 {
            let rho = random_density_matrix(2, &mut rng);
            for t in [0.2, 0.82, 1.0, 2.0] {
                let c = verify_factorization(&rho, t, &r, 1).unwrap();
                assert!(c.max_residual <= RESIDUAL_TOLERANCE);
                assert!(c.max_theta_deviation <= THETA_TOLERANCE);
                assert!(c.max_trace_defect < 1e-12);
            }
        }
    }

    #[test]
    fn theta_dependence_beyond_qubit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = SettingsRegister::<f64>::uniform(8).unwrap();
        let rho = random_density_matrix(3, &mut rng);
        let c = verify_factorization(&rho, 1.0, &r, 2).unwrap();
        assert!(c.max_theta_deviation > 1e-3);
        assert!(c.max_residual > 1e-6);
    }

    #[test]
    fn injected_fault_is_detected() {
        let cfg = SuiteConfig { states: 5, mode: OverlapMode::KeepOddCrossTerms, ..SuiteConfig::default() };
        let report = run_factorization_suite(&cfg).unwrap();
        assert!(!report.pass);
        let clean = run_factorization_suite(&SuiteConfig { states: 5, ..SuiteConfig::default() }).unwrap();
        assert!(clean.pass && clean.asserted);
    }

    #[test]
    fn random_states_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho = random_density_matrix(4, &mut rng);
        assert!((rho.trace().re - 1.0).abs() < 1e-14);
        let op = crate::fock::TruncatedOperator::from_matrix(1, crate::fock::Modes::Two, rho).unwrap();
        assert!(op.eigenvalues()[0] > -1e-14);
    }

    #[test]
    fn state_dimension_checked() {
        assert!(matches!(quantum_filter(&diag(&[1.0, 0.0, 0.0]), 1.0, 1), Err(FairSamplingError::StateDimension { .. })));
    }
}
