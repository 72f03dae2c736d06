//! Quadrature-representation math on truncated Fock spaces: wavefunctions,
//! overlap integrals over threshold windows and the post-selection operators
//! `Q̂_∅` (window `[-T, T]`, discarded) and `Q̂_✓ = I − Q̂_∅` (kept).

mod operator;
pub mod quadrature;
mod wavefunction;

use nalgebra::DMatrix;
use num_complex::Complex;
use thiserror::Error;

pub(crate) use operator::max_abs_entry;
pub use operator::{
    psd_operator_sqrt, psd_sqrt_matrix, Modes, TruncatedOperator, HERMITIAN_TOLERANCE, NEGATIVE_EIGENVALUE_TOLERANCE,
};
pub use wavefunction::{hermite, hermite_functions, wavefunction_value, QuadratureWavefunction, MAX_PHOTON_NUMBER};

use crate::scalar::{lit, phase, to_f64, Real};
use quadrature::{default_rule, for_each_node, GaussLegendre};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FockError {
    #[error("threshold must be non-negative, got {0}")]
    NegativeThreshold(f64),
    #[error("cutoff {cutoff} outside supported range 1..={max}")]
    BadCutoff { cutoff: usize, max: usize },
    #[error("photon number {n} exceeds cutoff {cutoff}")]
    PhotonNumberTooLarge { n: usize, cutoff: usize },
    #[error("operator dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operators have incompatible mode structure or cutoff")]
    IncompatibleOperators,
    #[error("matrix is not Hermitian (defect {defect:.3e})")]
    NotHermitian { defect: f64 },
    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositive { min_eigenvalue: f64 },
    #[error("post-selection operator eigenvalues outside [0, 1]: [{min:.3e}, {max:.3e}]")]
    PostselectionOutOfRange { min: f64, max: f64 },
}

/// Slack allowed on the spectrum of `Q̂_∅` before it is reported as a
/// quadrature failure.
pub const POSTSELECTION_SPECTRUM_TOLERANCE: f64 = 1e-10;

/// Real matrix `G[m][n] = ∫_a^b ψ_m(x) ψ_n(x) dx` for `m, n ≤ cutoff` at θ = 0.
///
/// Entries with odd `m + n` over a symmetric interval are set to exactly zero.
pub fn interval_overlaps<R: Real>(a: R, b: R, cutoff: usize) -> DMatrix<R> {
    interval_overlaps_with(&default_rule(), a, b, cutoff)
}

pub(crate) fn interval_overlaps_with<R: Real>(rule: &GaussLegendre<R>, a: R, b: R, cutoff: usize) -> DMatrix<R> {
    let d = cutoff + 1;
    let mut g = DMatrix::<R>::zeros(d, d);
    let mut psi = Vec::with_capacity(d);
    for_each_node(rule, a, b, |x, w| {
        wavefunction::hermite_functions_into(cutoff, x, &mut psi);
        for m in 0..d {
            let wm = w * psi[m];
            for n in m..d {
                g[(m, n)] += wm * psi[n];
            }
        }
    });
    let symmetric = a == -b;
    for m in 0..d {
        for n in m..d {
            if symmetric && (m + n) % 2 == 1 {
                g[(m, n)] = R::zero();
            }
            g[(n, m)] = g[(m, n)];
        }
    }
    g
}

/// `∫_{-T}^{T} ⟨m|x⟩⟨x|n⟩ dx` at θ = 0. Zero exactly for odd `m + n`.
pub fn window_overlap<R: Real>(m: usize, n: usize, threshold: R) -> Result<R, FockError> {
    if threshold < R::zero() {
        return Err(FockError::NegativeThreshold(to_f64(threshold)));
    }
    let top = m.max(n);
    if top > MAX_PHOTON_NUMBER {
        return Err(FockError::PhotonNumberTooLarge { n: top, cutoff: MAX_PHOTON_NUMBER });
    }
    if (m + n) % 2 == 1 {
        return Ok(R::zero());
    }
    Ok(interval_overlaps(-threshold, threshold, top)[(m, n)])
}

/// Lift a θ = 0 overlap matrix to LO phase `theta`: entry `(m,n)` picks up
/// `e^{i(n−m)θ}`.
pub fn phased_overlaps<R: Real>(g: &DMatrix<R>, theta: R) -> DMatrix<Complex<R>> {
    DMatrix::from_fn(g.nrows(), g.ncols(), |m, n| {
        let dn: R = lit(n as f64 - m as f64);
        phase(dn * theta) * g[(m, n)]
    })
}

/// Post-selection operator pair.
#[derive(Clone, Debug)]
pub struct PostselectionOperators<R: Real> {
    /// Window `|x| ≤ T` (outcome discarded).
    pub discard: TruncatedOperator<R>,
    /// Complement `|x| > T` (outcome kept).
    pub keep: TruncatedOperator<R>,
}

/// `(Q̂_∅, Q̂_✓)` at θ = 0.
pub fn build_postselection_operators<R: Real>(threshold: R, cutoff: usize) -> Result<PostselectionOperators<R>, FockError> {
    build_postselection_operators_at_phase(threshold, cutoff, R::zero())
}

/// `(Q̂_∅, Q̂_✓)` at LO phase `theta`.
pub fn build_postselection_operators_at_phase<R: Real>(
    threshold: R,
    cutoff: usize,
    theta: R,
) -> Result<PostselectionOperators<R>, FockError> {
    build_postselection_from_overlaps(threshold, cutoff, theta, |t, n| Ok(interval_overlaps(-t, t, n)))
}

pub(crate) fn build_postselection_from_overlaps<R: Real, F>(
    threshold: R,
    cutoff: usize,
    theta: R,
    overlaps: F,
) -> Result<PostselectionOperators<R>, FockError>
where
    F: FnOnce(R, usize) -> Result<DMatrix<R>, FockError>,
{
    if threshold < R::zero() {
        return Err(FockError::NegativeThreshold(to_f64(threshold)));
    }
    if cutoff == 0 || cutoff > MAX_PHOTON_NUMBER {
        return Err(FockError::BadCutoff { cutoff, max: MAX_PHOTON_NUMBER });
    }
    let g = overlaps(threshold, cutoff)?;
    let discard = TruncatedOperator::from_matrix(cutoff, Modes::One, phased_overlaps(&g, theta))?;
    let keep_matrix = DMatrix::identity(cutoff + 1, cutoff + 1) - discard.matrix();
    let keep = TruncatedOperator::from_matrix(cutoff, Modes::One, keep_matrix)?;
    let spectrum = discard.eigenvalues();
    let (min, max) = (spectrum[0], spectrum[spectrum.len() - 1]);
    let tol: R = lit(POSTSELECTION_SPECTRUM_TOLERANCE);
    if min < -tol || max > R::one() + tol {
        return Err(FockError::PostselectionOutOfRange { min: to_f64(min), max: to_f64(max) });
    }
    Ok(PostselectionOperators { discard, keep })
}
