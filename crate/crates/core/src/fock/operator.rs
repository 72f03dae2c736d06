//! Operators on truncated one- and two-mode Fock spaces.

use nalgebra::DMatrix;
use num_complex::Complex;

use super::FockError;
use crate::scalar::{lit, to_f64, Real, C};

/// Number of bosonic modes an operator acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modes {
    One,
    Two,
}

impl Modes {
    pub fn count(self) -> u32 {
        match self {
            Modes::One => 1,
            Modes::Two => 2,
        }
    }
}

/// Complex matrix on `span{|n⟩ : n ≤ cutoff}^{⊗ modes}`.
///
/// Two-mode basis states `|j, k⟩` are stored at index `j·(cutoff+1) + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedOperator<R: Real> {
    cutoff: usize,
    modes: Modes,
    matrix: DMatrix<C<R>>,
}

pub(crate) fn dimension(cutoff: usize, modes: Modes) -> usize {
    (cutoff + 1).pow(modes.count())
}

impl<R: Real> TruncatedOperator<R> {
    pub fn from_matrix(cutoff: usize, modes: Modes, matrix: DMatrix<C<R>>) -> Result<Self, FockError> {
        let dim = dimension(cutoff, modes);
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(FockError::DimensionMismatch { expected: dim, found: matrix.nrows().max(matrix.ncols()) });
        }
        Ok(Self { cutoff, modes, matrix })
    }

    pub fn zeros(cutoff: usize, modes: Modes) -> Self {
        let d = dimension(cutoff, modes);
        Self { cutoff, modes, matrix: DMatrix::zeros(d, d) }
    }

    pub fn identity(cutoff: usize, modes: Modes) -> Self {
        let d = dimension(cutoff, modes);
        Self { cutoff, modes, matrix: DMatrix::identity(d, d) }
    }

    /// `I / dim`.
    pub fn maximally_mixed(cutoff: usize, modes: Modes) -> Self {
        let d = dimension(cutoff, modes);
        let scale: R = lit(1.0 / d as f64);
        Self { cutoff, modes, matrix: DMatrix::identity(d, d) * Complex::new(scale, R::zero()) }
    }

    /// `|ψ⟩⟨ψ|` for a state vector in this space.
    pub fn projector(cutoff: usize, modes: Modes, amplitudes: &[C<R>]) -> Result<Self, FockError> {
        let d = dimension(cutoff, modes);
        if amplitudes.len() != d {
            return Err(FockError::DimensionMismatch { expected: d, found: amplitudes.len() });
        }
        let v = nalgebra::DVector::from_column_slice(amplitudes);
        Self::from_matrix(cutoff, modes, &v * v.adjoint())
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn modes(&self) -> Modes {
        self.modes
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C<R>> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C<R>> {
        self.matrix
    }

    pub fn get(&self, row: usize, col: usize) -> C<R> {
        self.matrix[(row, col)]
    }

    pub fn trace(&self) -> C<R> {
        self.matrix.trace()
    }

    pub fn adjoint(&self) -> Self {
        Self { cutoff: self.cutoff, modes: self.modes, matrix: self.matrix.adjoint() }
    }

    /// `max_{ij} |A_ij − A*_ji|`.
    pub fn hermiticity_defect(&self) -> R {
        max_abs_entry(&(&self.matrix - self.matrix.adjoint()))
    }

    /// `max_{ij} |A_ij − B_ij|`.
    pub fn max_abs_diff(&self, other: &Self) -> R {
        max_abs_entry(&(&self.matrix - &other.matrix))
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<R> {
        hermitian_eigenvalues(&self.matrix)
    }

    /// `Tr(self · other)`.
    pub fn trace_product(&self, other: &Self) -> C<R> {
        let mut acc = Complex::new(R::zero(), R::zero());
        let d = self.dim();
        for i in 0..d {
            for j in 0..d {
                acc += self.matrix[(i, j)] * other.matrix[(j, i)];
            }
        }
        acc
    }

    /// Tensor product of two single-mode operators with equal cutoff.
    pub fn kron(&self, other: &Self) -> Result<Self, FockError> {
        if self.modes != Modes::One || other.modes != Modes::One || self.cutoff != other.cutoff {
            return Err(FockError::IncompatibleOperators);
        }
        Ok(Self { cutoff: self.cutoff, modes: Modes::Two, matrix: self.matrix.kronecker(&other.matrix) })
    }
}

pub(crate) fn max_abs_entry<R: Real>(m: &DMatrix<C<R>>) -> R {
    m.iter().fold(R::zero(), |acc, z| acc.max(crate::scalar::modulus(*z)))
}

pub(crate) fn hermitian_part<R: Real>(m: &DMatrix<C<R>>) -> DMatrix<C<R>> {
    (m + m.adjoint()) * Complex::new(lit::<R>(0.5), R::zero())
}

pub(crate) fn hermitian_eigenvalues<R: Real>(m: &DMatrix<C<R>>) -> Vec<R> {
    let eig = hermitian_part(m).symmetric_eigen();
    let mut v: Vec<R> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v
}

/// Hermitian input tolerance accepted by [`psd_sqrt_matrix`].
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;
/// Most negative eigenvalue treated as round-off rather than a non-PSD input.
pub const NEGATIVE_EIGENVALUE_TOLERANCE: f64 = 1e-8;

/// Principal square root of a Hermitian PSD matrix by eigendecomposition.
/// Eigenvalues in `[−1e-8, 0)` are clamped to zero.
pub fn psd_sqrt_matrix<R: Real>(m: &DMatrix<C<R>>) -> Result<DMatrix<C<R>>, FockError> {
    let defect = max_abs_entry(&(m - m.adjoint()));
    if defect > lit(HERMITIAN_TOLERANCE) {
        return Err(FockError::NotHermitian { defect: to_f64(defect) });
    }
    let eig = hermitian_part(m).symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(R::max_value().unwrap_or(lit(f64::MAX)), |a, b| a.min(b));
    if min < lit(-NEGATIVE_EIGENVALUE_TOLERANCE) {
        return Err(FockError::NotPositive { min_eigenvalue: to_f64(min) });
    }
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = Complex::new(lambda.max(R::zero()).sqrt(), R::zero());
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= s;
        }
    }
    Ok(scaled * v.adjoint())
}

/// `√A` for a Hermitian PSD truncated operator.
pub fn psd_operator_sqrt<R: Real>(a: &TruncatedOperator<R>) -> Result<TruncatedOperator<R>, FockError> {
    let matrix = psd_sqrt_matrix(&a.matrix)?;
    Ok(TruncatedOperator { cutoff: a.cutoff, modes: a.modes, matrix })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real_diag(values: &[f64]) -> TruncatedOperator<f64> {
        let d = values.len();
        let m = DMatrix::from_fn(d, d, |i, j| Complex::new(if i == j { values[i] } else { 0.0 }, 0.0));
        TruncatedOperator::from_matrix(d - 1, Modes::One, m).unwrap()
    }

    #[test]
    fn sqrt_of_identity_is_identity() {
        let id = TruncatedOperator::<f64>::identity(3, Modes::One);
        let r = psd_operator_sqrt(&id).unwrap();
        assert!(r.max_abs_diff(&id) < 1e-14);
    }

    #[test]
    fn sqrt_of_diagonal() {
        let r = psd_operator_sqrt(&real_diag(&[4.0, 9.0])).unwrap();
        assert!(r.max_abs_diff(&real_diag(&[2.0, 3.0])) < 1e-14);
    }

    #[test]
    fn sqrt_squares_back_for_complex_hermitian() {
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[Complex::new(0.4, 0.0), Complex::new(0.1, 0.2), Complex::new(0.1, -0.2), Complex::new(0.6, 0.0)],
        );
        let op = TruncatedOperator::from_matrix(1, Modes::One, a.clone()).unwrap();
        let b = psd_operator_sqrt(&op).unwrap();
        assert!(max_abs_entry(&(b.matrix() * b.matrix() - &a)) < 1e-14);
        assert!(b.hermiticity_defect() < 1e-15);
        assert!(b.eigenvalues()[0] >= 0.0);
    }

    #[test]
    fn rejects_negative_eigenvalue() {
        let err = psd_operator_sqrt(&real_diag(&[1.0, -1e-6])).unwrap_err();
        assert!(matches!(err, FockError::NotPositive { .. }));
        assert!(psd_operator_sqrt(&real_diag(&[1.0, -1e-9])).is_ok());
    }

    #[test]
    fn rejects_non_hermitian() {
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[Complex::new(1.0, 0.0), Complex::new(0.5, 0.0), Complex::new(0.0, 0.0), Complex::new(1.0, 0.0)],
        );
        let op = TruncatedOperator::from_matrix(1, Modes::One, a).unwrap();
        assert!(matches!(psd_operator_sqrt(&op), Err(FockError::NotHermitian { .. })));
    }

    #[test]
    fn kron_index_layout() {
        let a = real_diag(&[1.0, 2.0]);
        let b = real_diag(&[10.0, 20.0]);
        let ab = a.kron(&b).unwrap();
        // |j,k⟩ at j·2 + k
        assert_eq!(ab.get(1, 1).re, 20.0);
        assert_eq!(ab.get(2, 2).re, 20.0);
        assert_eq!(ab.get(3, 3).re, 40.0);
    }

    #[test]
    fn maximally_mixed_has_unit_trace() {
        let m = TruncatedOperator::<f64>::maximally_mixed(2, Modes::Two);
        assert_eq!(m.dim(), 9);
        assert!((m.trace().re - 1.0).abs() < 1e-15);
    }
}
