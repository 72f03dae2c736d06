//! Number-state wavefunctions in the quadrature representation.
//!
//! Convention: vacuum variance 1/2, `⟨x|n⟩_θ = ψ_n(x) e^{inθ}` with
//! `ψ_n(x) = π^{-1/4} (2ⁿ n!)^{-1/2} H_n(x) e^{-x²/2}`.

use crate::scalar::{from_usize, lit, phase, Real, C};

/// Highest photon number any routine in this crate accepts.
pub const MAX_PHOTON_NUMBER: usize = 16;

/// Physicists' Hermite polynomial `H_n(x)` by the three-term recurrence.
pub fn hermite<R: Real>(n: usize, x: R) -> R {
    let two: R = lit(2.0);
    let mut h0 = R::one();
    if n == 0 {
        return h0;
    }
    let mut h1 = two * x;
    for k in 1..n {
        let h2 = two * x * h1 - two * from_usize::<R>(k) * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// `ψ_0(x), …, ψ_nmax(x)` at θ = 0.
///
/// Uses the normalized recurrence
/// `ψ_{n+1} = √(2/(n+1)) x ψ_n − √(n/(n+1)) ψ_{n−1}`, which never forms
/// `2ⁿ n!` and stays finite for every supported `n`.
pub fn hermite_functions<R: Real>(nmax: usize, x: R) -> Vec<R> {
    let mut out = Vec::with_capacity(nmax + 1);
    hermite_functions_into(nmax, x, &mut out);
    out
}

pub(crate) fn hermite_functions_into<R: Real>(nmax: usize, x: R, out: &mut Vec<R>) {
    out.clear();
    let psi0 = R::PI().powf(lit(-0.25)) * (-x * x * lit(0.5)).exp();
    out.push(psi0);
    if nmax == 0 {
        return;
    }
    out.push(lit::<R>(2.0).sqrt() * x * psi0);
    for n in 1..nmax {
        let n_r: R = from_usize(n);
        let next = (lit::<R>(2.0) / (n_r + R::one())).sqrt() * x * out[n] - (n_r / (n_r + R::one())).sqrt() * out[n - 1];
        out.push(next);
    }
}

/// `ψ_n(x, θ) = ⟨x|n⟩` at local-oscillator phase `theta`.
pub fn wavefunction_value<R: Real>(n: usize, x: R, theta: R) -> C<R> {
    let psi = hermite_functions(n, x)[n];
    phase(from_usize::<R>(n) * theta) * psi
}

/// The phase and photon number of a single wavefunction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureWavefunction<R> {
    pub n: usize,
    pub theta: R,
}

impl<R: Real> QuadratureWavefunction<R> {
    pub fn new(n: usize, theta: R) -> Self {
        Self { n, theta }
    }

    pub fn value(&self, x: R) -> C<R> {
        wavefunction_value(self.n, x, self.theta)
    }

    /// `|ψ_n(x)|²`, independent of θ.
    pub fn density(&self, x: R) -> R {
        let v = hermite_functions(self.n, x)[self.n];
        v * v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn vacuum_at_origin() {
        let v = wavefunction_value::<f64>(0, 0.0, 0.0);
        assert!((v.re - PI.powf(-0.25)).abs() < 1e-15);
        assert!((v.re - 0.751126).abs() < 1e-6);
        assert_eq!(v.im, 0.0);
    }

    #[test]
    fn one_photon_vanishes_at_origin() {
        for theta in [0.0, 0.3, 2.0, -1.0] {
            assert_eq!(wavefunction_value::<f64>(1, 0.0, theta).norm(), 0.0);
        }
    }

    #[test]
    fn one_photon_at_unit_quadrature() {
        let v = wavefunction_value::<f64>(1, 1.0, 0.0);
        let want = PI.powf(-0.25) * 2f64.sqrt() * (-0.5f64).exp();
        assert!((v.re - want).abs() < 1e-15);
        assert!((v.re - 0.644288).abs() < 1e-6);
    }

    #[test]
    fn phase_factor_is_e_to_the_i_n_theta() {
        let theta = 0.7;
        for n in 0..6 {
            let v = wavefunction_value::<f64>(n, 0.9, theta);
            let r = wavefunction_value::<f64>(n, 0.9, 0.0);
            let expect = r * num_complex::Complex::from_polar(1.0, n as f64 * theta);
            assert!((v - expect).norm() < 1e-14);
            assert!((v.norm() - r.norm()).abs() < 1e-15);
        }
    }

    #[test]
    fn recurrence_agrees_with_explicit_hermite() {
        let mut fact = 1.0f64;
        for n in 0..=12usize {
            if n > 0 {
                fact *= n as f64;
            }
            for x in [-2.3, -0.4, 0.0, 0.8, 3.1] {
                let explicit = PI.powf(-0.25) / (2f64.powi(n as i32) * fact).sqrt() * hermite(n, x) * (-x * x / 2.0).exp();
                let rec = hermite_functions(n, x)[n];
                assert!((explicit - rec).abs() < 1e-12 * (1.0 + explicit.abs()), "n={n} x={x}");
            }
        }
    }

    #[test]
    fn parity() {
        for n in 0..=MAX_PHOTON_NUMBER {
            for x in [0.3, 1.7, 4.0] {
                let p = hermite_functions::<f64>(n, x)[n];
                let m = hermite_functions::<f64>(n, -x)[n];
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                assert!((p - sign * m).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn hermite_small_cases() {
        assert_eq!(hermite(0, 1.5f64), 1.0);
        assert_eq!(hermite(1, 1.5f64), 3.0);
        assert_eq!(hermite(2, 1.5f64), 4.0 * 2.25 - 2.0);
        assert_eq!(hermite(3, 2.0f64), 8.0 * 8.0 - 12.0 * 2.0);
    }
}
