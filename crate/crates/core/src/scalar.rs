//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, LowerExp};

use nalgebra::RealField;
use num_complex::Complex;
use num_traits::{FloatConst, ToPrimitive};

/// Real floating-point scalar: `f32` or `f64`.
///
/// Everything in this crate is written against this bound; the concrete
/// aliases at the crate root pin it to `f64`.
pub trait Real: RealField + Copy + FloatConst + ToPrimitive + LowerExp + Debug {}

impl Real for f32 {}
impl Real for f64 {}

/// Complex number over a [`Real`] scalar.
pub type C<R> = Complex<R>;

/// Lossless-where-possible conversion from an `f64` literal.
#[inline]
pub fn lit<R: Real>(x: f64) -> R {
    nalgebra::convert(x)
}

/// Convert a scalar back to `f64` for I/O and reporting.
#[inline]
pub fn to_f64<R: Real>(x: R) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

#[inline]
pub(crate) fn from_usize<R: Real>(n: usize) -> R {
    lit(n as f64)
}

/// `e^{iφ}`.
#[inline]
pub fn phase<R: Real>(phi: R) -> C<R> {
    Complex::new(phi.cos(), phi.sin())
}

/// `|z|` without requiring `num_traits::Float` on the real type.
#[inline]
pub fn modulus<R: Real>(z: C<R>) -> R {
    z.norm_sqr().sqrt()
}
