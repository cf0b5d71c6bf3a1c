//! Scalar abstraction.
//!
//! All arithmetic is done in complex numbers over a real precision type `T`
//! (`f32` or `f64`). Real problems (gradient flows) run through the same
//! complex code path; their imaginary parts stay at round-off level.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};

/// Complex scalar over the real type `T`.
pub type C<T> = Complex<T>;

/// Real precision usable by the integrator.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Machine epsilon of the type.
    fn eps() -> Self;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 literal")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    fn eps() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    fn eps() -> Self {
        f64::EPSILON
    }
}

#[inline]
pub fn c<T: Real>(re: T, im: T) -> C<T> {
    Complex::new(re, im)
}

#[inline]
pub fn cr<T: Real>(re: f64) -> C<T> {
    Complex::new(T::of(re), T::zero())
}

#[inline]
pub fn czero<T: Real>() -> C<T> {
    Complex::new(T::zero(), T::zero())
}

#[inline]
pub fn cone<T: Real>() -> C<T> {
    Complex::new(T::one(), T::zero())
}

/// Imaginary unit.
#[inline]
pub fn ci<T: Real>() -> C<T> {
    Complex::new(T::zero(), T::one())
}

#[inline]
pub fn is_finite<T: Real>(z: C<T>) -> bool {
    z.re.to_f64_lossy().is_finite() && z.im.to_f64_lossy().is_finite()
}

/// Modulus `|z|`.
#[inline]
pub fn cabs<T: Real>(z: C<T>) -> T {
    z.norm_sqr().sqrt()
}
