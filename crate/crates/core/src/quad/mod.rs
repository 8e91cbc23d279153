//! Numerical integration primitives: adaptive Gauss-Kronrod, endpoint
//! singularity removal, algebraic tail mapping, half-period summation of
//! oscillatory tails with Wynn epsilon acceleration, and Gauss-Legendre nodes.

mod gauss_kronrod;
mod gauss_legendre;
mod tails;
mod wynn;

use std::ops::{Add, Mul, Sub};

use num_complex::Complex;

use crate::scalar::Real;

pub use gauss_kronrod::{adaptive, adaptive_graded, gk21, AdaptiveOptions};
pub use gauss_legendre::{gauss_legendre, GaussLegendre};
pub use tails::{algebraic_tail, oscillatory_tail, power_start, TailOptions};
pub use wynn::Wynn;

/// Values that can be integrated: real scalars and complex numbers over them.
pub trait QuadValue<T: Real>:
    Copy + Send + Sync + Add<Output = Self> + Sub<Output = Self> + Mul<T, Output = Self>
{
    fn zero() -> Self;
    fn norm(self) -> T;
    fn recip(self) -> Self;
    fn is_finite(self) -> bool;
}

impl<T: Real> QuadValue<T> for T {
    #[inline]
    fn zero() -> Self {
        T::zero()
    }
    #[inline]
    fn norm(self) -> T {
        self.abs()
    }
    #[inline]
    fn recip(self) -> Self {
        T::one() / self
    }
    #[inline]
    fn is_finite(self) -> bool {
        Float::is_finite(self)
    }
}

impl<T: Real> QuadValue<T> for Complex<T> {
    #[inline]
    fn zero() -> Self {
        Complex::new(T::zero(), T::zero())
    }
    #[inline]
    fn norm(self) -> T {
        Complex::norm(self)
    }
    #[inline]
    fn recip(self) -> Self {
        self.inv()
    }
    #[inline]
    fn is_finite(self) -> bool {
        Float::is_finite(self.re) && Float::is_finite(self.im)
    }
}

use num_traits::Float;

/// Integral estimate with an absolute error estimate.
#[derive(Clone, Copy, Debug)]
pub struct Estimate<V, T> {
    pub value: V,
    pub abs_err: T,
    pub evals: usize,
    pub converged: bool,
}

impl<V: QuadValue<T>, T: Real> Estimate<V, T> {
    pub fn exact(value: V) -> Self {
        Estimate {
            value,
            abs_err: T::zero(),
            evals: 0,
            converged: true,
        }
    }

    /// Sum of two independent estimates; errors add.
    pub fn plus(self, other: Self) -> Self {
        Estimate {
            value: self.value + other.value,
            abs_err: self.abs_err + other.abs_err,
            evals: self.evals + other.evals,
            converged: self.converged && other.converged,
        }
    }

    pub fn scaled(self, s: T) -> Self {
        Estimate {
            value: self.value * s,
            abs_err: self.abs_err * s.abs(),
            ..self
        }
    }
}

impl<T: Real> Estimate<Complex<T>, T> {
    pub fn rotated(self, phase: Complex<T>) -> Self {
        Estimate {
            value: self.value * phase,
            abs_err: self.abs_err * phase.norm(),
            ..self
        }
    }
}
