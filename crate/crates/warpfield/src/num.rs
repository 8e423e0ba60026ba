//! Scalar abstractions: a `Real` trait unifying `f32`/`f64` across the
//! differentiable pipeline, and forward-mode dual numbers used to
//! differentiate the closed-form warp.
//!
//! Training runs in `f32` for throughput; verification and gradient checks
//! instantiate the same code at `f64`.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssignOps};
use rand::distributions::uniform::SampleUniform;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Floating-point scalar for field evaluation, rendering and losses.
pub trait Real:
    Float
    + FromPrimitive
    + NumAssignOps
    + LinalgScalar
    + ScalarOperand
    + SampleUniform
    + Sum
    + Display
    + Debug
    + Send
    + Sync
    + WarpScalar
    + 'static
{
    fn to64(self) -> f64;
}

impl Real for f32 {
    fn to64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn to64(self) -> f64 {
        self
    }
}

/// Shorthand cast from an `f64` literal into the active scalar type.
#[inline]
pub fn rl<S: Real>(x: f64) -> S {
    S::from(x).expect("f64 literal representable in scalar type")
}

/// Scalar interface needed by the closed-form screw warp.
///
/// Implemented for plain floats and for [`Dual`], so the same warp code
/// yields values, first derivatives and (via nesting) second derivatives.
/// Method names avoid clashing with `num_traits` so types can implement both.
pub trait WarpScalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn wzero() -> Self;
    fn wone() -> Self;
    fn wlit(x: f64) -> Self;
    /// Primal value, used only for branch decisions.
    fn value(self) -> f64;
    fn wsin(self) -> Self;
    fn wcos(self) -> Self;
    /// Square root with a guarded derivative: the tangent is forced to zero
    /// at the origin where the true derivative is unbounded.
    fn sqrt_guarded(self) -> Self;
}

macro_rules! impl_warp_scalar_float {
    ($t:ty) => {
        impl WarpScalar for $t {
            #[inline]
            fn wzero() -> Self {
                0.0
            }
            #[inline]
            fn wone() -> Self {
                1.0
            }
            #[inline]
            fn wlit(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn value(self) -> f64 {
                self as f64
            }
            #[inline]
            fn wsin(self) -> Self {
                <$t>::sin(self)
            }
            #[inline]
            fn wcos(self) -> Self {
                <$t>::cos(self)
            }
            #[inline]
            fn sqrt_guarded(self) -> Self {
                <$t>::sqrt(self)
            }
        }
    };
}

impl_warp_scalar_float!(f32);
impl_warp_scalar_float!(f64);

/// Forward-mode dual number carrying one directional derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub v: T,
    pub d: T,
}

impl<T: WarpScalar> Dual<T> {
    #[inline]
    pub fn constant(v: T) -> Self {
        Dual { v, d: T::wzero() }
    }

    #[inline]
    pub fn seeded(v: T) -> Self {
        Dual { v, d: T::wone() }
    }
}

impl<T: WarpScalar> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Dual {
            v: self.v + rhs.v,
            d: self.d + rhs.d,
        }
    }
}

impl<T: WarpScalar> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Dual {
            v: self.v - rhs.v,
            d: self.d - rhs.d,
        }
    }
}

impl<T: WarpScalar> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Dual {
            v: self.v * rhs.v,
            d: self.v * rhs.d + self.d * rhs.v,
        }
    }
}

impl<T: WarpScalar> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = T::wone() / rhs.v;
        Dual {
            v: self.v * inv,
            d: (self.d - self.v * inv * rhs.d) * inv,
        }
    }
}

impl<T: WarpScalar> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual {
            v: -self.v,
            d: -self.d,
        }
    }
}

impl<T: WarpScalar> WarpScalar for Dual<T> {
    #[inline]
    fn wzero() -> Self {
        Dual::constant(T::wzero())
    }
    #[inline]
    fn wone() -> Self {
        Dual::constant(T::wone())
    }
    #[inline]
    fn wlit(x: f64) -> Self {
        Dual::constant(T::wlit(x))
    }
    #[inline]
    fn value(self) -> f64 {
        self.v.value()
    }
    #[inline]
    fn wsin(self) -> Self {
        Dual {
            v: self.v.wsin(),
            d: self.d * self.v.wcos(),
        }
    }
    #[inline]
    fn wcos(self) -> Self {
        Dual {
            v: self.v.wcos(),
            d: -(self.d * self.v.wsin()),
        }
    }
    #[inline]
    fn sqrt_guarded(self) -> Self {
        let r = self.v.sqrt_guarded();
        if r.value() > 0.0 {
            let half = T::wlit(0.5);
            Dual {
                v: r,
                d: self.d * half / r,
            }
        } else {
            // Subgradient choice at the cone point keeps tangents finite.
            Dual {
                v: r,
                d: T::wzero(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_product_rule() {
        // f(x) = x^2 sin(x) at x = 0.7
        let x = Dual::<f64>::seeded(0.7);
        let f = x * x * x.wsin();
        let expected = 2.0 * 0.7 * 0.7f64.sin() + 0.7 * 0.7 * 0.7f64.cos();
        assert!((f.v - 0.49 * 0.7f64.sin()).abs() < 1e-15);
        assert!((f.d - expected).abs() < 1e-15);
    }

    #[test]
    fn dual_division_and_sqrt() {
        let x = Dual::<f64>::seeded(2.0);
        let f = Dual::constant(1.0) / x; // 1/x, derivative -1/x^2
        assert!((f.d + 0.25).abs() < 1e-15);
        let g = x.sqrt_guarded(); // derivative 1/(2 sqrt x)
        assert!((g.d - 1.0 / (2.0 * 2.0f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn nested_dual_second_derivative() {
        // f(x) = sin(x), f'' = -sin(x); mixed second derivative via nesting.
        let x = Dual::<Dual<f64>>::seeded(Dual::seeded(0.3));
        let f = x.wsin();
        assert!((f.d.d + 0.3f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn sqrt_guarded_zero_is_finite() {
        let x = Dual::<f64> { v: 0.0, d: 1.0 };
        let r = x.sqrt_guarded();
        assert_eq!(r.v, 0.0);
        assert_eq!(r.d, 0.0);
    }
}
