//! Scalar abstraction for the numeric core.
//!
//! All core math (networks, differentiation, optimizers, integrators) is
//! generic over [`Real`], implemented for `f32` and `f64`. The benchmark
//! tasks and the experiment harness pin `f64`; the finite-difference
//! tolerances used throughout the test suite are only meaningful at 64-bit
//! precision.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps, ToPrimitive};

pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + core::fmt::Debug
    + core::fmt::Display
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into the working scalar type.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}
