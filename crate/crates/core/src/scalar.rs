//! Scalar abstraction shared by the geometric and clustering kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar: `f32` or `f64`.
///
/// Everything numeric in the crate (geometry, clustering, spectra, camera
/// models) is written against this trait; the pipeline itself runs on the
/// `f64` aliases exported from the crate root.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + rustfft::FftNum
    + serde::Serialize
    + serde::de::DeserializeOwned
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn c(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize is representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        <Self as ToPrimitive>::to_f32(&self).unwrap_or(f32::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Floor to `i32`, saturating at the integer range.
#[inline]
pub(crate) fn floor_i32<T: Real>(v: T) -> i32 {
    let f = v.floor().to_f64_lossy();
    f.clamp(i32::MIN as f64, i32::MAX as f64) as i32
}

/// Total order on reals where NaN sorts last.
#[inline]
pub(crate) fn total_cmp<T: Real>(a: &T, b: &T) -> std::cmp::Ordering {
    a.partial_cmp(b).unwrap_or_else(|| match (a.is_nan(), b.is_nan()) {
        (true, true) => std::cmp::Ordering::Equal,
        (true, false) => std::cmp::Ordering::Greater,
        _ => std::cmp::Ordering::Less,
    })
}
