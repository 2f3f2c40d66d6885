//! Scalar abstraction and the hot inner loops.
//!
//! All layer math is generic over [`Scalar`] so the same code runs in
//! f32 for training/inference and f64 for finite-difference checks.
//! The f32 bulk kernels dispatch to AVX2 when the CPU has it.
//!
//! The elementwise kernels (`axpy`, `axpy4`) use an unfused multiply
//! then add in both the vector body and the scalar tail, so a given
//! element's result does not depend on how the slice was partitioned.
//! Tiled inference relies on this to be bitwise equal to a full-image
//! pass. The reducing kernels (`dot`, `sum`) may reassociate and are
//! only used where the operand length is fixed by the caller.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + PartialOrd
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn max(self, other: Self) -> Self;
    fn is_finite(self) -> bool;

    /// y[i] += a * x[i]
    fn axpy(a: Self, x: &[Self], y: &mut [Self]) {
        debug_assert_eq!(x.len(), y.len());
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += a * *xi;
        }
    }

    /// y[i] += a0*x0[i] + a1*x1[i] + a2*x2[i] + a3*x3[i], in that order.
    fn axpy4(a: [Self; 4], xs: [&[Self]; 4], y: &mut [Self]) {
        let n = y.len();
        debug_assert!(xs.iter().all(|x| x.len() == n));
        for i in 0..n {
            let mut acc = y[i];
            acc = acc + a[0] * xs[0][i];
            acc = acc + a[1] * xs[1][i];
            acc = acc + a[2] * xs[2][i];
            acc = acc + a[3] * xs[3][i];
            y[i] = acc;
        }
    }

    fn dot(x: &[Self], y: &[Self]) -> Self {
        debug_assert_eq!(x.len(), y.len());
        let mut acc = Self::ZERO;
        for (xi, yi) in x.iter().zip(y) {
            acc += *xi * *yi;
        }
        acc
    }

    fn sum(x: &[Self]) -> Self {
        let mut acc = Self::ZERO;
        for xi in x {
            acc += *xi;
        }
        acc
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn max(self, other: Self) -> Self {
        f64::max(self, other)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn max(self, other: Self) -> Self {
        f32::max(self, other)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }

    fn axpy(a: Self, x: &[Self], y: &mut [Self]) {
        debug_assert_eq!(x.len(), y.len());
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            unsafe { avx::axpy(a, x, y) };
            return;
        }
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += a * *xi;
        }
    }

    fn axpy4(a: [Self; 4], xs: [&[Self]; 4], y: &mut [Self]) {
        let n = y.len();
        debug_assert!(xs.iter().all(|x| x.len() == n));
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            unsafe { avx::axpy4(a, xs, y) };
            return;
        }
        for i in 0..n {
            let mut acc = y[i];
            acc += a[0] * xs[0][i];
            acc += a[1] * xs[1][i];
            acc += a[2] * xs[2][i];
            acc += a[3] * xs[3][i];
            y[i] = acc;
        }
    }

    fn dot(x: &[Self], y: &[Self]) -> Self {
        debug_assert_eq!(x.len(), y.len());
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            return unsafe { avx::dot(x, y) };
        }
        let mut acc = 0.0;
        for (xi, yi) in x.iter().zip(y) {
            acc += *xi * *yi;
        }
        acc
    }

    fn sum(x: &[Self]) -> Self {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            return unsafe { avx::sum(x) };
        }
        let mut acc = 0.0;
        for xi in x {
            acc += *xi;
        }
        acc
    }
}

#[cfg(target_arch = "x86_64")]
mod avx {
    use std::arch::x86_64::*;

    /// Unfused mul-then-add, matching the scalar tail exactly per lane.
    #[target_feature(enable = "avx2")]
    pub unsafe fn axpy(a: f32, x: &[f32], y: &mut [f32]) {
        let n = y.len();
        let va = _mm256_set1_ps(a);
        let body = n / 8 * 8;
        let mut i = 0;
        while i < body {
            let xv = _mm256_loadu_ps(x.as_ptr().add(i));
            let yv = _mm256_loadu_ps(y.as_mut_ptr().add(i));
            let r = _mm256_add_ps(yv, _mm256_mul_ps(va, xv));
            _mm256_storeu_ps(y.as_mut_ptr().add(i), r);
            i += 8;
        }
        while i < n {
            *y.get_unchecked_mut(i) += a * *x.get_unchecked(i);
            i += 1;
        }
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn axpy4(a: [f32; 4], xs: [&[f32]; 4], y: &mut [f32]) {
        let n = y.len();
        let va: [__m256; 4] = [
            _mm256_set1_ps(a[0]),
            _mm256_set1_ps(a[1]),
            _mm256_set1_ps(a[2]),
            _mm256_set1_ps(a[3]),
        ];
        let body = n / 8 * 8;
        let mut i = 0;
        while i < body {
            let mut acc = _mm256_loadu_ps(y.as_mut_ptr().add(i));
            for k in 0..4 {
                let xv = _mm256_loadu_ps(xs[k].as_ptr().add(i));
                acc = _mm256_add_ps(acc, _mm256_mul_ps(va[k], xv));
            }
            _mm256_storeu_ps(y.as_mut_ptr().add(i), acc);
            i += 8;
        }
        while i < n {
            let mut acc = *y.get_unchecked(i);
            for k in 0..4 {
                acc += a[k] * *xs[k].get_unchecked(i);
            }
            *y.get_unchecked_mut(i) = acc;
            i += 1;
        }
    }

    #[target_feature(enable = "avx2", enable = "fma")]
    pub unsafe fn dot(x: &[f32], y: &[f32]) -> f32 {
        let n = x.len();
        let body = n / 8 * 8;
        let mut acc = _mm256_setzero_ps();
        let mut i = 0;
        while i < body {
            let xv = _mm256_loadu_ps(x.as_ptr().add(i));
            let yv = _mm256_loadu_ps(y.as_ptr().add(i));
            acc = _mm256_fmadd_ps(xv, yv, acc);
            i += 8;
        }
        let mut buf = [0f32; 8];
        _mm256_storeu_ps(buf.as_mut_ptr(), acc);
        let mut total = buf.iter().sum::<f32>();
        while i < n {
            total += *x.get_unchecked(i) * *y.get_unchecked(i);
            i += 1;
        }
        total
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn sum(x: &[f32]) -> f32 {
        let n = x.len();
        let body = n / 8 * 8;
        let mut acc = _mm256_setzero_ps();
        let mut i = 0;
        while i < body {
            acc = _mm256_add_ps(acc, _mm256_loadu_ps(x.as_ptr().add(i)));
            i += 8;
        }
        let mut buf = [0f32; 8];
        _mm256_storeu_ps(buf.as_mut_ptr(), acc);
        let mut total = buf.iter().sum::<f32>();
        while i < n {
            total += *x.get_unchecked(i);
            i += 1;
        }
        total
    }
}
