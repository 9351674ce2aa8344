//! Floating-point scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// A real scalar the numeric kernels can run on.
///
/// Implemented for `f32` and `f64`. The experiment pipeline runs on `f64`;
/// `f32` exists for quick smoke runs and for exercising the generic code.
pub trait Scalar:
    Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// `y[i] += alpha * x[i]` over the common length, element by element.
    ///
    /// Every implementation performs one rounded multiply and one rounded
    /// add per element (no fused multiply-add), so results are bitwise
    /// identical to the plain scalar loop regardless of vector width.
    fn axpy(alpha: Self, x: &[Self], y: &mut [Self]) {
        for (yi, &xi) in y.iter_mut().zip(x) {
            *yi = *yi + alpha * xi;
        }
    }

    /// `out += a · B` for one row `a` (length `k`) and a row-major `B`
    /// (`k × n`), accumulating each output entry over `k` in ascending
    /// order. With `skip_zero`, terms whose coefficient `a[k]` is exactly
    /// zero are skipped.
    fn row_times_matrix(a: &[Self], b: &[Self], n: usize, out: &mut [Self], skip_zero: bool) {
        row_times_matrix_blocked::<Self, 8>(a, b, n, out, skip_zero)
    }

    /// Converts an `f64` constant.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

#[inline(always)]
fn axpy_plain<T: Copy + std::ops::Add<Output = T> + std::ops::Mul<Output = T>>(
    alpha: T,
    x: &[T],
    y: &mut [T],
) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Register-blocked row kernel: `W` output entries stay in an accumulator
/// array while `k` runs, so each entry sees the same sequence of rounded
/// multiply-then-add operations as the naive loop.
#[inline(always)]
fn row_times_matrix_blocked<T, const W: usize>(a: &[T], b: &[T], n: usize, out: &mut [T], skip_zero: bool)
where
    T: Copy + PartialEq + Default + std::ops::Add<Output = T> + std::ops::Mul<Output = T>,
{
    debug_assert_eq!(b.len(), a.len() * n);
    debug_assert_eq!(out.len(), n);
    let zero = T::default();
    let full = n / W * W;
    let mut j0 = 0;
    while j0 < full {
        let mut acc = [zero; W];
        acc.copy_from_slice(&out[j0..j0 + W]);
        for (&ak, brow) in a.iter().zip(b.chunks_exact(n)) {
            if skip_zero && ak == zero {
                continue;
            }
            let brow: &[T; W] = brow[j0..j0 + W].try_into().expect("block width");
            for t in 0..W {
                acc[t] = acc[t] + ak * brow[t];
            }
        }
        out[j0..j0 + W].copy_from_slice(&acc);
        j0 += W;
    }
    if full < n {
        for (k, &ak) in a.iter().enumerate() {
            if skip_zero && ak == zero {
                continue;
            }
            let brow = &b[k * n + full..(k + 1) * n];
            for (o, &bv) in out[full..].iter_mut().zip(brow) {
                *o = *o + ak * bv;
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx {
    // Only AVX (wider registers) is enabled here, never FMA, so the
    // per-element arithmetic matches the baseline SSE2 path exactly.
    #[target_feature(enable = "avx")]
    pub unsafe fn axpy_f64(alpha: f64, x: &[f64], y: &mut [f64]) {
        super::axpy_plain(alpha, x, y)
    }

    #[target_feature(enable = "avx512f")]
    pub unsafe fn row_times_matrix_f64_512(a: &[f64], b: &[f64], n: usize, out: &mut [f64], skip_zero: bool) {
        super::row_times_matrix_blocked::<f64, 64>(a, b, n, out, skip_zero)
    }

    #[target_feature(enable = "avx")]
    pub unsafe fn row_times_matrix_f64(a: &[f64], b: &[f64], n: usize, out: &mut [f64], skip_zero: bool) {
        super::row_times_matrix_blocked::<f64, 32>(a, b, n, out, skip_zero)
    }

    #[target_feature(enable = "avx")]
    pub unsafe fn row_times_matrix_f32(a: &[f32], b: &[f32], n: usize, out: &mut [f32], skip_zero: bool) {
        super::row_times_matrix_blocked::<f32, 32>(a, b, n, out, skip_zero)
    }

    #[target_feature(enable = "avx")]
    pub unsafe fn axpy_f32(alpha: f32, x: &[f32], y: &mut [f32]) {
        super::axpy_plain(alpha, x, y)
    }
}

#[cfg(target_arch = "x86_64")]
fn has_avx() -> bool {
    use std::sync::OnceLock;
    static AVX: OnceLock<bool> = OnceLock::new();
    *AVX.get_or_init(|| std::is_x86_feature_detected!("avx"))
}

#[cfg(target_arch = "x86_64")]
fn has_avx512() -> bool {
    use std::sync::OnceLock;
    static AVX512: OnceLock<bool> = OnceLock::new();
    *AVX512.get_or_init(|| std::is_x86_feature_detected!("avx512f"))
}

impl Scalar for f64 {
    #[inline]
    fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
        #[cfg(target_arch = "x86_64")]
        if has_avx() {
            // SAFETY: the CPU supports AVX (checked at runtime).
            unsafe { avx::axpy_f64(alpha, x, y) };
            return;
        }
        axpy_plain(alpha, x, y)
    }

    #[inline]
    fn row_times_matrix(a: &[f64], b: &[f64], n: usize, out: &mut [f64], skip_zero: bool) {
        #[cfg(target_arch = "x86_64")]
        if has_avx512() {
            // SAFETY: the CPU supports AVX-512F (checked at runtime).
            unsafe { avx::row_times_matrix_f64_512(a, b, n, out, skip_zero) };
            return;
        }
        #[cfg(target_arch = "x86_64")]
        if has_avx() {
            // SAFETY: the CPU supports AVX (checked at runtime).
            unsafe { avx::row_times_matrix_f64(a, b, n, out, skip_zero) };
            return;
        }
        row_times_matrix_blocked::<f64, 8>(a, b, n, out, skip_zero)
    }
}

impl Scalar for f32 {
    #[inline]
    fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
        #[cfg(target_arch = "x86_64")]
        if has_avx() {
            // SAFETY: the CPU supports AVX (checked at runtime).
            unsafe { avx::axpy_f32(alpha, x, y) };
            return;
        }
        axpy_plain(alpha, x, y)
    }

    #[inline]
    fn row_times_matrix(a: &[f32], b: &[f32], n: usize, out: &mut [f32], skip_zero: bool) {
        #[cfg(target_arch = "x86_64")]
        if has_avx() {
            // SAFETY: the CPU supports AVX (checked at runtime).
            unsafe { avx::row_times_matrix_f32(a, b, n, out, skip_zero) };
            return;
        }
        row_times_matrix_blocked::<f32, 16>(a, b, n, out, skip_zero)
    }
}
