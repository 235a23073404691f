//! Reductions with eight independent partial sums, which lets the compiler
//! vectorize them. Summation order is fixed, so results are deterministic.

use crate::scalar::Scalar;

const LANES: usize = 8;

#[inline]
fn fold<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> T {
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| f(x, y)).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] += f(x[i], y[i]);
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

#[inline]
pub(crate) fn sum<T: Scalar>(a: &[T]) -> T {
    fold(a, a, |x, _| x)
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    fold(a, b, |x, y| x * y)
}

/// `sum((a - m)^2)`.
#[inline]
pub(crate) fn sum_sq_dev<T: Scalar>(a: &[T], m: T) -> T {
    fold(a, a, |x, _| (x - m) * (x - m))
}

/// `sum(g * (a - m))`.
#[inline]
pub(crate) fn dot_dev<T: Scalar>(a: &[T], g: &[T], m: T) -> T {
    fold(a, g, |x, y| y * (x - m))
}
