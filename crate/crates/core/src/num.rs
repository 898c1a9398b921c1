//! Floating-point abstraction shared by the precision-generic kernels.

use std::fmt::Debug;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;

pub trait Real: Float + LinalgScalar + ScalarOperand + Send + Sync + Debug + Default + 'static {
    fn as_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Real for f32 {
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Half-sample symmetric extension: `... b a | a b c ... y z | z y ...`.
///
/// Works for any offset, including images narrower than the padding.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Pearson correlation of two equally long sequences with f64 accumulation.
///
/// Returns `None` when either side has (numerically) zero variance.
pub fn pearson<A: Real, B: Real>(a: &[A], b: &[B]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.is_empty() {
        return None;
    }
    let ma = a.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let mb = b.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let dx = x.as_f64() - ma;
        let dy = y.as_f64() - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if is_degenerate(saa / n, ma) || is_degenerate(sbb / n, mb) {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Zero-variance test tolerant to the rounding left behind by the mean.
#[inline]
pub(crate) fn is_degenerate(variance: f64, mean: f64) -> bool {
    let sd = variance.max(0.0).sqrt();
    sd == 0.0 || sd <= 1e-10 * mean.abs()
}
