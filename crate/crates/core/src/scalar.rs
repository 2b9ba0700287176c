//! Floating-point abstraction for signal values.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real type used for surprisal/entropy values and thresholds: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Linear-interpolation quantile (numpy's default) of `values` at `q ∈ [0, 1]`.
///
/// Returns `None` for an empty slice or `q` outside `[0, 1]`.
pub fn quantile<F: Scalar>(values: &[F], q: f64) -> Option<F> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut sorted: Vec<F> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("signal values are finite"));
    Some(quantile_sorted(&sorted, q))
}

/// Same as [`quantile`] on an already sorted slice.
pub fn quantile_sorted<F: Scalar>(sorted: &[F], q: f64) -> F {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = F::from_f64_lossy(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let v = [4.0_f64, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.0), Some(1.0));
        assert_eq!(quantile(&v, 1.0), Some(4.0));
        assert!((quantile(&v, 0.5).unwrap() - 2.5).abs() < 1e-12);
        assert!((quantile(&v, 0.3).unwrap() - 1.9).abs() < 1e-12);
        assert_eq!(quantile::<f64>(&[], 0.5), None);
        assert_eq!(quantile(&v, 1.5), None);
    }

    #[test]
    fn works_for_f32() {
        let v = [1.0_f32, 2.0];
        assert!((quantile(&v, 0.25).unwrap() - 1.25).abs() < 1e-6);
    }
}
