//! Scalar abstraction: the tensor engine is generic over the float width.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};

/// Floating-point scalar usable by the tensor engine and vector helpers.
///
/// Implemented for `f32` and `f64`. Training runs on `f64`; the retrieval
/// index stores `f32`.
pub trait Scalar:
    Float + NumAssignOps + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for constants in generic code.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }

    /// Widening (or identity) conversion to `f64`.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Inner product with left-to-right accumulation.
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b) {
        acc = acc + *x * *y;
    }
    acc
}

/// Euclidean norm with left-to-right accumulation.
pub fn l2_norm<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

/// Cosine similarity; the caller must rule out zero-norm inputs.
pub fn cosine<S: Scalar>(a: &[S], b: &[S]) -> S {
    dot(a, b) / (l2_norm(a) * l2_norm(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_hand_value() {
        assert_eq!(dot(&[1.0f64, 2.0, 3.0], &[4.0, 5.0, 6.0]), 32.0);
        assert_eq!(dot(&[1.0f32, 2.0], &[3.0, 4.0]), 11.0f32);
    }

    #[test]
    fn cosine_of_parallel_and_orthogonal() {
        assert!((cosine(&[1.0f64, 0.0], &[2.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!(cosine(&[1.0f64, 0.0], &[0.0, 3.0]).abs() < 1e-15);
    }
}
