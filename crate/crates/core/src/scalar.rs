use std::fmt::Debug;

use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Scalar type for ratios and averages.
///
/// Anything with field arithmetic and a conversion from counts qualifies:
/// `f32`, `f64` and `num_rational::Ratio<i64>` are the intended choices.
pub trait Scalar: Num + FromPrimitive + ToPrimitive + Clone + PartialOrd + Debug + Send + Sync {
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// `num / den`. `den` must be non-zero.
    fn ratio(num: usize, den: usize) -> Self {
        debug_assert!(den > 0);
        Self::from_count(num) / Self::from_count(den)
    }

    fn as_f64(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where T: Num + FromPrimitive + ToPrimitive + Clone + PartialOrd + Debug + Send + Sync {}

/// Arithmetic mean of the given values, `None` when empty.
pub fn mean<S: Scalar>(values: impl IntoIterator<Item = S>) -> Option<S> {
    let mut n = 0usize;
    let mut acc = S::zero();
    for v in values {
        acc = acc + v;
        n += 1;
    }
    (n > 0).then(|| acc / S::from_count(n))
}
