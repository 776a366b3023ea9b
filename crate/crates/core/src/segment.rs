//! Temporal segments and their overlap.

use serde::{Deserialize, Serialize};

/// A closed time interval `[start, end]`, in seconds or snippet units depending on context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub const fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn length(&self) -> f64 {
        (self.end - self.start).max(0.0)
    }

    pub fn intersection(&self, other: &Segment) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }
}

/// Temporal intersection-over-union. Disjoint or zero-length inputs give 0.
pub fn tiou(a: &Segment, b: &Segment) -> f64 {
    let inter = a.intersection(b);
    let union = a.length() + b.length() - inter;
    if union <= 0.0 || inter <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spot_values() {
        let a = Segment::new(0.0, 10.0);
        assert_eq!(tiou(&a, &a), 1.0);
        assert_eq!(tiou(&a, &Segment::new(11.0, 12.0)), 0.0);
        assert_eq!(tiou(&a, &Segment::new(5.0, 15.0)), 5.0 / 15.0);
        assert_eq!(tiou(&Segment::new(3.0, 3.0), &a), 0.0);
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(s1 in -50.0..50.0f64, l1 in 0.0..30.0f64, s2 in -50.0..50.0f64, l2 in 0.0..30.0f64) {
            let a = Segment::new(s1, s1 + l1);
            let b = Segment::new(s2, s2 + l2);
            let v = tiou(&a, &b);
            prop_assert_eq!(v, tiou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
