//! Simple closed convex sets with exact Euclidean projections.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Axis-aligned box `lower ≤ x ≤ upper`. Infinite bounds leave a coordinate
/// unconstrained, so `BoxSet::unbounded(n)` is all of `ℝⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (index, (&lo, &hi)) in lower.iter().zip(upper.iter()).enumerate() {
            // NaN bounds fail this test too.
            if !(lo <= hi) {
                return Err(Error::InvalidBounds {
                    index,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn from_slices(lower: &[f64], upper: &[f64]) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(lower),
            DVector::from_column_slice(upper),
        )
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    /// Same bounds `[lo, hi]` on every coordinate.
    pub fn uniform(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(DVector::from_element(n, lo), DVector::from_element(n, hi))
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            })
        }
    }

    /// Componentwise clamp, the Euclidean projection onto the box.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x.len())?;
        let mut y = x.clone();
        self.project_in_place(&mut y);
        Ok(y)
    }

    /// Projection without the dimension check, for hot loops whose callers
    /// have already validated sizes.
    pub(crate) fn project_in_place(&self, x: &mut DVector<f64>) {
        for ((xi, &lo), &hi) in x.iter_mut().zip(self.lower.iter()).zip(self.upper.iter()) {
            *xi = xi.max(lo).min(hi);
        }
    }

    /// `lower − tol ≤ x ≤ upper + tol` componentwise. Mismatched dimensions
    /// are reported as not contained.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(&xi, (&lo, &hi))| xi >= lo - tol && xi <= hi + tol)
    }

    /// Sub-box with every coordinate additionally clipped to `[lo, hi]` on the
    /// given index range. Used to draw sample points from a bounded slice of an
    /// unbounded or wide set.
    pub fn restricted(&self, range: std::ops::Range<usize>, lo: f64, hi: f64) -> Result<Self> {
        let mut lower = self.lower.clone();
        let mut upper = self.upper.clone();
        for i in range {
            if i >= self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    got: i + 1,
                });
            }
            lower[i] = lower[i].max(lo);
            upper[i] = upper[i].min(hi);
        }
        Self::new(lower, upper)
    }
}

/// Closed Euclidean ball `‖s − center‖ ≤ radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallSet {
    center: DVector<f64>,
    radius: f64,
}

impl BallSet {
    pub fn new(center: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::NegativeRadius(radius));
        }
        Ok(Self { center, radius })
    }

    /// Unit ball centered at the origin of `ℝᵐ`.
    pub fn unit(m: usize) -> Self {
        Self {
            center: DVector::zeros(m),
            radius: 1.0,
        }
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn project(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        if s.len() != self.center.len() {
            return Err(Error::DimensionMismatch {
                expected: self.center.len(),
                got: s.len(),
            });
        }
        let offset = s - &self.center;
        let dist = offset.norm();
        if dist <= self.radius {
            Ok(s.clone())
        } else {
            Ok(&self.center + offset * (self.radius / dist))
        }
    }
}

/// Projection onto the origin-centered ball of the given radius, in place.
pub(crate) fn project_onto_ball(s: &mut DVector<f64>, radius: f64) {
    let norm = s.norm();
    if norm > radius {
        *s *= radius / norm;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn box_projection_examples() {
        let unit = BoxSet::uniform(2, 0.0, 1.0).unwrap();
        assert_eq!(unit.project(&v(&[2.0, -1.0])).unwrap(), v(&[1.0, 0.0]));
        assert_eq!(unit.project(&v(&[0.5, 0.5])).unwrap(), v(&[0.5, 0.5]));
        let free = BoxSet::unbounded(1);
        assert_eq!(free.project(&v(&[3.0])).unwrap(), v(&[3.0]));
    }

    #[test]
    fn box_rejects_bad_input() {
        assert!(matches!(
            BoxSet::from_slices(&[1.0], &[0.0]),
            Err(Error::InvalidBounds { index: 0, .. })
        ));
        assert!(BoxSet::from_slices(&[0.0, 0.0], &[1.0]).is_err());
        let unit = BoxSet::uniform(2, 0.0, 1.0).unwrap();
        assert!(matches!(
            unit.project(&v(&[1.0])),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn ball_projection_examples() {
        let ball = BallSet::unit(2);
        let p = ball.project(&v(&[3.0, 4.0])).unwrap();
        assert!((p - v(&[0.6, 0.8])).norm() < 1e-15);
        assert_eq!(ball.project(&v(&[0.3, 0.0])).unwrap(), v(&[0.3, 0.0]));
        assert_eq!(ball.project(&v(&[0.0, 0.0])).unwrap(), v(&[0.0, 0.0]));
        assert!(BallSet::new(v(&[0.0]), -1.0).is_err());
    }

    #[test]
    fn contains_examples() {
        let unit = BoxSet::uniform(1, 0.0, 1.0).unwrap();
        assert!(unit.contains(&v(&[0.5]), 0.0));
        assert!(unit.contains(&v(&[1.0000001]), 1e-6));
        assert!(!unit.contains(&v(&[2.0]), 0.0));
    }

    #[test]
    fn restricted_clips_only_the_range() {
        let b = BoxSet::unbounded(3).restricted(1..3, -0.5, 0.5).unwrap();
        assert_eq!(b.lower()[0], f64::NEG_INFINITY);
        assert_eq!(b.lower()[1], -0.5);
        assert_eq!(b.upper()[2], 0.5);
    }

    fn boxed_point(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(-5.0..0.0f64, n),
            prop::collection::vec(0.0..5.0f64, n),
            prop::collection::vec(-10.0..10.0f64, n),
            prop::collection::vec(-10.0..10.0f64, n),
        )
    }

    proptest! {
        #[test]
        fn box_projection_is_nonexpansive_and_idempotent((lo, hi, x, z) in boxed_point(4)) {
            let set = BoxSet::from_slices(&lo, &hi).unwrap();
            let (x, z) = (v(&x), v(&z));
            let px = set.project(&x).unwrap();
            let pz = set.project(&z).unwrap();
            prop_assert!((&px - &pz).norm() <= (&x - &z).norm() + 1e-12);
            prop_assert_eq!(set.project(&px).unwrap(), px.clone());
            prop_assert!(set.contains(&px, 0.0));
        }

        #[test]
        fn box_projection_is_nearest_point(
            (lo, hi, x, _z) in boxed_point(3),
            fractions in prop::collection::vec(prop::collection::vec(0.0..=1.0f64, 3), 100),
        ) {
            let set = BoxSet::from_slices(&lo, &hi).unwrap();
            let x = v(&x);
            let best = (set.project(&x).unwrap() - &x).norm();
            for f in fractions {
                let y = DVector::from_iterator(3, (0..3).map(|i| lo[i] + f[i] * (hi[i] - lo[i])));
                prop_assert!(best <= (&y - &x).norm() + 1e-12);
            }
        }

        #[test]
        fn ball_projection_stays_inside(
            s in prop::collection::vec(-10.0..10.0f64, 3),
            c in prop::collection::vec(-1.0..1.0f64, 3),
            r in 0.0..3.0f64,
        ) {
            let ball = BallSet::new(v(&c), r).unwrap();
            let p = ball.project(&v(&s)).unwrap();
            prop_assert!((&p - ball.center()).norm() <= r * (1.0 + 1e-12) + 1e-15);
            prop_assert!((ball.project(&p).unwrap() - &p).norm() <= 1e-12);
        }
    }
}
