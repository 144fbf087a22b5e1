//! Finite unions of closed intervals with rational endpoints.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use crate::error::{invalid, Result};

pub type Q = BigRational;

/// Exact rational value of a finite float.
pub fn q(x: f64) -> Result<Q> {
    BigRational::from_float(x).ok_or_else(|| crate::Error::InvalidInput(format!("{x} is not a finite number")))
}

pub fn q_ratio(num: i64, den: i64) -> Q {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn f(x: &Q) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Sorted, pairwise disjoint, non-degenerate closed intervals.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct IntervalUnion {
    pieces: Vec<(Q, Q)>,
}

impl IntervalUnion {
    pub fn empty() -> Self {
        IntervalUnion { pieces: Vec::new() }
    }

    /// Normalizes arbitrary intervals: drops empty ones, merges overlaps and
    /// touching neighbours.
    pub fn new(mut raw: Vec<(Q, Q)>) -> Result<Self> {
        if raw.iter().any(|(a, b)| a > b) {
            return invalid("interval with lower end above upper end");
        }
        raw.retain(|(a, b)| a < b);
        raw.sort();
        let mut pieces: Vec<(Q, Q)> = Vec::with_capacity(raw.len());
        for (a, b) in raw {
            match pieces.last_mut() {
                Some(last) if a <= last.1 => {
                    if b > last.1 {
                        last.1 = b;
                    }
                }
                _ => pieces.push((a, b)),
            }
        }
        Ok(IntervalUnion { pieces })
    }

    pub fn from_f64(raw: &[(f64, f64)]) -> Result<Self> {
        let mut v = Vec::with_capacity(raw.len());
        for &(a, b) in raw {
            v.push((q(a)?, q(b)?));
        }
        Self::new(v)
    }

    pub fn pieces(&self) -> &[(Q, Q)] {
        &self.pieces
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn measure(&self) -> Q {
        self.pieces.iter().fold(Q::zero(), |acc, (a, b)| acc + (b - a))
    }

    pub fn start(&self) -> Option<&Q> {
        self.pieces.first().map(|p| &p.0)
    }

    pub fn end(&self) -> Option<&Q> {
        self.pieces.last().map(|p| &p.1)
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.pieces.len() && j < other.pieces.len() {
            let (a0, a1) = &self.pieces[i];
            let (b0, b1) = &other.pieces[j];
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if lo < hi {
                out.push((lo.clone(), hi.clone()));
            }
            if a1 < b1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        IntervalUnion { pieces: out }
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut all = self.pieces.clone();
        all.extend(other.pieces.iter().cloned());
        Self::new(all).expect("normalized inputs")
    }

    /// Set inclusion up to endpoints (measure-theoretic).
    pub fn is_subset(&self, other: &Self) -> bool {
        self.intersect(other).measure() == self.measure()
    }

    /// Disjoint up to shared endpoints.
    pub fn is_disjoint(&self, other: &Self) -> bool {
        self.intersect(other).is_empty()
    }

    /// Half-open membership `t in [a, b)` for some piece.
    pub fn contains_f64(&self, t: f64) -> bool {
        self.pieces.iter().any(|(a, b)| f(a) <= t && t < f(b))
    }

    /// `|self ∩ (-inf, t]|`.
    pub fn cumulative(&self, t: &Q) -> Q {
        let mut acc = Q::zero();
        for (a, b) in &self.pieces {
            if t <= a {
                break;
            }
            acc += t.min(b) - a;
        }
        acc
    }

    /// Portion of the set whose cumulative measure lies in `[lo, hi]`.
    pub fn slice_by_measure(&self, lo: &Q, hi: &Q) -> Self {
        let mut out = Vec::new();
        let mut acc = Q::zero();
        for (a, b) in &self.pieces {
            let len = b - a;
            let next = &acc + &len;
            let from = lo.max(&acc).clone();
            let to = hi.min(&next).clone();
            if from < to {
                out.push((a + (&from - &acc), a + (&to - &acc)));
            }
            acc = next;
            if &acc >= hi {
                break;
            }
        }
        IntervalUnion { pieces: out }
    }

    pub fn to_f64(&self) -> Vec<(f64, f64)> {
        self.pieces.iter().map(|(a, b)| (f(a), f(b))).collect()
    }

    /// All endpoints, sorted.
    pub fn endpoints(&self) -> Vec<Q> {
        self.pieces.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iu(v: &[(i64, i64)]) -> IntervalUnion {
        IntervalUnion::new(v.iter().map(|&(a, b)| (q_ratio(a, 1), q_ratio(b, 1))).collect()).unwrap()
    }

    #[test]
    fn normalization_merges() {
        let u = iu(&[(3, 4), (0, 1), (1, 2), (5, 5)]);
        assert_eq!(u.pieces().len(), 2);
        assert_eq!(u.measure(), q_ratio(3, 1));
    }

    #[test]
    fn slicing_by_measure() {
        let u = iu(&[(0, 1), (2, 4)]);
        let s = u.slice_by_measure(&q_ratio(1, 2), &q_ratio(2, 1));
        assert_eq!(s, IntervalUnion::new(vec![(q_ratio(1, 2), q_ratio(1, 1)), (q_ratio(2, 1), q_ratio(3, 1))]).unwrap());
        assert_eq!(u.cumulative(&q_ratio(3, 1)), q_ratio(2, 1));
    }

    #[test]
    fn set_relations() {
        let a = iu(&[(0, 2)]);
        let b = iu(&[(2, 3)]);
        assert!(a.is_disjoint(&b));
        assert!(iu(&[(0, 1)]).is_subset(&a));
        assert!(!b.is_subset(&a));
        assert_eq!(a.union(&b), iu(&[(0, 3)]));
    }
}
