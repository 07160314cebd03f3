//! Unevaluated sums `hi + lo` of two scalars.
//!
//! In float mode this is double-word arithmetic built on the error-free
//! transformations of [`Scalar`], good to roughly 32 significant digits. It
//! is used where a formula subtracts nearly equal quantities. In rational
//! mode `lo` stays zero and every operation is exact.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Wide<T> {
    pub hi: T,
    pub lo: T,
}

impl<T: Scalar> Wide<T> {
    pub fn new(x: T) -> Self {
        Wide { hi: x, lo: T::zero() }
    }

    pub fn zero() -> Self {
        Self::new(T::zero())
    }

    /// Nearest single scalar.
    pub fn value(&self) -> T {
        self.hi.clone() + self.lo.clone()
    }

    fn renorm(hi: T, lo: T) -> Self {
        let (h, l) = T::two_sum(&hi, &lo);
        Wide { hi: h, lo: l }
    }

    pub fn add(&self, o: &Self) -> Self {
        let (s, e) = T::two_sum(&self.hi, &o.hi);
        Self::renorm(s, e + self.lo.clone() + o.lo.clone())
    }

    pub fn neg(&self) -> Self {
        Wide { hi: -self.hi.clone(), lo: -self.lo.clone() }
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.neg())
    }

    pub fn mul(&self, o: &Self) -> Self {
        let (p, e) = T::two_prod(&self.hi, &o.hi);
        let cross = self.hi.clone() * o.lo.clone() + self.lo.clone() * o.hi.clone();
        Self::renorm(p, e + cross)
    }

    pub fn mul_scalar(&self, t: &T) -> Self {
        let (p, e) = T::two_prod(&self.hi, t);
        Self::renorm(p, e + self.lo.clone() * t.clone())
    }

    pub fn div(&self, o: &Self) -> Self {
        let q1 = self.hi.clone() / o.hi.clone();
        let r = self.sub(&o.mul_scalar(&q1));
        let q2 = r.hi / o.hi.clone();
        Self::renorm(q1, q2)
    }
}
