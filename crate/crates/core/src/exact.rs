//! Integer kernels for long exact convolutions.
//!
//! Summing `BigRational` products reduces by a gcd at every step, which
//! dominates once numerators reach thousands of digits. Here each sequence
//! is held as integer numerators over one shared denominator, so a
//! convolution coefficient is a plain integer dot product followed by a
//! single reduction.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{Integer, One, Zero};

/// Numerators `num[k]` over the common denominator `den`.
#[derive(Debug, Clone)]
pub(crate) struct CommonDenom {
    num: Vec<BigInt>,
    den: BigInt,
}

impl CommonDenom {
    pub(crate) fn new() -> Self {
        CommonDenom { num: Vec::new(), den: BigInt::one() }
    }

    pub(crate) fn from_slice(v: &[BigRational]) -> Self {
        let mut c = CommonDenom::new();
        for r in v {
            c.push(r);
        }
        c
    }

    pub(crate) fn len(&self) -> usize {
        self.num.len()
    }

    pub(crate) fn push(&mut self, r: &BigRational) {
        let (q, rem) = self.den.div_rem(r.denom());
        if rem.is_zero() {
            self.num.push(r.numer() * q);
            return;
        }
        let f = r.denom() / self.den.gcd(r.denom());
        for n in &mut self.num {
            *n *= &f;
        }
        self.den *= &f;
        self.num.push(r.numer() * (&self.den / r.denom()));
    }

    /// `sum_{j in range} a[j] b[k - j]` as an integer over `a.den * b.den`.
    fn dot(a: &CommonDenom, b: &CommonDenom, k: usize, lo: usize, hi: usize) -> BigInt {
        let mut acc = BigInt::zero();
        for j in lo..=hi {
            let (x, y) = (&a.num[j], &b.num[k - j]);
            if !x.is_zero() && !y.is_zero() {
                acc += x * y;
            }
        }
        acc
    }

    /// `(a * b)(k)` with missing entries treated as zero.
    pub(crate) fn convolve_at(a: &CommonDenom, b: &CommonDenom, k: usize) -> BigRational {
        if a.len() == 0 || b.len() == 0 {
            return BigRational::zero();
        }
        let lo = k.saturating_sub(b.len() - 1);
        let hi = k.min(a.len() - 1);
        if lo > hi {
            return BigRational::zero();
        }
        BigRational::new(Self::dot(a, b, k, lo, hi), &a.den * &b.den)
    }
}

/// Extends `pi`, `varpi` (via `k x(k) = ± sum_{j<k} x(j) κ(k-1-j)`) and
/// `u = W * varpi` to index `horizon`, starting at the current length of `u`.
pub(crate) fn extend_pi_varpi_u(
    kappa: &[BigRational],
    w: &[BigRational],
    pi: &mut Vec<BigRational>,
    varpi: &mut Vec<BigRational>,
    u: &mut Vec<BigRational>,
    horizon: usize,
) {
    let ck = CommonDenom::from_slice(kappa);
    let cw = CommonDenom::from_slice(w);
    let mut cp = CommonDenom::from_slice(pi);
    let mut cv = CommonDenom::from_slice(varpi);
    for k in pi.len()..=horizon {
        let (p, v) = if k == 0 {
            (BigRational::one(), BigRational::one())
        } else {
            let kk = BigInt::from(k);
            let den = &ck.den * &kk;
            let a = CommonDenom::dot(&cp, &ck, k - 1, 0, k - 1);
            let b = CommonDenom::dot(&cv, &ck, k - 1, 0, k - 1);
            (BigRational::new(a, &cp.den * &den), BigRational::new(-b, &cv.den * &den))
        };
        cp.push(&p);
        cv.push(&v);
        pi.push(p);
        varpi.push(v);
    }
    for k in u.len()..=horizon {
        u.push(CommonDenom::convolve_at(&cw, &cv, k));
    }
}
