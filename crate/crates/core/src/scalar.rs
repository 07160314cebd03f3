//! Real-valued quantities in one of two arithmetic modes.
//!
//! Every model parameter and every table entry is a [`Scalar`]. The mode is
//! fixed by the type parameter, so a single computation can never mix
//! binary64 values with exact rationals.

use std::fmt;
use std::str::FromStr;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::traits::{FromPrimitive, Num, One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Arithmetic mode of a computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Float,
    Rational,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Float => f.write_str("float"),
            Mode::Rational => f.write_str("rational"),
        }
    }
}

impl FromStr for Mode {
    type Err = ScalarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "float" => Ok(Mode::Float),
            "rational" => Ok(Mode::Rational),
            other => Err(ScalarError::Parse(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScalarError {
    #[error("cannot parse scalar: {0}")]
    Parse(String),
    #[error("binary64 value {0} supplied in rational mode; write it as a \"p/q\" string")]
    MixedMode(f64),
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
}

/// A field element usable by every recursion and linear solve in the crate.
pub trait Scalar:
    Clone
    + fmt::Debug
    + fmt::Display
    + PartialOrd
    + Num
    + Signed
    + FromPrimitive
    + ToPrimitive
    + Send
    + Sync
    + 'static
{
    const MODE: Mode;

    fn from_int(n: i64) -> Self;

    fn ratio(num: i64, den: i64) -> Self {
        Self::from_int(num) / Self::from_int(den)
    }

    /// Nearest binary64 value (exact for `f64`).
    fn to_f64_lossy(&self) -> f64;

    /// Converts a binary64 value; rationals receive its exact dyadic expansion.
    fn from_f64_exact(x: f64) -> Self;

    /// Exact in rational mode, rounded in float mode.
    fn from_rational(r: &BigRational) -> Self;

    /// Borrows a slice as exact rationals when this is the rational mode.
    fn as_rationals(v: &[Self]) -> Option<&[BigRational]>;

    /// Moves exact rationals into this mode (rounding in float mode).
    fn from_rationals(v: Vec<BigRational>) -> Vec<Self> {
        v.iter().map(Self::from_rational).collect()
    }

    fn is_finite_value(&self) -> bool;

    /// `(s, e)` with `s + e = a + b` exactly and `s` the rounded sum.
    fn two_sum(a: &Self, b: &Self) -> (Self, Self) {
        (a.clone() + b.clone(), Self::zero())
    }

    /// `(p, e)` with `p + e = a b` exactly and `p` the rounded product.
    fn two_prod(a: &Self, b: &Self) -> (Self, Self) {
        (a.clone() * b.clone(), Self::zero())
    }

    /// `a == b` in rational mode, `|a - b| <= tol` in float mode.
    fn approx_eq(&self, other: &Self, tol: f64) -> bool;

    fn parse_str(s: &str) -> Result<Self, ScalarError>;

    fn parse_json(v: &Value) -> Result<Self, ScalarError> {
        match v {
            Value::String(s) => Self::parse_str(s),
            Value::Number(n) => Self::parse_number(n),
            other => Err(ScalarError::Parse(format!("expected number or string, got {other}"))),
        }
    }

    fn parse_number(n: &serde_json::Number) -> Result<Self, ScalarError>;

    fn to_json(&self) -> Value;

    fn powi(&self, exp: i64) -> Self {
        let mut base = if exp < 0 { Self::one() / self.clone() } else { self.clone() };
        let mut e = exp.unsigned_abs();
        let mut acc = Self::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base.clone();
            }
            base = base.clone() * base;
            e >>= 1;
        }
        acc
    }

    fn max_of(a: Self, b: Self) -> Self {
        if a >= b {
            a
        } else {
            b
        }
    }
}

impl Scalar for f64 {
    const MODE: Mode = Mode::Float;

    fn from_int(n: i64) -> Self {
        n as f64
    }

    fn to_f64_lossy(&self) -> f64 {
        *self
    }

    fn from_rational(r: &BigRational) -> Self {
        r.to_f64_lossy()
    }

    fn as_rationals(_: &[Self]) -> Option<&[BigRational]> {
        None
    }

    fn two_sum(a: &Self, b: &Self) -> (Self, Self) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn two_prod(a: &Self, b: &Self) -> (Self, Self) {
        let p = a * b;
        (p, a.mul_add(*b, -p))
    }

    fn from_f64_exact(x: f64) -> Self {
        x
    }

    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }

    fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        (self - other).abs() <= tol
    }

    fn parse_str(s: &str) -> Result<Self, ScalarError> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: f64 = n.trim().parse().map_err(|_| ScalarError::Parse(s.to_string()))?;
            let d: f64 = d.trim().parse().map_err(|_| ScalarError::Parse(s.to_string()))?;
            if d == 0.0 {
                return Err(ScalarError::ZeroDenominator(s.to_string()));
            }
            Ok(n / d)
        } else {
            s.parse().map_err(|_| ScalarError::Parse(s.to_string()))
        }
    }

    fn parse_number(n: &serde_json::Number) -> Result<Self, ScalarError> {
        n.as_f64().ok_or_else(|| ScalarError::Parse(n.to_string()))
    }

    fn to_json(&self) -> Value {
        serde_json::Number::from_f64(*self)
            .map(Value::Number)
            .unwrap_or_else(|| Value::String(self.to_string()))
    }

    fn powi(&self, exp: i64) -> Self {
        f64::powi(*self, exp as i32)
    }
}

fn parse_decimal(s: &str) -> Option<BigRational> {
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let all = format!("{int_part}{frac_part}");
    let mut num: BigInt = if all.is_empty() { BigInt::zero() } else { all.parse().ok()? };
    if neg {
        num = -num;
    }
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let r = if scale >= 0 {
        BigRational::from_integer(num * num::pow(ten, scale as usize))
    } else {
        BigRational::new(num, num::pow(ten, (-scale) as usize))
    };
    Some(r)
}

impl Scalar for BigRational {
    const MODE: Mode = Mode::Rational;

    fn from_int(n: i64) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }

    fn ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or_else(|| {
            // numerator or denominator beyond the f64 range: shift both
            let shift = self.numer().bits().max(self.denom().bits()).saturating_sub(1000);
            let n = (self.numer() >> shift).to_f64().unwrap_or(f64::NAN);
            let d = (self.denom() >> shift).to_f64().unwrap_or(f64::NAN);
            n / d
        })
    }

    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }

    fn as_rationals(v: &[Self]) -> Option<&[BigRational]> {
        Some(v)
    }

    fn from_rationals(v: Vec<BigRational>) -> Vec<Self> {
        v
    }

    fn from_f64_exact(x: f64) -> Self {
        BigRational::from_float(x).expect("finite binary64 value")
    }

    fn is_finite_value(&self) -> bool {
        true
    }

    fn approx_eq(&self, other: &Self, _tol: f64) -> bool {
        self == other
    }

    fn parse_str(s: &str) -> Result<Self, ScalarError> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n = parse_decimal(n.trim()).ok_or_else(|| ScalarError::Parse(s.to_string()))?;
            let d = parse_decimal(d.trim()).ok_or_else(|| ScalarError::Parse(s.to_string()))?;
            if d.is_zero() {
                return Err(ScalarError::ZeroDenominator(s.to_string()));
            }
            Ok(n / d)
        } else {
            parse_decimal(s).ok_or_else(|| ScalarError::Parse(s.to_string()))
        }
    }

    fn parse_number(n: &serde_json::Number) -> Result<Self, ScalarError> {
        if let Some(i) = n.as_i64() {
            return Ok(Self::from_int(i));
        }
        if let Some(u) = n.as_u64() {
            return Ok(BigRational::from_integer(BigInt::from(u)));
        }
        Err(ScalarError::MixedMode(n.as_f64().unwrap_or(f64::NAN)))
    }

    fn to_json(&self) -> Value {
        if self.is_integer() {
            Value::String(self.numer().to_string())
        } else {
            Value::String(format!("{}/{}", self.numer(), self.denom()))
        }
    }
}

/// Searches the continued-fraction convergents of `x` for a rational `r`
/// with denominator at most `max_den` such that `is_exact(r)` holds.
pub fn recognize_rational<F>(x: f64, max_den: i64, is_exact: F) -> Option<BigRational>
where
    F: Fn(&BigRational) -> bool,
{
    if !x.is_finite() {
        return None;
    }
    let (mut h0, mut h1) = (BigInt::zero(), BigInt::one());
    let (mut k0, mut k1) = (BigInt::one(), BigInt::zero());
    let mut rest = BigRational::from_f64_exact(x);
    for _ in 0..64 {
        let a = rest.floor().to_integer();
        let h2 = &a * &h1 + &h0;
        let k2 = &a * &k1 + &k0;
        if k2 > BigInt::from(max_den) {
            break;
        }
        let candidate = BigRational::new(h2.clone(), k2.clone());
        if is_exact(&candidate) {
            return Some(candidate);
        }
        let frac = &rest - BigRational::from_integer(a);
        if frac.is_zero() {
            break;
        }
        rest = frac.recip();
        h0 = std::mem::replace(&mut h1, h2);
        k0 = std::mem::replace(&mut k1, k2);
    }
    None
}

/// Relative deviation `|a - b| / max(|a|, |b|, floor)`; zero when both vanish.
pub fn rel_dev<T: Scalar>(a: &T, b: &T, floor: f64) -> f64 {
    let diff = (a.clone() - b.clone()).abs();
    if diff.is_zero() {
        return 0.0;
    }
    let scale = a.to_f64_lossy().abs().max(b.to_f64_lossy().abs()).max(floor);
    if scale == 0.0 {
        return f64::INFINITY;
    }
    diff.to_f64_lossy() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_parsing() {
        let r = BigRational::parse_str("3/4").unwrap();
        assert_eq!(r, BigRational::ratio(3, 4));
        assert_eq!(BigRational::parse_str("0.25").unwrap(), BigRational::ratio(1, 4));
        assert_eq!(BigRational::parse_str("-1.5e1").unwrap(), BigRational::from_int(-15));
        assert!(BigRational::parse_str("1/0").is_err());
        assert!(BigRational::parse_str("abc").is_err());
    }

    #[test]
    fn json_numbers_respect_mode() {
        let half: Value = serde_json::from_str("0.5").unwrap();
        assert_eq!(f64::parse_json(&half).unwrap(), 0.5);
        assert!(matches!(BigRational::parse_json(&half), Err(ScalarError::MixedMode(_))));
        let two: Value = serde_json::from_str("2").unwrap();
        assert_eq!(BigRational::parse_json(&two).unwrap(), BigRational::from_int(2));
        let s: Value = serde_json::from_str("\"1/3\"").unwrap();
        assert!((f64::parse_json(&s).unwrap() - 1.0 / 3.0).abs() < 1e-16);
    }

    #[test]
    fn json_round_trip_rational() {
        let r = BigRational::ratio(-7, 12);
        assert_eq!(BigRational::parse_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn powi_negative_exponent() {
        assert_eq!(BigRational::ratio(1, 3).powi(-2), BigRational::from_int(9));
        assert_eq!(BigRational::ratio(2, 3).powi(0), BigRational::one());
    }

    #[test]
    fn recognizes_one_third() {
        let r = recognize_rational(0.333_333_333_333_333_3, 1_000_000, |c| {
            *c == BigRational::ratio(1, 3)
        });
        assert_eq!(r, Some(BigRational::ratio(1, 3)));
        assert!(recognize_rational(std::f64::consts::PI, 1000, |_| false).is_none());
    }

    #[test]
    fn huge_rationals_convert() {
        let big = BigRational::new(num::pow(BigInt::from(10), 400), num::pow(BigInt::from(10), 399));
        assert!((big.to_f64_lossy() - 10.0).abs() < 1e-12);
    }
}
