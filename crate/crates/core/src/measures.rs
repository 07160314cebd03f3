//! Finite-support probability measures on the nonnegative integers and the
//! dense-sequence operations the recursions are built from.

use std::collections::BTreeMap;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::scalar::{Scalar, ScalarError};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MeasureError {
    #[error("empty measure")]
    Empty,
    #[error("weight at {point} is not strictly positive")]
    NonPositive { point: usize },
    #[error("weights sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("invalid support point `{0}`")]
    BadPoint(String),
    #[error("malformed measure: {0}")]
    Malformed(String),
    #[error(transparent)]
    Scalar(#[from] ScalarError),
}

/// Tolerance on the total mass in float mode.
pub const MASS_TOL: f64 = 1e-12;

/// A probability measure with finite support in `{0, 1, 2, ...}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMeasure<T> {
    probs: BTreeMap<usize, T>,
}

impl<T: Scalar> ProbMeasure<T> {
    pub fn new(probs: BTreeMap<usize, T>) -> Result<Self, MeasureError> {
        if probs.is_empty() {
            return Err(MeasureError::Empty);
        }
        let mut sum = T::zero();
        for (&point, w) in &probs {
            if *w <= T::zero() {
                return Err(MeasureError::NonPositive { point });
            }
            sum = sum + w.clone();
        }
        if !sum.approx_eq(&T::one(), MASS_TOL) {
            return Err(MeasureError::NotNormalized { sum: sum.to_f64_lossy() });
        }
        Ok(ProbMeasure { probs })
    }

    pub fn from_pairs<I>(pairs: I) -> Result<Self, MeasureError>
    where
        I: IntoIterator<Item = (usize, T)>,
    {
        let mut probs = BTreeMap::new();
        for (k, w) in pairs {
            let slot = probs.entry(k).or_insert_with(T::zero);
            *slot = slot.clone() + w;
        }
        Self::new(probs)
    }

    pub fn point_mass(at: usize) -> Self {
        ProbMeasure { probs: BTreeMap::from([(at, T::one())]) }
    }

    /// Mass at `k` (zero off the support).
    pub fn mass(&self, k: usize) -> T {
        self.probs.get(&k).cloned().unwrap_or_else(T::zero)
    }

    pub fn max_point(&self) -> usize {
        *self.probs.keys().next_back().expect("nonempty")
    }

    pub fn min_point(&self) -> usize {
        *self.probs.keys().next().expect("nonempty")
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &T)> {
        self.probs.iter().map(|(&k, w)| (k, w))
    }

    pub fn mean(&self) -> T {
        self.iter().fold(T::zero(), |acc, (k, w)| acc + T::from_int(k as i64) * w.clone())
    }

    /// Dense array of masses on `0..=max_point`.
    pub fn dense(&self) -> Vec<T> {
        (0..=self.max_point()).map(|k| self.mass(k)).collect()
    }

    pub fn tail(&self, upto: usize) -> Vec<T> {
        tail(self, upto)
    }

    pub fn convert<U: Scalar>(&self, f: impl Fn(&T) -> U) -> ProbMeasure<U> {
        ProbMeasure { probs: self.probs.iter().map(|(&k, w)| (k, f(w))).collect() }
    }

    /// Parses `{"probs": {"0": "1/2", "2": 0.5}}` or the bare inner map.
    pub fn from_json(v: &Value) -> Result<Self, MeasureError> {
        let map = match v.get("probs") {
            Some(inner) => inner,
            None => v,
        };
        let map = map
            .as_object()
            .ok_or_else(|| MeasureError::Malformed("expected an object of point -> weight".into()))?;
        let mut probs = BTreeMap::new();
        for (key, w) in map {
            let point: usize = key.trim().parse().map_err(|_| MeasureError::BadPoint(key.clone()))?;
            probs.insert(point, T::parse_json(w)?);
        }
        Self::new(probs)
    }

    pub fn to_json(&self) -> Value {
        let inner: Map<String, Value> =
            self.probs.iter().map(|(k, w)| (k.to_string(), w.to_json())).collect();
        let mut outer = Map::new();
        outer.insert("probs".into(), Value::Object(inner));
        Value::Object(outer)
    }
}

/// Tail masses `1 - sum_{j <= k} m(j)` for `k = 0..=upto`.
pub fn tail<T: Scalar>(m: &ProbMeasure<T>, upto: usize) -> Vec<T> {
    let top = m.max_point();
    let mut out = Vec::with_capacity(upto + 1);
    let mut cumulative = T::zero();
    for k in 0..=upto {
        if k >= top {
            out.push(T::zero());
            continue;
        }
        cumulative = cumulative + m.mass(k);
        out.push(T::one() - cumulative.clone());
    }
    out
}

/// `(f * g)(x) = sum_{y=0}^{x} f(x - y) g(y)` for `x = 0..=upto`; entries
/// beyond either input's length count as zero.
pub fn convolve<T: Scalar>(f: &[T], g: &[T], upto: usize) -> Vec<T> {
    (0..=upto).map(|x| convolve_at(f, g, x)).collect()
}

/// A single coefficient of [`convolve`].
pub fn convolve_at<T: Scalar>(f: &[T], g: &[T], x: usize) -> T {
    let lo = x.saturating_sub(f.len().saturating_sub(1));
    let hi = x.min(g.len().saturating_sub(1));
    if g.is_empty() || f.is_empty() || lo > hi {
        return T::zero();
    }
    (lo..=hi).fold(T::zero(), |acc, y| acc + f[x - y].clone() * g[y].clone())
}

/// Sum of `|f(x - y) g(y)|` over the terms of one convolution coefficient;
/// the natural scale for rounding error in that coefficient.
pub fn convolve_abs_at<T: Scalar>(f: &[T], g: &[T], x: usize) -> f64 {
    let lo = x.saturating_sub(f.len().saturating_sub(1));
    let hi = x.min(g.len().saturating_sub(1));
    if g.is_empty() || f.is_empty() || lo > hi {
        return 0.0;
    }
    (lo..=hi).map(|y| (f[x - y].to_f64_lossy() * g[y].to_f64_lossy()).abs()).sum()
}

/// Truncated power series `sum_{y=0}^{upto} s^y f(y)` by Horner's rule.
pub fn gf_eval<T: Scalar>(f: &[T], s: &T, upto: usize) -> T {
    let top = upto.min(f.len().saturating_sub(1));
    if f.is_empty() {
        return T::zero();
    }
    f[..=top].iter().rev().fold(T::zero(), |acc, c| acc * s.clone() + c.clone())
}

/// Cumulative sums `(f(0), f(0)+f(1), ...)`.
pub fn cumulative<T: Scalar>(f: &[T]) -> Vec<T> {
    let mut acc = T::zero();
    f.iter()
        .map(|v| {
            acc = acc.clone() + v.clone();
            acc.clone()
        })
        .collect()
}
