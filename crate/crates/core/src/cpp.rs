//! Skip-free downward compound Poisson processes on the integers.
//!
//! Jumps arrive at rate `α`; a jump of type `j` moves the chain by `j - 1`,
//! so `μ(0)` drives unit downward steps and `μ(j), j >= 2` drives upward
//! jumps. Killing happens at constant rate `p`. Everything is expressed
//! through the branching polynomial `ψ(s) = α(μ*[s] - s) - p s`, its smallest
//! root `s₀` in `(0, 1]`, and the scale sequence `W` with `W*[s] = 1/ψ(s)`.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::chain::{ChainError, FiniteSkipFreeChain};
use crate::measures::{convolve_abs_at, convolve_at, tail, MeasureError, ProbMeasure};
use crate::poly;
use crate::scalar::{recognize_rational, Mode, Scalar, ScalarError};

/// Largest `W` index the lazy extension will compute.
pub const MAX_HORIZON: usize = 1_000_000;

/// Largest denominator tried when looking for an exact rational `s₀`.
pub const S0_MAX_DENOMINATOR: i64 = 1_000_000;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CppError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("the process is recurrent (p = 0 and m = 1); the resolvent is infinite")]
    RecurrentChain,
    #[error("W({index}) overflows the float range; use rational mode or a smaller horizon")]
    Overflow { index: usize },
    #[error("index {needed} exceeds the horizon cap {cap}")]
    HorizonExceeded { needed: usize, cap: usize },
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Scalar(#[from] ScalarError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `p > 0`.
    TransientKilled,
    /// `p = 0`, `m != 1`.
    TransientDrift,
    /// `p = 0`, `m = 1`.
    RecurrentCritical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CppParams<T> {
    pub alpha: T,
    pub mu: ProbMeasure<T>,
    pub p: T,
}

impl<T: Scalar> CppParams<T> {
    pub fn new(alpha: T, mu: ProbMeasure<T>, p: T) -> Result<Self, CppError> {
        if alpha <= T::zero() {
            return Err(CppError::InvalidParams("alpha must be positive".into()));
        }
        if mu.mass(0) <= T::zero() {
            return Err(CppError::InvalidParams("mu(0) must be positive".into()));
        }
        if !mu.mass(1).is_zero() {
            return Err(CppError::InvalidParams("mu(1) must be zero".into()));
        }
        if p < T::zero() {
            return Err(CppError::InvalidParams("p must be nonnegative".into()));
        }
        Ok(CppParams { alpha, mu, p })
    }

    /// Coefficients of `ψ`, lowest degree first.
    pub fn psi_coeffs(&self) -> Vec<T> {
        let d = self.mu.max_point().max(1);
        let mut c: Vec<T> = (0..=d).map(|j| self.alpha.clone() * self.mu.mass(j)).collect();
        c[1] = c[1].clone() - self.alpha.clone() - self.p.clone();
        poly::trim(c)
    }

    /// `m = sum_j j μ(j)`.
    pub fn mean(&self) -> T {
        self.mu.mean()
    }

    pub fn convert<U: Scalar>(&self, f: impl Fn(&T) -> U) -> CppParams<U> {
        CppParams { alpha: f(&self.alpha), mu: self.mu.convert(&f), p: f(&self.p) }
    }

    pub fn regime(&self) -> Regime {
        if self.p > T::zero() {
            Regime::TransientKilled
        } else if self.mean() != T::one() {
            Regime::TransientDrift
        } else {
            Regime::RecurrentCritical
        }
    }

    pub fn from_json(v: &Value) -> Result<Self, CppError> {
        let field = |k: &str| v.get(k).ok_or_else(|| CppError::InvalidParams(format!("missing field `{k}`")));
        let alpha = T::parse_json(field("alpha")?)?;
        let mu = ProbMeasure::from_json(field("mu")?)?;
        let p = match v.get("p") {
            Some(p) => T::parse_json(p)?,
            None => T::zero(),
        };
        Self::new(alpha, mu, p)
    }

    pub fn to_json(&self) -> Value {
        json!({"alpha": self.alpha.to_json(), "mu": self.mu.to_json(), "p": self.p.to_json()})
    }
}

/// `ψ(s)`.
pub fn psi_eval<T: Scalar>(params: &CppParams<T>, s: &T) -> T {
    poly::eval(&params.psi_coeffs(), s)
}

/// Smallest root of `ψ` in `(0, 1]` and `ψ'` there.
///
/// `s₀ = 1` exactly when `p = 0` and `m <= 1`. Otherwise the root is found by
/// bisection in binary64; in rational mode the result is replaced by an exact
/// rational root whenever one with a small denominator exists. The flag
/// reports whether the returned `s₀` is exact.
pub fn find_s0<T: Scalar>(params: &CppParams<T>) -> (T, T, bool) {
    let c = params.psi_coeffs();
    let dc = poly::derivative(&c);
    if params.p.is_zero() && params.mean() <= T::one() {
        let one = T::one();
        let d = poly::eval(&dc, &one);
        return (one, d, true);
    }
    let cf: Vec<f64> = c.iter().map(Scalar::to_f64_lossy).collect();
    let root = bisect_root(&cf);
    let (s0, exact) = match T::MODE {
        Mode::Float => (T::from_f64_exact(root), false),
        Mode::Rational => {
            let exact = recognize_rational(root, S0_MAX_DENOMINATOR, |r| poly::eval(&c, &T::from_rational(r)).is_zero());
            match exact {
                Some(r) => (T::from_rational(&r), true),
                None => (T::from_f64_exact(root), false),
            }
        }
    };
    let d = poly::eval(&dc, &s0);
    (s0, d, exact)
}

/// Root of `ψ` in `(0, 1)` given `ψ(0) > 0 > ψ(1 - 1e-15)`.
pub(crate) fn bisect_root(c: &[f64]) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0 - 1e-15);
    if poly::eval(c, &hi) > 0.0 {
        // the root sits within rounding of 1
        return hi;
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if poly::eval(c, &mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if poly::eval(c, &lo).abs() <= poly::eval(c, &hi).abs() {
        lo
    } else {
        hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CppTables<T> {
    pub params: CppParams<T>,
    pub psi_coeffs: Vec<T>,
    pub m: T,
    pub s0: T,
    /// Whether `s0` is the exact root (always true in the analytic branch).
    pub s0_exact: bool,
    pub psi_prime_s0: T,
    pub psi_prime_one: T,
    pub regime: Regime,
    w: Vec<T>,
    /// `w_sum[k] = W(0) + ... + W(k)`.
    w_sum: Vec<T>,
}

impl<T: Scalar> CppTables<T> {
    /// Computes `s₀`, `ψ'(s₀)` and `W(0..=horizon)`.
    pub fn build(params: &CppParams<T>, horizon: usize) -> Result<Self, CppError> {
        let (s0, psi_prime_s0, s0_exact) = find_s0(params);
        let psi_coeffs = params.psi_coeffs();
        let psi_prime_one = poly::eval(&poly::derivative(&psi_coeffs), &T::one());
        let mut t = CppTables {
            params: params.clone(),
            psi_coeffs,
            m: params.mean(),
            s0,
            s0_exact,
            psi_prime_s0,
            psi_prime_one,
            regime: params.regime(),
            w: Vec::new(),
            w_sum: Vec::new(),
        };
        t.grow(horizon)?;
        Ok(t)
    }

    pub fn horizon(&self) -> usize {
        self.w.len() - 1
    }

    pub fn w_table(&self) -> &[T] {
        &self.w
    }

    /// A copy of the tables extended to `horizon` (or `self` if already long enough).
    pub fn extended(&self, horizon: usize) -> Result<Cow<'_, Self>, CppError> {
        if horizon <= self.horizon() {
            return Ok(Cow::Borrowed(self));
        }
        let mut t = self.clone();
        t.grow(horizon)?;
        Ok(Cow::Owned(t))
    }

    /// `W(x+1) = 1/(αμ(0)) + (1/μ(0)) sum_{j<=x} W(j) (μ̄(x-j+1) + p/α)`.
    ///
    /// `μ̄` vanishes beyond the support, so the `μ̄` part of the sum has at
    /// most `deg ψ` terms and the `p/α` part is a running prefix sum.
    fn grow(&mut self, horizon: usize) -> Result<(), CppError> {
        if horizon > MAX_HORIZON {
            return Err(CppError::HorizonExceeded { needed: horizon, cap: MAX_HORIZON });
        }
        let alpha = &self.params.alpha;
        let mu0 = self.params.mu.mass(0);
        let top = self.params.mu.max_point();
        let mu_bar = tail(&self.params.mu, top);
        let p_over_alpha = self.params.p.clone() / alpha.clone();
        let base = T::one() / (alpha.clone() * mu0.clone());
        if self.w.is_empty() {
            self.w.push(base.clone());
            self.w_sum.push(base.clone());
        }
        while self.w.len() <= horizon {
            let x = self.w.len() - 1;
            let mut acc = p_over_alpha.clone() * self.w_sum[x].clone();
            for k in 1..top.max(1) {
                if k > x + 1 {
                    break;
                }
                let j = x + 1 - k;
                acc = acc + self.w[j].clone() * mu_bar[k].clone();
            }
            let next = base.clone() + acc / mu0.clone();
            if !next.is_finite_value() {
                return Err(CppError::Overflow { index: x + 1 });
            }
            self.w_sum.push(self.w_sum[x].clone() + next.clone());
            self.w.push(next);
        }
        Ok(())
    }

    /// `W(k)`, zero for negative `k`; extends on demand.
    pub fn w(&self, k: i64) -> Result<T, CppError> {
        if k < 0 {
            return Ok(T::zero());
        }
        let t = self.extended(k as usize)?;
        Ok(t.w[k as usize].clone())
    }

    /// `sum_{z=0}^{k} W(z)`, zero for negative `k`.
    pub fn w_sum(&self, k: i64) -> Result<T, CppError> {
        if k < 0 {
            return Ok(T::zero());
        }
        let t = self.extended(k as usize)?;
        Ok(t.w_sum[k as usize].clone())
    }

    /// Largest deviation of `(ψ * W)(k)` from `δ₀(k)` over `k <= upto`,
    /// relative to the sum of absolute terms of each coefficient.
    pub fn gf_residual(&self, upto: usize) -> Result<f64, CppError> {
        let t = self.extended(upto)?;
        let mut worst = 0.0f64;
        for k in 0..=upto {
            let v = convolve_at(&self.psi_coeffs, &t.w, k);
            let target = if k == 0 { T::one() } else { T::zero() };
            let d = (v - target).abs();
            if d.is_zero() {
                continue;
            }
            let scale = convolve_abs_at(&self.psi_coeffs, &t.w, k).max(f64::MIN_POSITIVE);
            worst = worst.max(d.to_f64_lossy() / scale);
        }
        Ok(worst)
    }

    /// `G(x, y) = -s₀^{x-y}/ψ'(s₀) - W(y-x-1)`.
    pub fn resolvent_g(&self, x: i64, y: i64) -> Result<T, CppError> {
        if self.regime == Regime::RecurrentCritical {
            return Err(CppError::RecurrentChain);
        }
        let lead = self.s0.powi(x - y) / self.psi_prime_s0.clone();
        Ok(-lead - self.w(y - x - 1)?)
    }

    /// `P_x(T_y < ζ) = s₀^{x-y} + ψ'(s₀) W(y-x-1)`.
    pub fn hit_prob(&self, x: i64, y: i64) -> Result<T, CppError> {
        Ok(self.s0.powi(x - y) + self.psi_prime_s0.clone() * self.w(y - x - 1)?)
    }

    fn check_window(x: i64, a: i64, b: i64) -> Result<(), CppError> {
        if a <= x && x < b {
            Ok(())
        } else {
            Err(CppError::Domain(format!("need a <= x <= b - 1 (x={x}, a={a}, b={b})")))
        }
    }

    /// `P_x(T_a < T_{[b} ∧ ζ) = W(b-x-1) / W(b-a-1)`.
    pub fn two_sided_exit_down(&self, x: i64, a: i64, b: i64) -> Result<T, CppError> {
        Self::check_window(x, a, b)?;
        Ok(self.w(b - x - 1)? / self.w(b - a - 1)?)
    }

    /// Probability of leaving `(a, b)` before being killed.
    pub fn exit_interval_prob(&self, x: i64, a: i64, b: i64) -> Result<T, CppError> {
        Self::check_window(x, a, b)?;
        let p = &self.params.p;
        let ratio = self.w(b - x - 1)? / self.w(b - a - 1)?;
        Ok(T::one() + p.clone() * self.w_sum(b - x - 2)? - ratio * p.clone() * self.w_sum(b - a - 2)?)
    }

    /// `P_x(T_{[b} < ζ)`.
    pub fn passage_up_prob(&self, x: i64, b: i64) -> Result<T, CppError> {
        if x >= b {
            return Ok(T::one());
        }
        let p = &self.params.p;
        if *p > T::zero() || self.m > T::one() {
            let lim = p.clone() * self.s0.clone() / (T::one() - self.s0.clone());
            Ok(T::one() + p.clone() * self.w_sum(b - x - 2)? - lim * self.w(b - x - 1)?)
        } else {
            Ok(T::one() + self.psi_prime_one.clone() * self.w(b - x - 1)?)
        }
    }

    /// The exact finite system on `{a, ..., b}` for questions about the path
    /// before it leaves `(a, b)`: interior rows are the true rates with every
    /// upward jump to `[b, ∞)` redirected to `b`; rows `a` and `b` are
    /// placeholders that only keep the chain transient.
    pub fn lumped_window(&self, a: i64, b: i64) -> Result<FiniteSkipFreeChain<T>, CppError> {
        let p = &self.params;
        let down = p.alpha.clone() * p.mu.mass(0);
        let ups: Vec<(usize, T)> =
            p.mu.iter().filter(|(j, _)| *j >= 2).map(|(j, w)| (j - 1, p.alpha.clone() * w.clone())).collect();
        lumped(a, b, |_| (down.clone(), ups.clone(), p.p.clone()))
    }
}

/// Builds a window chain on `{a, ..., b}` from per-state `(down rate, [(up
/// step, rate)], kill)`.
pub(crate) fn lumped<T: Scalar, E: From<ChainError>>(
    a: i64,
    b: i64,
    rates_at: impl Fn(i64) -> (T, Vec<(usize, T)>, T),
) -> Result<FiniteSkipFreeChain<T>, E> {
    if b <= a {
        return Err(ChainError::Domain(format!("empty window (a={a}, b={b})")).into());
    }
    let n = (b - a + 1) as usize;
    let mut rows = vec![vec![T::zero(); n]; n];
    let mut kill = vec![T::zero(); n];
    kill[0] = T::one();
    kill[n - 1] = T::one();
    rows[n - 1][n - 2] = T::one();
    for i in 1..n - 1 {
        let z = a + i as i64;
        let (down, ups, k) = rates_at(z);
        rows[i][i - 1] = down;
        for (step, r) in ups {
            let j = (i + step).min(n - 1);
            rows[i][j] = rows[i][j].clone() + r;
        }
        kill[i] = k;
    }
    Ok(FiniteSkipFreeChain::from_off_diagonal(a, rows, kill)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::rational::BigRational as Q;

    fn params(pairs: &[(usize, (i64, i64))], p: (i64, i64)) -> CppParams<Q> {
        let mu = ProbMeasure::from_pairs(pairs.iter().map(|&(k, (n, d))| (k, Q::ratio(n, d)))).unwrap();
        CppParams::new(Q::from_int(1), mu, Q::ratio(p.0, p.1)).unwrap()
    }

    fn critical() -> CppParams<Q> {
        params(&[(0, (1, 2)), (2, (1, 2))], (0, 1))
    }

    fn supercritical() -> CppParams<Q> {
        params(&[(0, (1, 4)), (2, (3, 4))], (0, 1))
    }

    fn subcritical() -> CppParams<Q> {
        params(&[(0, (3, 4)), (2, (1, 4))], (0, 1))
    }

    #[test]
    fn psi_examples() {
        let c = critical();
        assert_eq!(psi_eval(&c, &Q::from_int(0)), Q::ratio(1, 2));
        assert_eq!(psi_eval(&c, &Q::from_int(1)), Q::from_int(0));
        assert_eq!(psi_eval(&c, &Q::ratio(1, 2)), Q::ratio(1, 8));
    }

    #[test]
    fn w_examples() {
        let t = CppTables::build(&critical(), 10).unwrap();
        for k in 0..=10 {
            assert_eq!(t.w(k).unwrap(), Q::from_int(2 * (k + 1)));
        }
        let t = CppTables::build(&supercritical(), 1).unwrap();
        assert_eq!(t.w(0).unwrap(), Q::from_int(4));
        assert_eq!(t.w(1).unwrap(), Q::from_int(16));
    }

    #[test]
    fn s0_examples() {
        assert_eq!(find_s0(&critical()), (Q::from_int(1), Q::from_int(0), true));
        let (s0, d, exact) = find_s0(&supercritical());
        assert!(exact);
        assert_eq!(s0, Q::ratio(1, 3));
        assert_eq!(d, Q::ratio(-1, 2));
        assert_eq!(find_s0(&subcritical()).0, Q::from_int(1));
    }

    #[test]
    fn resolvent_and_hitting() {
        let t = CppTables::build(&supercritical(), 5).unwrap();
        assert_eq!(t.resolvent_g(0, 0).unwrap(), Q::from_int(2));
        assert_eq!(t.resolvent_g(0, 1).unwrap(), Q::from_int(2));
        assert_eq!(t.hit_prob(1, 0).unwrap(), Q::ratio(1, 3));
        assert_eq!(t.hit_prob(4, 4).unwrap(), Q::from_int(1));
        let c = CppTables::build(&critical(), 5).unwrap();
        assert_eq!(c.resolvent_g(0, 0), Err(CppError::RecurrentChain));
        assert_eq!(c.hit_prob(7, 2).unwrap(), Q::from_int(1));
        assert_eq!(c.hit_prob(0, 3).unwrap(), Q::from_int(1));
    }

    #[test]
    fn exits_and_passage() {
        let c = CppTables::build(&critical(), 5).unwrap();
        assert_eq!(c.two_sided_exit_down(1, 0, 4).unwrap(), Q::ratio(3, 4));
        assert_eq!(c.two_sided_exit_down(0, 0, 4).unwrap(), Q::from_int(1));
        assert_eq!(c.exit_interval_prob(2, 0, 4).unwrap(), Q::from_int(1));
        assert_eq!(c.passage_up_prob(0, 3).unwrap(), Q::from_int(1));
        let s = CppTables::build(&supercritical(), 5).unwrap();
        assert_eq!(s.passage_up_prob(0, 5).unwrap(), Q::from_int(1));
        let sub = CppTables::build(&subcritical(), 5).unwrap();
        assert_eq!(sub.passage_up_prob(0, 1).unwrap(), Q::ratio(1, 3));
        assert_eq!(sub.passage_up_prob(3, 1).unwrap(), Q::from_int(1));
    }

    #[test]
    fn rejects_bad_params() {
        let mu = ProbMeasure::from_pairs([(0, 0.5), (1, 0.5)]).unwrap();
        assert!(CppParams::new(1.0, mu, 0.0).is_err());
        let mu = ProbMeasure::from_pairs([(2, 1.0)]).unwrap();
        assert!(CppParams::new(1.0, mu, 0.0).is_err());
        let mu = ProbMeasure::from_pairs([(0, 1.0)]).unwrap();
        assert!(CppParams::new(0.0, mu.clone(), 0.0).is_err());
        assert!(CppParams::new(1.0, mu, -1.0).is_err());
    }

    #[test]
    fn lazy_extension_is_pure() {
        let t = CppTables::build(&critical(), 2).unwrap();
        assert_eq!(t.w(40).unwrap(), Q::from_int(82));
        assert_eq!(t.horizon(), 2);
        assert_eq!(t.extended(40).unwrap().horizon(), 40);
    }

    #[test]
    fn float_overflow_reported() {
        let mu = ProbMeasure::from_pairs([(0, 1e-3), (2, 1.0 - 1e-3)]).unwrap();
        let p = CppParams::new(1.0, mu, 0.0).unwrap();
        assert!(matches!(CppTables::build(&p, 500), Err(CppError::Overflow { .. })));
    }
}
