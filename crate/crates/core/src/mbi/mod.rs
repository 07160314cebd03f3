//! Markov branching processes with immigration (MBI) on `{0, 1, 2, ...}`.
//!
//! From state `x` each of the `x` individuals reproduces at rate `α`,
//! replacing itself by `j` offspring with probability `μ(j)`; batches of `k`
//! immigrants arrive at rate `β ν(k)`; the chain is killed at rate `p x + q`.
//! The identities are expressed through five sequences (`ΔW`, `W`, `κ`, `π`,
//! `ϖ`) with generating functions built from `ψ` and `φ`, the kernel `𝓗`,
//! and the integral `I(x)`.

pub mod analytic;

use std::borrow::Cow;

use num::rational::BigRational;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::chain::{ChainError, FiniteSkipFreeChain};
use crate::cpp::{self, lumped, CppError, CppParams, Regime};
use crate::exact;
use crate::measures::{convolve_abs_at, convolve_at, tail, MeasureError, ProbMeasure};
use crate::poly;
use crate::quad::QuadError;
use crate::scalar::{Mode, Scalar, ScalarError};

pub use analytic::{Endpoint, IntegralI, Mechanisms, SeriesValue};

/// Largest horizon the lazy extension will compute.
pub const MAX_HORIZON: usize = 200_000;

/// Float results whose rounding bound exceeds this are recomputed exactly.
pub const CANCELLATION_BUDGET: f64 = 1e-13;

/// Largest horizon used when summing `π*` or `ϖ*` as power series.
pub const SERIES_CAP: usize = 8192;

/// Tail tolerance for the power series of `π*` and `ϖ*`.
pub const SERIES_TAIL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MbiError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("not a member of the family: {0}")]
    InvalidFamily(String),
    #[error("all states are recurrent; the resolvent is infinite")]
    RecurrentChain,
    #[error("state 0 is absorbing for a branching process without immigration; G(x, 0) is infinite")]
    MbpAtZero,
    #[error("{0}")]
    NotApplicable(String),
    #[error("{0}")]
    NonConvergent(String),
    #[error("series truncated: {0}")]
    SeriesTruncation(String),
    #[error("sequence value at index {index} overflows the float range")]
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
    #[error(transparent)]
    Quad(#[from] QuadError),
}

impl From<CppError> for MbiError {
    fn from(e: CppError) -> Self {
        match e {
            CppError::InvalidParams(m) => MbiError::InvalidParams(m),
            CppError::Measure(m) => MbiError::Measure(m),
            CppError::Scalar(s) => MbiError::Scalar(s),
            CppError::Chain(c) => MbiError::Chain(c),
            other => MbiError::Domain(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Transient,
    Recurrent,
    /// No immigration and no constant killing: 0 is absorbing.
    Mbp,
}

/// How the classification was reached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationInfo {
    pub class: Classification,
    /// Decided from the numerically computed endpoint exponent of `I(0)`
    /// (only when `β > 0` and `q = 0`).
    pub heuristic: bool,
    /// Set by the caller instead of computed.
    pub overridden: bool,
    /// The exponent `c` of the algebraic endpoint, when there is one.
    pub endpoint_exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbiParams<T> {
    pub alpha: T,
    pub mu: ProbMeasure<T>,
    pub p: T,
    pub beta: T,
    pub nu: ProbMeasure<T>,
    pub q: T,
}

impl<T: Scalar> MbiParams<T> {
    pub fn new(alpha: T, mu: ProbMeasure<T>, p: T, beta: T, nu: ProbMeasure<T>, q: T) -> Result<Self, MbiError> {
        CppParams::new(alpha.clone(), mu.clone(), p.clone())?;
        if beta < T::zero() {
            return Err(MbiError::InvalidParams("beta must be nonnegative".into()));
        }
        if q < T::zero() {
            return Err(MbiError::InvalidParams("q must be nonnegative".into()));
        }
        if !nu.mass(0).is_zero() {
            return Err(MbiError::InvalidParams("nu must not charge 0".into()));
        }
        Ok(MbiParams { alpha, mu, p, beta, nu, q })
    }

    /// Branching process without immigration (`β = q = 0`).
    pub fn branching(alpha: T, mu: ProbMeasure<T>, p: T) -> Result<Self, MbiError> {
        Self::new(alpha, mu, p, T::zero(), ProbMeasure::point_mass(1), T::zero())
    }

    /// The member with `β = αm`, `ν(j) = (j+1)μ(j+1)/m`, `q = p - α(m-1)`,
    /// for which `φ = -ψ'`. Needs `0 < m <= 1 + p/α`.
    pub fn example_family(alpha: T, mu: ProbMeasure<T>, p: T) -> Result<Self, MbiError> {
        let cpp = CppParams::new(alpha.clone(), mu.clone(), p.clone())?;
        let m = cpp.mean();
        if m <= T::zero() {
            return Err(MbiError::InvalidFamily("m must be positive".into()));
        }
        let q = p.clone() - alpha.clone() * (m.clone() - T::one());
        if q < T::zero() {
            return Err(MbiError::InvalidFamily(format!("m = {m} exceeds 1 + p/alpha")));
        }
        let nu = ProbMeasure::from_pairs(
            mu.iter()
                .filter(|(j, _)| *j >= 2)
                .map(|(j, w)| (j - 1, T::from_int(j as i64) * w.clone() / m.clone())),
        )?;
        Self::new(alpha.clone(), mu, p, alpha * m, nu, q)
    }

    pub fn cpp(&self) -> CppParams<T> {
        CppParams { alpha: self.alpha.clone(), mu: self.mu.clone(), p: self.p.clone() }
    }

    pub fn psi_coeffs(&self) -> Vec<T> {
        self.cpp().psi_coeffs()
    }

    /// Coefficients of `φ(s) = β(1 - ν*[s]) + q`.
    pub fn phi_coeffs(&self) -> Vec<T> {
        let top = self.nu.max_point();
        let mut c = vec![T::zero(); top + 1];
        c[0] = self.beta.clone() + self.q.clone();
        for (k, w) in self.nu.iter() {
            c[k] = c[k].clone() - self.beta.clone() * w.clone();
        }
        poly::trim(c)
    }

    pub fn is_mbp(&self) -> bool {
        self.beta.is_zero() && self.q.is_zero()
    }

    /// `Q(x, ∂) = p x + q`.
    pub fn kill_at(&self, x: i64) -> T {
        self.p.clone() * T::from_int(x) + self.q.clone()
    }

    pub fn convert<U: Scalar>(&self, f: impl Fn(&T) -> U) -> MbiParams<U> {
        MbiParams {
            alpha: f(&self.alpha),
            mu: self.mu.convert(&f),
            p: f(&self.p),
            beta: f(&self.beta),
            nu: self.nu.convert(&f),
            q: f(&self.q),
        }
    }

    pub fn from_json(v: &Value) -> Result<Self, MbiError> {
        let field = |k: &str| v.get(k).ok_or_else(|| MbiError::InvalidParams(format!("missing field `{k}`")));
        let opt = |k: &str| -> Result<T, MbiError> {
            match v.get(k) {
                Some(x) => Ok(T::parse_json(x)?),
                None => Ok(T::zero()),
            }
        };
        let alpha = T::parse_json(field("alpha")?)?;
        let mu = ProbMeasure::from_json(field("mu")?)?;
        let beta = opt("beta")?;
        let nu = match v.get("nu") {
            Some(n) => ProbMeasure::from_json(n)?,
            None if beta.is_zero() => ProbMeasure::point_mass(1),
            None => return Err(MbiError::InvalidParams("missing field `nu`".into())),
        };
        Self::new(alpha, mu, opt("p")?, beta, nu, opt("q")?)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "alpha": self.alpha.to_json(),
            "mu": self.mu.to_json(),
            "p": self.p.to_json(),
            "beta": self.beta.to_json(),
            "nu": self.nu.to_json(),
            "q": self.q.to_json(),
        })
    }
}

/// `φ(s)`.
pub fn phi_eval<T: Scalar>(params: &MbiParams<T>, s: &T) -> T {
    poly::eval(&params.phi_coeffs(), s)
}

/// `2 b + 64`, the default horizon for windows up to `b`.
pub fn default_horizon(max_b: usize) -> usize {
    2 * max_b + 64
}

fn float_mechanisms<T: Scalar>(params: &MbiParams<T>, s0: &T) -> Mechanisms {
    let f = |c: &Vec<T>| c.iter().map(Scalar::to_f64_lossy).collect::<Vec<f64>>();
    let double = params.cpp().regime() == Regime::RecurrentCritical;
    Mechanisms::new(f(&params.psi_coeffs()), f(&params.phi_coeffs()), s0.to_f64_lossy(), double, params.q.is_zero())
}

fn classify<T: Scalar>(params: &MbiParams<T>, mech: &Mechanisms) -> ClassificationInfo {
    let exponent = match mech.endpoint() {
        Endpoint::Algebraic { c } => Some(c),
        Endpoint::Exponential { .. } => None,
    };
    let (class, heuristic) = if params.q > T::zero() {
        (Classification::Transient, false)
    } else if params.beta.is_zero() {
        (Classification::Mbp, false)
    } else if mech.endpoint().is_integrable() {
        (Classification::Transient, true)
    } else {
        (Classification::Recurrent, true)
    };
    ClassificationInfo { class, heuristic, overridden: false, endpoint_exponent: exponent }
}

/// The five sequences, `u = W ⋆ ϖ`, `s₀`, and the classification.
#[derive(Debug, Clone)]
pub struct MbiTables<T> {
    pub params: MbiParams<T>,
    pub s0: T,
    pub s0_exact: bool,
    pub psi_prime_s0: T,
    pub classification: ClassificationInfo,
    mech: Mechanisms,
    dw: Vec<T>,
    w: Vec<T>,
    kappa: Vec<T>,
    pi: Vec<T>,
    varpi: Vec<T>,
    u: Vec<T>,
}

impl<T: Scalar> MbiTables<T> {
    pub fn build(params: &MbiParams<T>, horizon: usize) -> Result<Self, MbiError> {
        let (s0, psi_prime_s0, s0_exact) = cpp::find_s0(&params.cpp());
        let mech = float_mechanisms(params, &s0);
        let classification = classify(params, &mech);
        let mut t = MbiTables {
            params: params.clone(),
            s0,
            s0_exact,
            psi_prime_s0,
            classification,
            mech,
            dw: Vec::new(),
            w: Vec::new(),
            kappa: Vec::new(),
            pi: Vec::new(),
            varpi: Vec::new(),
            u: Vec::new(),
        };
        t.grow(horizon)?;
        Ok(t)
    }

    /// Replaces a heuristic transient/recurrent decision. Only meaningful
    /// when `β > 0` and `q = 0`; other classes follow from the parameters.
    pub fn with_classification(mut self, class: Classification) -> Result<Self, MbiError> {
        if !self.classification.heuristic {
            if class == self.classification.class {
                return Ok(self);
            }
            return Err(MbiError::InvalidParams(format!(
                "classification is {:?} by the parameters and cannot be overridden",
                self.classification.class
            )));
        }
        if class == Classification::Mbp {
            return Err(MbiError::InvalidParams("an instance with immigration is not an MBP".into()));
        }
        self.classification.class = class;
        self.classification.overridden = true;
        Ok(self)
    }

    pub fn class(&self) -> Classification {
        self.classification.class
    }

    pub fn mechanisms(&self) -> &Mechanisms {
        &self.mech
    }

    pub fn horizon(&self) -> usize {
        self.w.len() - 1
    }

    pub fn delta_w(&self) -> &[T] {
        &self.dw
    }

    pub fn w_table(&self) -> &[T] {
        &self.w
    }

    pub fn kappa(&self) -> &[T] {
        &self.kappa
    }

    pub fn pi(&self) -> &[T] {
        &self.pi
    }

    pub fn varpi(&self) -> &[T] {
        &self.varpi
    }

    /// `(W ⋆ ϖ)(l)`.
    pub fn w_conv_varpi(&self) -> &[T] {
        &self.u
    }

    pub fn extended(&self, horizon: usize) -> Result<Cow<'_, Self>, MbiError> {
        if horizon <= self.horizon() {
            return Ok(Cow::Borrowed(self));
        }
        let mut t = self.clone();
        t.grow(horizon)?;
        Ok(Cow::Owned(t))
    }

    fn grow(&mut self, horizon: usize) -> Result<(), MbiError> {
        if horizon > MAX_HORIZON {
            return Err(MbiError::HorizonExceeded { needed: horizon, cap: MAX_HORIZON });
        }
        let prm = &self.params;
        let mu0 = prm.mu.mass(0);
        let mu_top = prm.mu.max_point();
        let mu_bar = tail(&prm.mu, mu_top);
        let nu_top = prm.nu.max_point();
        let nu_bar = tail(&prm.nu, nu_top);
        let p_over_alpha = prm.p.clone() / prm.alpha.clone();
        let check = |v: &T, index: usize| {
            if v.is_finite_value() {
                Ok(())
            } else {
                Err(MbiError::Overflow { index })
            }
        };
        let start = self.w.len();
        for k in start..=horizon {
            // ΔW(k) = (1/μ(0)) sum_{j<k} ΔW(j) (μ̄(k-j) + p/α)
            let dw = if k == 0 {
                T::one() / (prm.alpha.clone() * mu0.clone())
            } else {
                let mut acc = p_over_alpha.clone() * self.w[k - 1].clone();
                for i in 1..mu_top.min(k + 1) {
                    acc = acc + self.dw[k - i].clone() * mu_bar[i].clone();
                }
                acc / mu0.clone()
            };
            check(&dw, k)?;
            let w = if k == 0 { dw.clone() } else { self.w[k - 1].clone() + dw.clone() };
            self.dw.push(dw);
            self.w.push(w.clone());
            let mut kap = prm.q.clone() * w;
            if !prm.beta.is_zero() {
                let mut conv = T::zero();
                for i in 0..nu_top.min(k + 1) {
                    conv = conv + self.dw[k - i].clone() * nu_bar[i].clone();
                }
                kap = kap + prm.beta.clone() * conv;
            }
            check(&kap, k)?;
            self.kappa.push(kap);
        }
        if let (Some(kappa), Some(w)) = (T::as_rationals(&self.kappa), T::as_rationals(&self.w)) {
            let mut pi = T::as_rationals(&self.pi).map(<[_]>::to_vec).unwrap_or_default();
            let mut varpi = T::as_rationals(&self.varpi).map(<[_]>::to_vec).unwrap_or_default();
            let mut u = T::as_rationals(&self.u).map(<[_]>::to_vec).unwrap_or_default();
            exact::extend_pi_varpi_u(kappa, w, &mut pi, &mut varpi, &mut u, horizon);
            self.pi = T::from_rationals(pi);
            self.varpi = T::from_rationals(varpi);
            self.u = T::from_rationals(u);
            return Ok(());
        }
        for k in start..=horizon {
            let (pi, varpi) = if k == 0 {
                (T::one(), T::one())
            } else {
                let kk = T::from_int(k as i64);
                let mut a = T::zero();
                let mut b = T::zero();
                for j in 0..k {
                    let kap = &self.kappa[k - 1 - j];
                    if kap.is_zero() {
                        continue;
                    }
                    a = a + self.pi[j].clone() * kap.clone();
                    b = b + self.varpi[j].clone() * kap.clone();
                }
                (a / kk.clone(), -b / kk)
            };
            check(&pi, k)?;
            self.pi.push(pi);
            self.varpi.push(varpi);
        }
        for k in start..=horizon {
            let mut acc = T::zero();
            for j in 0..=k {
                if !self.varpi[j].is_zero() {
                    acc = acc + self.w[k - j].clone() * self.varpi[j].clone();
                }
            }
            check(&acc, k)?;
            self.u.push(acc);
        }
        Ok(())
    }

    /// `W(k)`, zero for negative `k`.
    pub fn w(&self, k: i64) -> Result<T, MbiError> {
        if k < 0 {
            return Ok(T::zero());
        }
        Ok(self.extended(k as usize)?.w[k as usize].clone())
    }

    fn w_sum(&self, k: i64) -> Result<T, MbiError> {
        if k < 0 {
            return Ok(T::zero());
        }
        let t = self.extended(k as usize)?;
        Ok(t.w[..=k as usize].iter().fold(T::zero(), |a, v| a + v.clone()))
    }

    pub fn pi_at(&self, k: i64) -> Result<T, MbiError> {
        if k < 0 {
            return Ok(T::zero());
        }
        Ok(self.extended(k as usize)?.pi[k as usize].clone())
    }

    /// `𝓗^{[y}(x) = sum_{l=0}^{y-x-1} π(y-x-1-l) (W⋆ϖ)(l) / (l+x+1)`.
    pub fn script_h(&self, x: i64, y: i64) -> Result<T, MbiError> {
        if x < 0 || y < 0 {
            return Err(MbiError::Domain(format!("script_h needs x, y >= 0 (x={x}, y={y})")));
        }
        if y <= x {
            return Ok(T::zero());
        }
        let n = (y - x - 1) as usize;
        let t = self.extended(n)?;
        let mut acc = T::zero();
        for l in 0..=n {
            let d = T::from_int(l as i64 + x + 1);
            acc = acc + t.pi[n - l].clone() * t.u[l].clone() / d;
        }
        Ok(acc)
    }

    /// All values `𝓗^{[y}(x)` for `0 <= x, y <= n`, indexed `[x][y]`.
    pub fn script_h_grid(&self, n: usize) -> Result<ScriptH<T>, MbiError> {
        let mut values = Vec::with_capacity(n + 1);
        for x in 0..=n {
            let row = (0..=n).map(|y| self.script_h(x as i64, y as i64)).collect::<Result<Vec<_>, _>>()?;
            values.push(row);
        }
        Ok(ScriptH { values })
    }

    /// `I(x)` by quadrature. Only defined when all states are transient.
    pub fn integral_i(&self, x: i64) -> Result<IntegralI, MbiError> {
        if x < 0 {
            return Err(MbiError::Domain(format!("I(x) needs x >= 0 (x={x})")));
        }
        match self.class() {
            Classification::Transient => self.mech.integral_i(x as u64),
            Classification::Recurrent => Err(MbiError::RecurrentChain),
            Classification::Mbp => Err(MbiError::NotApplicable("I(x) is infinite for a branching process without immigration".into())),
        }
    }

    /// Series form of `I(x)`, kept as an independent cross-check.
    pub fn integral_i_series(&self, x: i64, tol: f64) -> Result<SeriesValue, MbiError> {
        if x < 0 {
            return Err(MbiError::Domain(format!("I(x) needs x >= 0 (x={x})")));
        }
        self.mech.integral_i_series(x as u64, tol, 1_000_000)
    }

    fn i_scalar(&self, x: i64) -> Result<T, MbiError> {
        Ok(T::from_f64_exact(self.integral_i(x)?.value))
    }

    /// Resolvent `G(x, y)`.
    pub fn resolvent_g(&self, x: i64, y: i64) -> Result<T, MbiError> {
        Self::non_negative(x, y)?;
        match self.class() {
            Classification::Transient => Ok(self.pi_at(y)? * self.i_scalar(x)? - self.script_h(x, y)?),
            Classification::Recurrent => Err(MbiError::RecurrentChain),
            Classification::Mbp => {
                if y == 0 {
                    return Err(MbiError::MbpAtZero);
                }
                let top = self.s0.powi(x) * self.w(y - 1)? - self.w(y - x - 1)?;
                Ok(top / T::from_int(y))
            }
        }
    }

    /// `P_x(T_y < ζ)`.
    pub fn hit_prob(&self, x: i64, y: i64) -> Result<T, MbiError> {
        Self::non_negative(x, y)?;
        if x == y {
            return Ok(T::one());
        }
        match self.class() {
            Classification::Transient => {
                let piy = self.pi_at(y)?;
                let num = piy.clone() * self.i_scalar(x)? - self.script_h(x, y)?;
                Ok(num / (piy * self.i_scalar(y)?))
            }
            Classification::Recurrent => Ok(T::one()),
            Classification::Mbp => {
                if y == 0 {
                    return Ok(self.s0.powi(x));
                }
                let wy = self.w(y - 1)?;
                let num = self.s0.powi(x) * wy.clone() - self.w(y - x - 1)?;
                Ok(num / (self.s0.powi(y) * wy))
            }
        }
    }

    fn non_negative(x: i64, y: i64) -> Result<(), MbiError> {
        if x < 0 || y < 0 {
            Err(MbiError::Domain(format!("states are nonnegative (x={x}, y={y})")))
        } else {
            Ok(())
        }
    }

    fn check_window(x: i64, a: i64, b: i64) -> Result<(), MbiError> {
        if 0 <= a && a <= x && x < b {
            Ok(())
        } else {
            Err(MbiError::Domain(format!("need 0 <= a <= x <= b - 1 (x={x}, a={a}, b={b})")))
        }
    }

    /// `P_x(T_a < T_{[b} ∧ ζ) = 𝓗^{[b}(x) / 𝓗^{[b}(a)`.
    pub fn two_sided_exit(&self, x: i64, a: i64, b: i64) -> Result<T, MbiError> {
        Self::check_window(x, a, b)?;
        let t = self.extended(b as usize)?;
        Ok(t.script_h(x, b)? / t.script_h(a, b)?)
    }

    /// Probability of leaving `(a, b)` before being killed.
    pub fn exit_interval_prob(&self, x: i64, a: i64, b: i64) -> Result<T, MbiError> {
        Self::check_window(x, a, b)?;
        let (v, mag) = self.extended(b as usize)?.exit_interval_terms(x, a, b)?;
        self.guarded(v, mag, b, |t| t.exit_interval_terms(x, a, b))
    }

    /// Value of the killing sum together with the size of its largest
    /// partial terms, which bounds the float rounding error.
    fn exit_interval_terms(&self, x: i64, a: i64, b: i64) -> Result<(T, f64), MbiError> {
        let ratio = self.script_h(x, b)? / self.script_h(a, b)?;
        let mut acc = T::one();
        let mut mag = 1.0;
        for z in a + 1..b {
            let k = self.params.kill_at(z);
            if k.is_zero() {
                continue;
            }
            let (ha, hx) = (ratio.clone() * self.script_h(a, z)?, self.script_h(x, z)?);
            mag += k.to_f64_lossy().abs() * (ha.to_f64_lossy().abs() + hx.to_f64_lossy().abs());
            acc = acc - k * (ha - hx);
        }
        Ok((acc, mag))
    }

    /// `P_x(T_{[b} < ζ)`.
    pub fn passage_up_prob(&self, x: i64, b: i64) -> Result<T, MbiError> {
        if x < 0 {
            return Err(MbiError::Domain(format!("states are nonnegative (x={x})")));
        }
        if x >= b {
            return Ok(T::one());
        }
        let (v, mag) = self.extended(b as usize)?.passage_up_terms(x, b)?;
        self.guarded(v, mag, b, |t| t.passage_up_terms(x, b))
    }

    fn passage_up_terms(&self, x: i64, b: i64) -> Result<(T, f64), MbiError> {
        let abs = |v: &T| v.to_f64_lossy().abs();
        if self.params.is_mbp() {
            let p = &self.params.p;
            let ratio = self.w(b - x - 1)? / self.w(b - 1)?;
            let tail = T::one() + p.clone() * self.w_sum(b - 2)?;
            let head = T::one() + p.clone() * self.w_sum(b - x - 2)?;
            let tail = ratio * tail;
            let mag = abs(&head) + abs(&tail);
            return Ok((head - tail, mag));
        }
        let hb = self.script_h(x, b)?;
        let pib = self.pi_at(b)?;
        let mut acc = T::one();
        let mut mag = 1.0;
        for z in 0..b {
            let k = self.params.kill_at(z);
            if k.is_zero() {
                continue;
            }
            let (hz, hx) = (self.pi_at(z)? / pib.clone() * hb.clone(), self.script_h(x, z)?);
            mag += abs(&k) * (abs(&hz) + abs(&hx));
            acc = acc - k * (hz - hx);
        }
        Ok((acc, mag))
    }

    /// Returns a float value whose rounding error bound (from the magnitude
    /// of the cancelling terms) is acceptable; otherwise evaluates the same
    /// expression exactly on the binary64 parameters and rounds once.
    fn guarded(
        &self,
        value: T,
        magnitude: f64,
        horizon: i64,
        eval: impl Fn(&MbiTables<BigRational>) -> Result<(BigRational, f64), MbiError>,
    ) -> Result<T, MbiError> {
        let bound = magnitude * (horizon.max(1) as f64) * f64::EPSILON;
        if T::MODE == Mode::Rational || bound <= CANCELLATION_BUDGET {
            return Ok(value);
        }
        let params = self.params.convert(|v| BigRational::from_f64_exact(v.to_f64_lossy()));
        let exact = MbiTables::build(&params, horizon as usize)?;
        let (v, _) = eval(&exact)?;
        Ok(T::from_rational(&v))
    }

    /// Exact finite system on `{a, ..., b}` for events decided before the
    /// path leaves `(a, b)`; see [`CppTables::lumped_window`](crate::cpp::CppTables::lumped_window).
    pub fn lumped_window(&self, a: i64, b: i64) -> Result<FiniteSkipFreeChain<T>, MbiError> {
        if a < 0 {
            return Err(MbiError::Domain(format!("window must lie in the state space (a={a})")));
        }
        let prm = &self.params;
        lumped::<T, MbiError>(a, b, |z| {
            let zt = T::from_int(z);
            let down = prm.alpha.clone() * prm.mu.mass(0) * zt.clone();
            let mut ups: Vec<(usize, T)> = prm
                .mu
                .iter()
                .filter(|(j, _)| *j >= 2)
                .map(|(j, w)| (j - 1, prm.alpha.clone() * w.clone() * zt.clone()))
                .collect();
            if !prm.beta.is_zero() {
                ups.extend(prm.nu.iter().map(|(k, w)| (k, prm.beta.clone() * w.clone())));
            }
            (down, ups, prm.kill_at(z))
        })
    }

    /// Largest normalized residual of each generating-function identity over
    /// coefficients `0..=upto`.
    pub fn sequence_residuals(&self, upto: usize) -> Result<SequenceResiduals, MbiError> {
        let t = self.extended(upto)?;
        let psi = self.params.psi_coeffs();
        let phi = self.params.phi_coeffs();
        let at = |v: &[T], k: usize| v.get(k).cloned().unwrap_or_else(T::zero);
        let pi_varpi = convolve_prefix(&t.pi, &t.varpi, upto);
        let pi_kappa = convolve_prefix(&t.pi, &t.kappa, upto);
        let mut r = SequenceResiduals::default();
        for k in 0..=upto {
            let dw_target = match k {
                0 => T::one(),
                1 => -T::one(),
                _ => T::zero(),
            };
            r.psi_delta_w = r.psi_delta_w.max(resid(&psi, &t.dw, k, &dw_target));
            let delta = if k == 0 { T::one() } else { T::zero() };
            r.psi_w = r.psi_w.max(resid(&psi, &t.w, k, &delta));
            r.psi_kappa = r.psi_kappa.max(resid(&psi, &t.kappa, k, &at(&phi, k)));
            r.pi_varpi = r.pi_varpi.max(rel_gap(&pi_varpi[k], &delta, || convolve_abs_at(&t.pi, &t.varpi, k)));
            if k < upto {
                let lhs = T::from_int(k as i64 + 1) * t.pi[k + 1].clone();
                let rhs = pi_kappa[k].clone();
                let d = (lhs.clone() - rhs).abs();
                if !d.is_zero() {
                    let scale = convolve_abs_at(&t.pi, &t.kappa, k).max(lhs.to_f64_lossy().abs());
                    r.pi_recursion = r.pi_recursion.max(d.to_f64_lossy() / scale.max(f64::MIN_POSITIVE));
                }
            }
            if t.pi[k].clone() < t.varpi[k].clone().abs() {
                r.pi_dominates = false;
            }
        }
        Ok(r)
    }

    /// `E_x[s^{X_t} 1{t < ζ}] = Ψ_t(s)^x π*[s] ϖ*[Ψ_t(s)]`, evaluated in
    /// binary64 with power series for `π*` and `ϖ*`.
    pub fn transient_gf(&self, x: i64, t: f64, s: f64) -> Result<f64, MbiError> {
        self.check_gf_args(x, t, s)?;
        let big = self.mech.big_psi(t, s)?;
        let series = FloatSeries::new(&self.params)?;
        let phi = match series.pi_star(s).and_then(|a| Ok(a * series.varpi_star(big)?)) {
            Ok(v) => v,
            // Ψ_t(s) close to s₀ makes the series useless; integrate along the flow
            Err(MbiError::SeriesTruncation(_)) => (-self.mech.flow_integral(t, s)?).exp(),
            Err(e) => return Err(e),
        };
        Ok(big.powi(x as i32) * phi)
    }

    /// `Ψ_t(s)`.
    pub fn big_psi(&self, t: f64, s: f64) -> Result<f64, MbiError> {
        self.check_gf_args(0, t, s)?;
        self.mech.big_psi(t, s)
    }

    fn check_gf_args(&self, x: i64, t: f64, s: f64) -> Result<(), MbiError> {
        let s0 = self.s0.to_f64_lossy();
        if x < 0 || t < 0.0 || !(0.0..s0).contains(&s) {
            return Err(MbiError::Domain(format!("need x >= 0, t >= 0 and 0 <= s < s0 = {s0} (x={x}, t={t}, s={s})")));
        }
        Ok(())
    }

    /// Largest relative deviation of `π*[Ψ_t(s)] Φ_t(s)` from `π*[s]` over the
    /// grid. Each factor comes from a different route: `π*[s]` from the power
    /// series, `π*[Ψ_t(s)]` from the integral in space, and `Φ_t(s)` from the
    /// integral in time along the flow.
    pub fn stationarity_residual(&self, grid: &[(f64, f64)]) -> Result<f64, MbiError> {
        if self.class() == Classification::Mbp {
            return Err(MbiError::NotApplicable("π is degenerate for a branching process without immigration".into()));
        }
        let series = FloatSeries::new(&self.params)?;
        let mut worst = 0.0f64;
        for &(t, s) in grid {
            self.check_gf_args(0, t, s)?;
            let big = self.mech.big_psi(t, s)?;
            let pi_s = series.pi_star(s)?;
            let lhs = (self.mech.log_pi_star(big)? - self.mech.flow_integral(t, s)?).exp();
            worst = worst.max((lhs - pi_s).abs() / pi_s.abs());
        }
        Ok(worst)
    }
}

fn resid<T: Scalar>(f: &[T], g: &[T], k: usize, target: &T) -> f64 {
    let v = convolve_at(f, g, k);
    let d = (v - target.clone()).abs();
    if d.is_zero() {
        return 0.0;
    }
    let scale = convolve_abs_at(f, g, k).max(target.to_f64_lossy().abs());
    d.to_f64_lossy() / scale.max(f64::MIN_POSITIVE)
}

/// Like [`resid`] for a coefficient computed elsewhere; the scale is only
/// evaluated when the gap is nonzero.
fn rel_gap<T: Scalar>(v: &T, target: &T, scale: impl FnOnce() -> f64) -> f64 {
    let d = (v.clone() - target.clone()).abs();
    if d.is_zero() {
        return 0.0;
    }
    d.to_f64_lossy() / scale().max(target.to_f64_lossy().abs()).max(f64::MIN_POSITIVE)
}

/// Coefficients `0..=upto` of `f * g`, on the integer path in rational mode.
fn convolve_prefix<T: Scalar>(f: &[T], g: &[T], upto: usize) -> Vec<T> {
    match (T::as_rationals(f), T::as_rationals(g)) {
        (Some(a), Some(b)) => {
            let (ca, cb) = (exact::CommonDenom::from_slice(a), exact::CommonDenom::from_slice(b));
            T::from_rationals((0..=upto).map(|k| exact::CommonDenom::convolve_at(&ca, &cb, k)).collect())
        }
        _ => (0..=upto).map(|k| convolve_at(f, g, k)).collect(),
    }
}

/// Maximum residuals of the coefficient identities, each normalized by the
/// sum of absolute terms of the coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SequenceResiduals {
    pub psi_delta_w: f64,
    pub psi_w: f64,
    pub psi_kappa: f64,
    pub pi_recursion: f64,
    pub pi_varpi: f64,
    pub pi_dominates: bool,
}

impl Default for SequenceResiduals {
    fn default() -> Self {
        SequenceResiduals { psi_delta_w: 0.0, psi_w: 0.0, psi_kappa: 0.0, pi_recursion: 0.0, pi_varpi: 0.0, pi_dominates: true }
    }
}

impl SequenceResiduals {
    pub fn max(&self) -> f64 {
        [self.psi_delta_w, self.psi_w, self.psi_kappa, self.pi_recursion, self.pi_varpi]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Precomputed `𝓗^{[y}(x)` on a square grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptH<T> {
    values: Vec<Vec<T>>,
}

impl<T: Scalar> ScriptH<T> {
    pub fn get(&self, x: usize, y: usize) -> Option<&T> {
        self.values.get(x).and_then(|r| r.get(y))
    }

    pub fn size(&self) -> usize {
        self.values.len()
    }
}

/// Float tables grown on demand for summing `π*` and `ϖ*`.
struct FloatSeries {
    tables: std::cell::RefCell<MbiTables<f64>>,
}

impl FloatSeries {
    fn new<T: Scalar>(params: &MbiParams<T>) -> Result<Self, MbiError> {
        let p = params.convert(Scalar::to_f64_lossy);
        Ok(FloatSeries { tables: std::cell::RefCell::new(MbiTables::build(&p, 64)?) })
    }

    fn pi_star(&self, v: f64) -> Result<f64, MbiError> {
        self.sum(v, false)
    }

    fn varpi_star(&self, v: f64) -> Result<f64, MbiError> {
        self.sum(v, true)
    }

    fn sum(&self, v: f64, varpi: bool) -> Result<f64, MbiError> {
        const STALL: usize = 10;
        loop {
            let n = self.tables.borrow().horizon();
            let (value, settled) = {
                let t = self.tables.borrow();
                let coeffs = if varpi { t.varpi() } else { t.pi() };
                let mut sum = 0.0;
                let mut pow = 1.0;
                let mut terms = Vec::with_capacity(coeffs.len());
                for c in coeffs {
                    let term = c * pow;
                    sum += term;
                    terms.push(term.abs());
                    pow *= v;
                }
                let settled = terms.len() > STALL
                    && terms[terms.len() - STALL..].iter().all(|t| *t <= SERIES_TAIL_TOL * sum.abs());
                (sum, settled)
            };
            if settled {
                return Ok(value);
            }
            let next = 2 * n;
            if next > SERIES_CAP {
                return Err(MbiError::SeriesTruncation(format!(
                    "power series at {v} has not settled after {n} terms"
                )));
            }
            let grown = self.tables.borrow().extended(next).map(Cow::into_owned);
            match grown {
                Ok(t) => *self.tables.borrow_mut() = t,
                Err(MbiError::Overflow { index }) => {
                    return Err(MbiError::SeriesTruncation(format!(
                        "power series at {v} needs coefficients beyond index {index}, which overflow"
                    )))
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests;
