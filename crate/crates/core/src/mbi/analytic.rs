//! Float-only integrals of rational functions of the mechanisms.
//!
//! Every integrand here has the form `N(u)/ψ(u)` with a pole at `s₀` of order
//! one, or of order two in the critical case `s₀ = 1, ψ'(1) = 0`. The pole is
//! split off analytically and only the smooth remainder is integrated
//! numerically. The integral `I(x)` is further transformed so that the
//! algebraic endpoint behaviour at `s₀` becomes a bounded integrand.

use crate::poly;
use crate::quad::{self, QuadError};

use super::MbiError;

/// Absolute tolerance floor for the smooth-part integrals.
const SMOOTH_TOL: f64 = 1e-15;

const FLOW_TOL: f64 = 1e-13;

/// `N/ψ = c2/(u - s₀)² + c1/(u - s₀) + num(u)/den(u)` with `den` free of
/// zeros on `[0, s₀]`.
#[derive(Debug, Clone)]
pub struct PoleSplit {
    pub s0: f64,
    pub order: u8,
    pub c1: f64,
    pub c2: f64,
    num: Vec<f64>,
    den: Vec<f64>,
}

impl PoleSplit {
    pub fn new(n: &[f64], psi: &[f64], s0: f64, order: u8) -> Self {
        let (rho1, _) = poly::deflate(psi, &s0);
        if order == 1 {
            let c1 = poly::eval(n, &s0) / poly::eval(&rho1, &s0);
            let rest = sub(n, &scale(&rho1, c1));
            let (num, _) = poly::deflate(&rest, &s0);
            return PoleSplit { s0, order, c1, c2: 0.0, num, den: rho1 };
        }
        let (rho, _) = poly::deflate(&rho1, &s0);
        let r0 = poly::eval(&rho, &s0);
        let r1 = poly::eval(&poly::derivative(&rho), &s0);
        let n0 = poly::eval(n, &s0);
        let n1 = poly::eval(&poly::derivative(n), &s0);
        let c2 = n0 / r0;
        let c1 = (n1 * r0 - n0 * r1) / (r0 * r0);
        // N - c2 ρ - c1 (u - s₀) ρ vanishes to second order at s₀
        let shifted = mul(&[-s0, 1.0], &rho);
        let rest = sub(&sub(n, &scale(&rho, c2)), &scale(&shifted, c1));
        let (once, _) = poly::deflate(&rest, &s0);
        let (num, _) = poly::deflate(&once, &s0);
        PoleSplit { s0, order, c1, c2, num, den: rho }
    }

    /// Forces the double-pole coefficient to zero (used when it is known to
    /// vanish exactly and only rounding made it nonzero).
    pub fn without_double_pole(mut self) -> Self {
        self.c2 = 0.0;
        self
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    pub fn smooth(&self, u: f64) -> f64 {
        poly::eval(&self.num, &u) / poly::eval(&self.den, &u)
    }

    /// `∫_0^v num/den`.
    pub fn smooth_integral(&self, v: f64) -> Result<f64, QuadError> {
        let f = |u: f64| self.smooth(u);
        let rough = quad::integrate(&f, 0.0, v, 1e-9)?;
        quad::integrate(&f, 0.0, v, SMOOTH_TOL.max(1e-15 * rough.abs()))
    }

    /// Closed-form integral of the pole terms over `[0, v]`, `v < s₀`.
    pub fn singular_integral(&self, v: f64) -> f64 {
        let s0 = self.s0;
        let log_part = self.c1 * (-v / s0).ln_1p();
        let double = if self.c2 == 0.0 { 0.0 } else { self.c2 * v / (s0 * (s0 - v)) };
        log_part + double
    }

    /// `∫_0^v N/ψ` for `0 <= v < s₀`.
    pub fn integral(&self, v: f64) -> Result<f64, QuadError> {
        Ok(self.singular_integral(v) + self.smooth_integral(v)?)
    }
}

fn scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|v| v * c).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n).map(|i| a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0)).collect()
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Float view of the two mechanisms with their pole decompositions.
#[derive(Debug, Clone)]
pub struct Mechanisms {
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
    pub s0: f64,
    /// `s₀ = 1` is a double root of `ψ` (`p = 0`, `m = 1`).
    pub double_root: bool,
    /// Decomposition of `1/ψ`.
    pub inv_psi: PoleSplit,
    /// Decomposition of `φ/ψ`.
    pub phi_psi: PoleSplit,
}

/// Behaviour of the integrand of `I(x)` at `s₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Endpoint {
    /// Integrand behaves like `(s₀ - v)^{c-1}`; finite iff `c > 0`.
    Algebraic { c: f64 },
    /// Integrand decays like `exp(-e0/(1 - v))` with `e0 > 0`.
    Exponential { e0: f64 },
}

impl Endpoint {
    pub fn is_integrable(&self) -> bool {
        match *self {
            Endpoint::Algebraic { c } => c > ENDPOINT_EPS,
            Endpoint::Exponential { .. } => true,
        }
    }
}

/// Exponents at or below this are treated as a divergent endpoint.
pub const ENDPOINT_EPS: f64 = 1e-12;

impl Mechanisms {
    /// `q_is_zero` removes the rounding residue of `φ(1)` in the critical case.
    pub fn new(psi: Vec<f64>, phi: Vec<f64>, s0: f64, double_root: bool, q_is_zero: bool) -> Self {
        let order = if double_root { 2 } else { 1 };
        let inv_psi = PoleSplit::new(&[1.0], &psi, s0, order);
        let mut phi_psi = PoleSplit::new(&phi, &psi, s0, order);
        if double_root && q_is_zero {
            phi_psi = phi_psi.without_double_pole();
        }
        Mechanisms { psi, phi, s0, double_root, inv_psi, phi_psi }
    }

    pub fn endpoint(&self) -> Endpoint {
        if !self.double_root {
            Endpoint::Algebraic { c: -self.phi_psi.c1 }
        } else if self.phi_psi.c2 > 0.0 {
            Endpoint::Exponential { e0: self.phi_psi.c2 }
        } else {
            Endpoint::Algebraic { c: -self.phi_psi.c1 - 1.0 }
        }
    }

    /// `∫_0^v φ/ψ`, so that `π*[v] = exp(L(v))` and `ϖ*[v] = exp(-L(v))`.
    pub fn log_pi_star(&self, v: f64) -> Result<f64, QuadError> {
        self.phi_psi.integral(v)
    }

    /// `Λ(s) = ∫_0^s 1/ψ`.
    pub fn lambda(&self, s: f64) -> Result<f64, QuadError> {
        self.inv_psi.integral(s)
    }

    /// Inverse of `Λ` on `[0, s₀)` by Newton's method inside a shrinking
    /// bracket, falling back to bisection whenever a step leaves it.
    pub fn lambda_inv(&self, y: f64) -> Result<f64, MbiError> {
        if y <= 0.0 {
            return Ok(0.0);
        }
        let (mut lo, mut hi) = (0.0f64, self.s0);
        let mut s = 0.5 * self.s0;
        for _ in 0..200 {
            let f = self.lambda(s)? - y;
            if f > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let mut next = s - f * poly::eval(&self.psi, &s);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - s).abs() <= 2.0 * f64::EPSILON * s.max(f64::MIN_POSITIVE) || hi - lo <= f64::EPSILON * hi {
                return Ok(next);
            }
            s = next;
        }
        Ok(s)
    }

    /// `Ψ_t(s) = Λ^{-1}(t + Λ(s))`.
    pub fn big_psi(&self, t: f64, s: f64) -> Result<f64, MbiError> {
        if t == 0.0 {
            return Ok(s);
        }
        self.lambda_inv(t + self.lambda(s)?)
    }

    /// `∫_0^t φ(Ψ_u(s)) du`, integrated in time along the flow. This is the
    /// log of `1/Φ_t(s)` and does not touch the power series.
    pub fn flow_integral(&self, t: f64, s: f64) -> Result<f64, MbiError> {
        let f = |u: f64| match self.big_psi(u, s) {
            Ok(v) => poly::eval(&self.phi, &v),
            Err(_) => f64::NAN,
        };
        Ok(quad::integrate(&f, 0.0, t, FLOW_TOL)?)
    }

    /// `I(x) = ∫_0^{s₀} v^x ϖ*[v] / ψ(v) dv` by quadrature after removing the
    /// endpoint behaviour at `s₀`.
    pub fn integral_i(&self, x: u64) -> Result<IntegralI, MbiError> {
        let endpoint = self.endpoint();
        if !endpoint.is_integrable() {
            return Err(MbiError::NonConvergent(format!(
                "the integrand of I is not integrable at s0 = {} ({:?})",
                self.s0, endpoint
            )));
        }
        let s0 = self.s0;
        let xf = x as f64;
        let split = &self.phi_psi;
        let value = match endpoint {
            Endpoint::Algebraic { c } => {
                // w = ((s₀ - v)/s₀)^c turns the integrand into a bounded one
                let den_sign = if self.double_root { 1.0 } else { -1.0 };
                let f = |w: f64| {
                    let v = s0 * (1.0 - w.powf(1.0 / c));
                    if v <= 0.0 {
                        return if x == 0 { self.bounded_factor(0.0, den_sign) } else { 0.0 };
                    }
                    let r = split.smooth_integral(v).unwrap_or(f64::NAN);
                    (xf * v.ln() - r).exp() / (den_sign * poly::eval(split.den(), &v))
                };
                integrate_rel(&f, 0.0, 1.0)? / c
            }
            Endpoint::Exponential { e0 } => {
                let c1 = split.c1;
                let f = |v: f64| {
                    let gap = 1.0 - v;
                    if gap <= 0.0 {
                        return 0.0;
                    }
                    let decay = -e0 * v / gap;
                    if decay < -745.0 {
                        return 0.0;
                    }
                    let r = split.smooth_integral(v).unwrap_or(f64::NAN);
                    let xv = if x == 0 { 0.0 } else { xf * v.ln() };
                    let log = xv + decay - (c1 + 2.0) * gap.ln() - r;
                    log.exp() / poly::eval(split.den(), &v)
                };
                integrate_rel(&f, 0.0, 1.0)?
            }
        };
        Ok(IntegralI { x, value, endpoint })
    }

    fn bounded_factor(&self, v: f64, den_sign: f64) -> f64 {
        1.0 / (den_sign * poly::eval(self.phi_psi.den(), &v))
    }

    /// `I(x) = s₀^{x+1} sum_l ũ(l)/(x + l + 1)` where `ũ(l) = (W⋆ϖ)(l) s₀^l`
    /// is generated from the differential equations of the generating
    /// functions in the scaled variable `s/s₀`.
    ///
    /// Stops once `STALL` consecutive terms fall below `tol` times the partial
    /// sum, or fails after `cap` terms.
    pub fn integral_i_series(&self, x: u64, tol: f64, cap: usize) -> Result<SeriesValue, MbiError> {
        const STALL: usize = 10;
        let s0 = self.s0;
        let psi_t: Vec<f64> = self.psi.iter().enumerate().map(|(j, c)| c * s0.powi(j as i32)).collect();
        let phi_t: Vec<f64> = self.phi.iter().enumerate().map(|(j, c)| c * s0.powi(j as i32)).collect();
        let d = psi_t.len() - 1;
        let e = phi_t.len() - 1;
        let mut w = vec![1.0f64];
        let mut u: Vec<f64> = Vec::new();
        let mut sum = 0.0f64;
        let mut small = 0usize;
        for k in 0..cap {
            if k > 0 {
                // ψ̃_0 k ϖ̃(k) = -sum_{j>=1} ψ̃_j (k-j) ϖ̃(k-j) - s₀ sum_j φ̃_j ϖ̃(k-1-j)
                let mut acc = 0.0;
                for j in 1..=d.min(k) {
                    acc -= psi_t[j] * (k - j) as f64 * w[k - j];
                }
                for j in 0..=e.min(k - 1) {
                    acc -= s0 * phi_t[j] * w[k - 1 - j];
                }
                w.push(acc / (psi_t[0] * k as f64));
            }
            let mut uk = w[k];
            for j in 1..=d.min(k) {
                uk -= psi_t[j] * u[k - j];
            }
            uk /= psi_t[0];
            u.push(uk);
            let term = uk / (x + k as u64 + 1) as f64;
            sum += term;
            if !sum.is_finite() {
                return Err(MbiError::NonConvergent("series overflowed".into()));
            }
            if term.abs() <= tol * sum.abs() {
                small += 1;
                if small >= STALL {
                    return Ok(SeriesValue { value: s0.powi(x as i32 + 1) * sum, terms: k + 1, last_term: term.abs() });
                }
            } else {
                small = 0;
            }
        }
        Err(MbiError::NonConvergent(format!("I({x}) series did not settle within {cap} terms")))
    }
}

/// Quadrature to roughly 1e-13 relative accuracy.
fn integrate_rel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<f64, MbiError> {
    let rough = quad::integrate(f, a, b, 1e-8)?;
    let v = quad::integrate(f, a, b, (1e-14 * rough.abs()).max(f64::MIN_POSITIVE))?;
    if !v.is_finite() {
        return Err(MbiError::NonConvergent("quadrature produced a non-finite value".into()));
    }
    Ok(v)
}

/// One value of `I(x)` with the endpoint regime that was used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegralI {
    pub x: u64,
    pub value: f64,
    pub endpoint: Endpoint,
}

/// Truncated-series value with its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub value: f64,
    pub terms: usize,
    pub last_term: f64,
}
