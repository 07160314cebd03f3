//! Adaptive tanh-sinh quadrature on finite intervals.
//!
//! Wraps the `quadrature` crate and bisects the interval whenever a single
//! panel reports an error estimate above its share of the tolerance.

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum QuadError {
    #[error("quadrature did not reach tolerance {tol:e} on [{a}, {b}] (estimate {estimate:e})")]
    NotConverged { a: f64, b: f64, tol: f64, estimate: f64 },
    #[error("integrand is not finite on [{0}, {1}]")]
    NonFinite(f64, f64),
}

const MAX_DEPTH: u32 = 40;

/// `∫_a^b f` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64, QuadError> {
    if a == b {
        return Ok(0.0);
    }
    panel(f, a, b, tol.max(f64::MIN_POSITIVE), 0)
}

fn panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> Result<f64, QuadError> {
    let whole = quadrature::integrate(f, a, b, tol);
    // below this the rule's own rounding dominates and splitting cannot help
    let tol = tol.max(128.0 * f64::EPSILON * whole.integral.abs());
    if whole.integral.is_finite() && whole.error_estimate <= tol {
        return Ok(whole.integral);
    }
    let mid = 0.5 * (a + b);
    if depth >= MAX_DEPTH || mid <= a || mid >= b {
        return if whole.integral.is_finite() {
            Err(QuadError::NotConverged { a, b, tol, estimate: whole.error_estimate })
        } else {
            Err(QuadError::NonFinite(a, b))
        };
    }
    let left = quadrature::integrate(f, a, mid, 0.5 * tol);
    let right = quadrature::integrate(f, mid, b, 0.5 * tol);
    let halves = left.integral + right.integral;
    // The per-panel estimates are pessimistic next to endpoint singularities;
    // two consistent refinements are accepted.
    let floor = 4.0 * f64::EPSILON * halves.abs();
    if halves.is_finite() && whole.integral.is_finite() && (halves - whole.integral).abs() <= tol.max(floor) {
        return Ok(halves);
    }
    let l = if left.integral.is_finite() && left.error_estimate <= 0.5 * tol {
        left.integral
    } else {
        panel(f, a, mid, 0.5 * tol, depth + 1)?
    };
    let r = if right.integral.is_finite() && right.error_estimate <= 0.5 * tol {
        right.integral
    } else {
        panel(f, mid, b, 0.5 * tol, depth + 1)?
    };
    Ok(l + r)
}
