//! Direct boundary-value solves used as independent references.
//!
//! Each function prescribes boundary values and solves `sum_y Q(x,y) p(y) = 0`
//! on the remaining states. Nothing here goes through the fundamental
//! functions, so agreement with [`ChainAnalysis`](crate::chain::ChainAnalysis)
//! is a genuine cross-check.

use crate::chain::{ChainError, FiniteSkipFreeChain};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Solves for `p` harmonic on `interior` (offsets into the state vector),
/// with `p = boundary(i)` off the interior. Killing contributes `p(∂) = 0`.
pub fn harmonic_extension<T: Scalar>(
    chain: &FiniteSkipFreeChain<T>,
    interior: &[usize],
    boundary: impl Fn(usize) -> T,
) -> Result<Vec<T>, ChainError> {
    let n = chain.len();
    let q = chain.rates();
    let mut inside = vec![false; n];
    for &i in interior {
        inside[i] = true;
    }
    let mut p: Vec<T> = (0..n).map(|i| if inside[i] { T::zero() } else { boundary(i) }).collect();
    if interior.is_empty() {
        return Ok(p);
    }
    let m = interior.len();
    let mut a = Matrix::zeros(m, m);
    let mut rhs = vec![T::zero(); m];
    for (r, &i) in interior.iter().enumerate() {
        for (c, &j) in interior.iter().enumerate() {
            a[(r, c)] = q[(i, j)].clone();
        }
        for j in (0..n).filter(|&j| !inside[j]) {
            if !q[(i, j)].is_zero() {
                rhs[r] = rhs[r].clone() - q[(i, j)].clone() * p[j].clone();
            }
        }
    }
    let sol = a.solve(&rhs)?;
    for (&i, v) in interior.iter().zip(sol) {
        p[i] = v;
    }
    Ok(p)
}

fn offset<T: Scalar>(chain: &FiniteSkipFreeChain<T>, x: i64) -> Result<usize, ChainError> {
    if chain.contains(x) {
        Ok((x - chain.lo()) as usize)
    } else {
        Err(ChainError::OutOfRange(x, chain.lo(), chain.hi()))
    }
}

/// `P_x(T_y < ζ)`: `p(y) = 1`, harmonic elsewhere.
pub fn hit_prob<T: Scalar>(chain: &FiniteSkipFreeChain<T>, x: i64, y: i64) -> Result<T, ChainError> {
    let (i, j) = (offset(chain, x)?, offset(chain, y)?);
    let interior: Vec<usize> = (0..chain.len()).filter(|&k| k != j).collect();
    let p = harmonic_extension(chain, &interior, |_| T::one())?;
    Ok(p[i].clone())
}

/// `P_x(T_a < T_{[b} ∧ ζ)`: `p(a) = 1`, `p = 0` on `[b, ∞)`, harmonic on `(a, b)`.
/// States below `a` are unreachable from `[a, b)` before `T_a`, so they are
/// left out.
pub fn two_sided_exit<T: Scalar>(chain: &FiniteSkipFreeChain<T>, x: i64, a: i64, b: i64) -> Result<T, ChainError> {
    let i = offset(chain, x)?;
    let ia = offset(chain, a)?;
    if x < a || b <= a {
        return Err(ChainError::Domain(format!("need a <= x and a < b (x={x}, a={a}, b={b})")));
    }
    let top = (b - chain.lo()).clamp(0, chain.len() as i64) as usize;
    let interior: Vec<usize> = (ia + 1..top).collect();
    let p = harmonic_extension(chain, &interior, |k| if k == ia { T::one() } else { T::zero() })?;
    Ok(p[i].clone())
}

/// `E_x[f(X_T) 1{T < ζ}]` for the exit time `T` of `(a, b)`.
pub fn exit_functional<T: Scalar>(
    chain: &FiniteSkipFreeChain<T>,
    f: &[T],
    a: i64,
    b: i64,
    x: i64,
) -> Result<T, ChainError> {
    let i = offset(chain, x)?;
    let interior: Vec<usize> = (0..chain.len())
        .filter(|&k| {
            let z = chain.lo() + k as i64;
            a < z && z < b
        })
        .collect();
    let p = harmonic_extension(chain, &interior, |k| f[k].clone())?;
    Ok(p[i].clone())
}

/// Exit probability of `(a, b)` before killing.
pub fn exit_interval_prob<T: Scalar>(chain: &FiniteSkipFreeChain<T>, x: i64, a: i64, b: i64) -> Result<T, ChainError> {
    let ones = vec![T::one(); chain.len()];
    exit_functional(chain, &ones, a, b, x)
}

/// `P_x(T_{[b} < ζ)`: `p = 1` on `[b, ∞)`, harmonic below `b`.
pub fn passage_up<T: Scalar>(chain: &FiniteSkipFreeChain<T>, x: i64, b: i64) -> Result<T, ChainError> {
    let i = offset(chain, x)?;
    let top = (b - chain.lo()).clamp(0, chain.len() as i64) as usize;
    let interior: Vec<usize> = (0..top).collect();
    let p = harmonic_extension(chain, &interior, |_| T::one())?;
    Ok(p[i].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::rational::BigRational as Q;

    fn birth_death() -> FiniteSkipFreeChain<Q> {
        // states 0..3, up 1, down 2, killing 1 at 0 and 1/2 elsewhere
        let r = |n, d| Q::ratio(n, d);
        FiniteSkipFreeChain::from_off_diagonal(
            0,
            vec![
                vec![r(0, 1), r(1, 1), r(0, 1), r(0, 1)],
                vec![r(2, 1), r(0, 1), r(1, 1), r(0, 1)],
                vec![r(0, 1), r(2, 1), r(0, 1), r(1, 1)],
                vec![r(0, 1), r(0, 1), r(2, 1), r(0, 1)],
            ],
            vec![r(1, 1), r(1, 2), r(1, 2), r(1, 2)],
        )
        .unwrap()
    }

    #[test]
    fn boundary_cases() {
        let c = birth_death();
        assert_eq!(hit_prob(&c, 2, 2).unwrap(), Q::from_int(1));
        assert_eq!(two_sided_exit(&c, 1, 1, 3).unwrap(), Q::from_int(1));
        assert_eq!(passage_up(&c, 3, 2).unwrap(), Q::from_int(1));
    }

    #[test]
    fn one_step_race() {
        // from 1 with a=0, b=2: down at rate 2, up 1, kill 1/2
        let c = birth_death();
        assert_eq!(two_sided_exit(&c, 1, 0, 2).unwrap(), Q::ratio(4, 7));
        assert_eq!(exit_interval_prob(&c, 1, 0, 2).unwrap(), Q::ratio(6, 7));
    }
}
