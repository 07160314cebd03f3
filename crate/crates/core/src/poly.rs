//! Dense polynomials stored as coefficient vectors, lowest degree first.

use crate::scalar::Scalar;

pub fn eval<T: Scalar>(c: &[T], s: &T) -> T {
    c.iter().rev().fold(T::zero(), |acc, a| acc * s.clone() + a.clone())
}

pub fn derivative<T: Scalar>(c: &[T]) -> Vec<T> {
    c.iter().enumerate().skip(1).map(|(k, a)| a.clone() * T::from_int(k as i64)).collect()
}

/// Synthetic division by `(s - r)`: returns the quotient and the remainder `c(r)`.
pub fn deflate<T: Scalar>(c: &[T], r: &T) -> (Vec<T>, T) {
    if c.is_empty() {
        return (Vec::new(), T::zero());
    }
    let d = c.len() - 1;
    let mut q = vec![T::zero(); d];
    let mut carry = c[d].clone();
    for k in (0..d).rev() {
        q[k] = carry.clone();
        carry = c[k].clone() + carry * r.clone();
    }
    (q, carry)
}

/// Drops trailing zero coefficients.
pub fn trim<T: Scalar>(mut c: Vec<T>) -> Vec<T> {
    while c.len() > 1 && c.last().is_some_and(|v| v.is_zero()) {
        c.pop();
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deflation_recovers_factor() {
        // (s - 1)(s - 3) = s^2 - 4s + 3
        let c = [3.0, -4.0, 1.0];
        let (q, rem) = deflate(&c, &3.0);
        assert_eq!(q, vec![-1.0, 1.0]);
        assert_eq!(rem, 0.0);
        assert_eq!(eval(&c, &2.0), -1.0);
        assert_eq!(derivative(&c), vec![-4.0, 2.0]);
    }
}
