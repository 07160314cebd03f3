//! Finite skip-free downward chains on an integer interval `[lo, hi]`.
//!
//! [`FiniteSkipFreeChain`] holds the Q-matrix and the per-state killing
//! rates. [`ChainAnalysis`] fixes a reference point and a positive excessive
//! reference measure, and from them derives the three fundamental functions
//! (`H`, the dual `Ĥ`, and the killed family `H^{[b}`) through which every
//! hitting and exit identity is expressed.

use std::collections::BTreeSet;

use serde_json::{json, Value};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::wide::Wide;
use crate::scalar::{rel_dev, Mode, Scalar, ScalarError};

/// Largest state space accepted by the dense solvers.
/// Iterative-refinement passes for solves whose results get differenced.
const REFINE_STEPS: usize = 2;

pub const MAX_STATES: usize = 2000;

/// Float tolerance on `sum_y Q(x, y) + kill(x) = 0`.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Float tolerance on the excessivity check `pi Q <= 0`.
pub const EXCESSIVE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ChainError {
    #[error("invalid chain: {0}")]
    Invalid(String),
    #[error("generator is singular; some state is recurrent")]
    SingularGenerator,
    #[error("state {0} outside [{1}, {2}]")]
    OutOfRange(i64, i64, i64),
    #[error("{0}")]
    Domain(String),
    #[error("bad reference data: {0}")]
    Reference(String),
    #[error("{0} states exceeds the dense-solver cap of {MAX_STATES}")]
    TooLarge(usize),
    #[error(transparent)]
    Scalar(#[from] ScalarError),
}

impl From<LinalgError> for ChainError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::Singular { .. } => ChainError::SingularGenerator,
            LinalgError::Dimension(d) => ChainError::Invalid(d),
        }
    }
}

/// One failed structural condition.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    MissingDownRate { x: i64 },
    SkipsDown { x: i64, y: i64 },
    NegativeRate { x: i64, y: i64 },
    NegativeKill { x: i64 },
    RowSum { x: i64, residual: f64 },
    NotTransient,
    NegativeResolvent { x: i64, y: i64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::MissingDownRate { x } => write!(f, "Q({x},{}) must be positive", x - 1),
            Violation::SkipsDown { x, y } => write!(f, "Q({x},{y}) jumps down by more than one"),
            Violation::NegativeRate { x, y } => write!(f, "Q({x},{y}) is negative"),
            Violation::NegativeKill { x } => write!(f, "killing rate at {x} is negative"),
            Violation::RowSum { x, residual } => {
                write!(f, "row {x}: rates plus killing miss the diagonal by {residual:e}")
            }
            Violation::NotTransient => write!(f, "not all states are transient"),
            Violation::NegativeResolvent { x, y } => write!(f, "G({x},{y}) is negative"),
        }
    }
}

/// Result of [`FiniteSkipFreeChain::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub violations: Vec<Violation>,
    pub transient: bool,
}

impl Diagnostics {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Q-matrix on `{lo, ..., hi}` plus killing rates `Q(x, ∂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSkipFreeChain<T> {
    lo: i64,
    hi: i64,
    rates: Matrix<T>,
    kill: Vec<T>,
}

impl<T: Scalar> FiniteSkipFreeChain<T> {
    /// Full rows including the diagonal. Only shapes are checked here; the
    /// rate conditions are reported by [`validate`](Self::validate).
    pub fn new(lo: i64, rows: Vec<Vec<T>>, kill: Vec<T>) -> Result<Self, ChainError> {
        let n = rows.len();
        if n == 0 {
            return Err(ChainError::Invalid("empty state space".into()));
        }
        if n > MAX_STATES {
            return Err(ChainError::TooLarge(n));
        }
        if kill.len() != n {
            return Err(ChainError::Invalid(format!("{} killing rates for {n} states", kill.len())));
        }
        let rates = Matrix::from_rows(rows)?;
        if rates.cols() != n {
            return Err(ChainError::Invalid("Q-matrix is not square".into()));
        }
        Ok(FiniteSkipFreeChain { lo, hi: lo + n as i64 - 1, rates, kill })
    }

    /// Builds the diagonal from off-diagonal rates and killing rates.
    pub fn from_off_diagonal(lo: i64, mut rows: Vec<Vec<T>>, kill: Vec<T>) -> Result<Self, ChainError> {
        for (i, row) in rows.iter_mut().enumerate() {
            let k = kill.get(i).cloned().unwrap_or_else(T::zero);
            let out = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .fold(k, |acc, (_, v)| acc + v.clone());
            if let Some(d) = row.get_mut(i) {
                *d = -out;
            }
        }
        Self::new(lo, rows, kill)
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.kill.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kill.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = i64> {
        self.lo..=self.hi
    }

    pub fn rates(&self) -> &Matrix<T> {
        &self.rates
    }

    pub fn kill(&self) -> &[T] {
        &self.kill
    }

    pub fn rate(&self, x: i64, y: i64) -> T {
        self.rates[(self.idx(x), self.idx(y))].clone()
    }

    pub fn kill_at(&self, x: i64) -> T {
        self.kill[self.idx(x)].clone()
    }

    pub fn contains(&self, x: i64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }

    pub(crate) fn idx(&self, x: i64) -> usize {
        debug_assert!(self.contains(x), "state {x} outside [{}, {}]", self.lo, self.hi);
        (x - self.lo) as usize
    }

    fn check(&self, x: i64) -> Result<usize, ChainError> {
        if self.contains(x) {
            Ok(self.idx(x))
        } else {
            Err(ChainError::OutOfRange(x, self.lo, self.hi))
        }
    }

    pub fn convert<U: Scalar>(&self, f: impl Fn(&T) -> U) -> FiniteSkipFreeChain<U> {
        FiniteSkipFreeChain {
            lo: self.lo,
            hi: self.hi,
            rates: self.rates.map(&f),
            kill: self.kill.iter().map(&f).collect(),
        }
    }

    /// Lists every violated structural condition and checks transience by
    /// inverting `-Q`.
    pub fn validate(&self) -> Diagnostics {
        let n = self.len();
        let mut violations = Vec::new();
        for i in 0..n {
            let x = self.lo + i as i64;
            if i > 0 && self.rates[(i, i - 1)] <= T::zero() {
                violations.push(Violation::MissingDownRate { x });
            }
            for j in 0..n {
                if i == j {
                    continue;
                }
                let y = self.lo + j as i64;
                let q = &self.rates[(i, j)];
                if *q < T::zero() {
                    violations.push(Violation::NegativeRate { x, y });
                } else if j + 2 <= i && !q.is_zero() {
                    violations.push(Violation::SkipsDown { x, y });
                }
            }
            if self.kill[i] < T::zero() {
                violations.push(Violation::NegativeKill { x });
            }
            let sum = self.rates.row(i).iter().fold(self.kill[i].clone(), |a, v| a + v.clone());
            let ok = match T::MODE {
                Mode::Rational => sum.is_zero(),
                Mode::Float => {
                    let scale = self.rates[(i, i)].to_f64_lossy().abs().max(1.0);
                    sum.to_f64_lossy().abs() <= ROW_SUM_TOL * scale
                }
            };
            if !ok {
                violations.push(Violation::RowSum { x, residual: sum.to_f64_lossy() });
            }
        }
        let transient = match self.resolvent_raw() {
            Ok(g) => {
                let mut ok = true;
                for i in 0..n {
                    for j in 0..n {
                        let v = &g[(i, j)];
                        let negative = match T::MODE {
                            Mode::Rational => *v < T::zero(),
                            Mode::Float => v.to_f64_lossy() < -1e-12 * g.max_abs(),
                        };
                        if negative {
                            ok = false;
                            violations.push(Violation::NegativeResolvent {
                                x: self.lo + i as i64,
                                y: self.lo + j as i64,
                            });
                        }
                    }
                    if g[(i, i)] <= T::zero() {
                        ok = false;
                    }
                }
                ok
            }
            Err(_) => false,
        };
        if !transient && !violations.iter().any(|v| matches!(v, Violation::NegativeResolvent { .. })) {
            violations.push(Violation::NotTransient);
        }
        Diagnostics { violations, transient }
    }

    fn neg_generator(&self) -> Matrix<T> {
        self.rates.map(|v| -v.clone())
    }

    /// `G = (-Q)^{-1}`.
    pub fn resolvent_raw(&self) -> Result<Matrix<T>, ChainError> {
        let cols = self.resolvent_wide()?;
        let n = self.len();
        let mut g = Matrix::zeros(n, n);
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                g[(i, j)] = v.value();
            }
        }
        Ok(g)
    }

    /// Columns of `G` in double-word precision.
    fn resolvent_wide(&self) -> Result<Vec<Vec<Wide<T>>>, ChainError> {
        Ok(self.neg_generator().inverse_refined(REFINE_STEPS)?)
    }

    /// Resolvent of the chain killed on entering `avoid`, zero-extended to
    /// all of `E x E`.
    pub fn killed_resolvent(&self, avoid: &BTreeSet<i64>) -> Result<Matrix<T>, ChainError> {
        let keep: Vec<usize> =
            (0..self.len()).filter(|&i| !avoid.contains(&(self.lo + i as i64))).collect();
        killed_inverse(&self.rates, &keep)
    }

    /// `Q h` at every state (killing sends mass to `∂`, where `h = 0`).
    pub fn apply(&self, h: &[T]) -> Vec<T> {
        self.rates.mul_vec(h)
    }

    pub fn from_json(v: &Value) -> Result<Self, ChainError> {
        let lo = v
            .get("lo")
            .and_then(Value::as_i64)
            .ok_or_else(|| ChainError::Invalid("missing integer field `lo`".into()))?;
        let rows = v
            .get("rows")
            .and_then(Value::as_array)
            .ok_or_else(|| ChainError::Invalid("missing array field `rows`".into()))?;
        let rows = rows
            .iter()
            .map(|r| {
                r.as_array()
                    .ok_or_else(|| ChainError::Invalid("each row must be an array".into()))?
                    .iter()
                    .map(|e| T::parse_json(e).map_err(ChainError::from))
                    .collect::<Result<Vec<T>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let kill = v
            .get("kill")
            .and_then(Value::as_array)
            .ok_or_else(|| ChainError::Invalid("missing array field `kill`".into()))?
            .iter()
            .map(|e| T::parse_json(e).map_err(ChainError::from))
            .collect::<Result<Vec<T>, _>>()?;
        let chain = Self::new(lo, rows, kill)?;
        if let Some(hi) = v.get("hi").and_then(Value::as_i64) {
            if hi != chain.hi {
                return Err(ChainError::Invalid(format!(
                    "`hi` = {hi} but {} rows imply hi = {}",
                    chain.len(),
                    chain.hi
                )));
            }
        }
        Ok(chain)
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = (0..self.len())
            .map(|i| Value::Array(self.rates.row(i).iter().map(Scalar::to_json).collect()))
            .collect();
        json!({
            "lo": self.lo,
            "hi": self.hi,
            "rows": rows,
            "kill": self.kill.iter().map(Scalar::to_json).collect::<Vec<_>>(),
        })
    }
}

/// Inverse of `-Q` restricted to `keep`, placed back into a zero `n x n`.
pub(crate) fn killed_inverse<T: Scalar>(rates: &Matrix<T>, keep: &[usize]) -> Result<Matrix<T>, ChainError> {
    let n = rates.rows();
    let mut out = Matrix::zeros(n, n);
    if keep.is_empty() {
        return Ok(out);
    }
    let m = keep.len();
    let mut sub = Matrix::zeros(m, m);
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            sub[(a, b)] = -rates[(i, j)].clone();
        }
    }
    let inv = sub.inverse()?;
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            out[(i, j)] = inv[(a, b)].clone();
        }
    }
    Ok(out)
}

/// Reference point `𝔬` and positive excessive reference measure `π`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceData<T> {
    pub ref_point: i64,
    pub measure: Vec<T>,
}

impl<T: Scalar> ReferenceData<T> {
    /// `𝔬 = lo` and `π(y) = sum_x 2^{-σ(x)} G(x, y)` with `σ(lo) = 1, σ(lo+1) = 2, ...`.
    pub fn default_for(chain: &FiniteSkipFreeChain<T>, g: &Matrix<T>) -> Self {
        let n = chain.len();
        let half = T::ratio(1, 2);
        let mut weight = half.clone();
        let mut measure = vec![T::zero(); n];
        for i in 0..n {
            for (j, m) in measure.iter_mut().enumerate() {
                *m = m.clone() + weight.clone() * g[(i, j)].clone();
            }
            weight = weight * half.clone();
        }
        ReferenceData { ref_point: chain.lo(), measure }
    }

    /// Positivity, the range of `𝔬`, and excessivity `π Q <= 0`.
    pub fn check(&self, chain: &FiniteSkipFreeChain<T>) -> Result<(), ChainError> {
        if self.measure.len() != chain.len() {
            return Err(ChainError::Reference(format!(
                "measure has {} entries for {} states",
                self.measure.len(),
                chain.len()
            )));
        }
        if !chain.contains(self.ref_point) {
            return Err(ChainError::Reference(format!("reference point {} outside E", self.ref_point)));
        }
        if let Some(j) = self.measure.iter().position(|p| *p <= T::zero()) {
            return Err(ChainError::Reference(format!("π({}) is not positive", chain.lo() + j as i64)));
        }
        let pq = chain.rates().transpose().mul_vec(&self.measure);
        for (j, v) in pq.iter().enumerate() {
            let bad = match T::MODE {
                Mode::Rational => *v > T::zero(),
                Mode::Float => v.to_f64_lossy() > EXCESSIVE_TOL,
            };
            if bad {
                return Err(ChainError::Reference(format!(
                    "π is not excessive: (πQ)({}) = {}",
                    chain.lo() + j as i64,
                    v
                )));
            }
        }
        Ok(())
    }
}

/// Resolvent `G` and its density `g(x, y) = G(x, y) / π(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventMatrix<T> {
    pub raw: Matrix<T>,
    pub density: Matrix<T>,
}

/// A validated transient chain together with its fundamental functions.
#[derive(Debug, Clone)]
pub struct ChainAnalysis<T> {
    chain: FiniteSkipFreeChain<T>,
    reference: ReferenceData<T>,
    resolvent: ResolventMatrix<T>,
    h: Vec<T>,
    h_hat: Vec<T>,
    /// `H^{[b}` for `b = lo, ..., hi + 1`.
    h_wide: Vec<Wide<T>>,
    killed_h: Vec<Vec<Wide<T>>>,
    c: T,
}

impl<T: Scalar> ChainAnalysis<T> {
    /// Validates `chain` and uses the default reference data.
    pub fn new(chain: FiniteSkipFreeChain<T>) -> Result<Self, ChainError> {
        Self::build(chain, None)
    }

    pub fn with_reference(chain: FiniteSkipFreeChain<T>, reference: ReferenceData<T>) -> Result<Self, ChainError> {
        Self::build(chain, Some(reference))
    }

    fn build(chain: FiniteSkipFreeChain<T>, reference: Option<ReferenceData<T>>) -> Result<Self, ChainError> {
        let diag = chain.validate();
        if !diag.is_valid() {
            let msg: Vec<String> = diag.violations.iter().map(ToString::to_string).collect();
            return Err(if !diag.transient && msg.len() == 1 {
                ChainError::SingularGenerator
            } else {
                ChainError::Invalid(msg.join("; "))
            });
        }
        let g_cols = chain.resolvent_wide()?;
        let n = chain.len();
        let mut g = Matrix::zeros(n, n);
        for (j, col) in g_cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                g[(i, j)] = v.value();
            }
        }
        let reference = match reference {
            Some(r) => r,
            None => ReferenceData::default_for(&chain, &g),
        };
        reference.check(&chain)?;
        let o = chain.idx(reference.ref_point);
        let l = 0;
        let r = n - 1;

        // H and H^{[b} are differenced against each other, so they are kept
        // in double-word precision.
        let g_ol = g_cols[l][o].clone();
        let h_wide: Vec<Wide<T>> = g_cols[l].iter().map(|v| v.div(&g_ol)).collect();
        let h: Vec<T> = h_wide.iter().map(Wide::value).collect();

        // Ĝ(y, x) = π(x) G(x, y) / π(y), so Ĥ(y) = Ĝ(y, r) / Ĝ(𝔬, r).
        let pi = &reference.measure;
        let dual_col = |y: usize| pi[r].clone() * g[(r, y)].clone() / pi[y].clone();
        let h_hat: Vec<T> = (0..n).map(|y| dual_col(y) / dual_col(o)).collect();

        let mut killed_h = Vec::with_capacity(n + 1);
        for b in 0..=n {
            let col = killed_column(chain.rates(), b, l)?;
            killed_h.push(col.into_iter().map(|v| v.div(&g_ol)).collect());
        }

        let density = Matrix::from_rows(
            (0..n).map(|i| (0..n).map(|j| g[(i, j)].clone() / pi[j].clone()).collect()).collect(),
        )?;
        let c = density[(o, o)].clone();
        Ok(ChainAnalysis {
            chain,
            reference,
            resolvent: ResolventMatrix { raw: g, density },
            h,
            h_hat,
            h_wide,
            killed_h,
            c,
        })
    }

    pub fn chain(&self) -> &FiniteSkipFreeChain<T> {
        &self.chain
    }

    pub fn reference(&self) -> &ReferenceData<T> {
        &self.reference
    }

    pub fn resolvent(&self) -> &ResolventMatrix<T> {
        &self.resolvent
    }

    /// `𝔠 = g(𝔬, 𝔬)`.
    pub fn normalizer(&self) -> &T {
        &self.c
    }

    /// `H(x) = G(x, lo) / G(𝔬, lo)`, indexed from `lo`.
    pub fn fundamental_h(&self) -> &[T] {
        &self.h
    }

    /// Dual fundamental function `Ĥ(y) = Ĝ(y, hi) / Ĝ(𝔬, hi)`.
    pub fn dual_h_hat(&self) -> &[T] {
        &self.h_hat
    }

    /// `H^{[b}(x) = G^{[b}(x, lo) / G(𝔬, lo)` for every `x`; zero at `x >= b`.
    pub fn killed_fundamental_hb(&self, b: i64) -> Vec<T> {
        self.killed_h[self.b_index(b)].iter().map(Wide::value).collect()
    }

    fn b_index(&self, b: i64) -> usize {
        (b.clamp(self.chain.lo(), self.chain.hi() + 1) - self.chain.lo()) as usize
    }

    fn hb(&self, b: i64, x: i64) -> T {
        self.hbw(b, x).value()
    }

    fn hbw(&self, b: i64, x: i64) -> &Wide<T> {
        &self.killed_h[self.b_index(b)][self.chain.idx(x)]
    }

    /// `H(x) - H^{[y}(x)` without cancellation.
    fn h_minus_hb(&self, y: i64, x: i64) -> T {
        self.h_wide[self.chain.idx(x)].sub(self.hbw(y, x)).value()
    }

    fn i(&self, x: i64) -> Result<usize, ChainError> {
        self.chain.check(x)
    }

    /// Largest relative deviation of `g(x,y)` from `𝔠 Ĥ(y) (H(x) - H^{[y}(x))`.
    ///
    /// Entries are compared relative to their own size, with a floor of
    /// `1e-12 max g` so that structural zeros are not judged on rounding noise.
    pub fn resolvent_identity_residual(&self) -> f64 {
        let n = self.chain.len();
        let floor = 1e-12 * self.resolvent.density.max_abs();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let y = self.chain.lo() + j as i64;
                let x = self.chain.lo() + i as i64;
                let rhs = self.c.clone() * self.h_hat[j].clone() * self.h_minus_hb(y, x);
                worst = worst.max(rel_dev(&self.resolvent.density[(i, j)], &rhs, floor));
            }
        }
        worst
    }

    /// `G(x, y) = π(y) 𝔠 Ĥ(y) (H(x) - H^{[y}(x))`, the expected time spent at
    /// `y` before killing, from the fundamental functions.
    pub fn resolvent_closed(&self, x: i64, y: i64) -> Result<T, ChainError> {
        self.i(x)?;
        let j = self.i(y)?;
        let pi = self.reference.measure[j].clone();
        Ok(pi * self.c.clone() * self.h_hat[j].clone() * self.h_minus_hb(y, x))
    }

    /// `P_x(T_y < ζ) = (H(x) - H^{[y}(x)) / H(y)`.
    pub fn hit_prob(&self, x: i64, y: i64) -> Result<T, ChainError> {
        self.i(x)?;
        let j = self.i(y)?;
        Ok(self.h_minus_hb(y, x) / self.h[j].clone())
    }

    /// `P_x(T_a < T_{[b} ∧ ζ) = H^{[b}(x) / H^{[b}(a)` for `a <= x`, `a < b`.
    /// `b` may exceed `hi`, in which case the upper killing set is empty.
    pub fn two_sided_exit(&self, x: i64, a: i64, b: i64) -> Result<T, ChainError> {
        self.i(x)?;
        self.i(a)?;
        if x < a || b <= a {
            return Err(ChainError::Domain(format!("two-sided exit needs a <= x and a < b (x={x}, a={a}, b={b})")));
        }
        if x >= b {
            return Ok(T::zero());
        }
        Ok(self.hb(b, x) / self.hb(b, a))
    }

    /// Density of the resolvent killed outside `(a, b)`, from the fundamental
    /// functions: `𝔠 Ĥ(y) (H^{[b}(x) H^{[y}(a) / H^{[b}(a) - H^{[y}(x))`.
    pub fn killed_density_two_sided(&self, x: i64, y: i64, a: i64, b: i64) -> Result<T, ChainError> {
        let (_, j) = (self.i(x)?, self.i(y)?);
        if !(a < x && x < b && a < y && y < b) {
            return Ok(T::zero());
        }
        let ratio = self.hbw(b, x).div(self.hbw(b, a));
        let inner = ratio.mul(self.hbw(y, a)).sub(self.hbw(y, x)).value();
        Ok(self.c.clone() * self.h_hat[j].clone() * inner)
    }

    /// Density of the resolvent killed on `[b, ∞)`: `𝔠 Ĥ(y) (H^{[b}(x) - H^{[y}(x))`.
    pub fn killed_density_one_sided(&self, x: i64, y: i64, b: i64) -> Result<T, ChainError> {
        let (_, j) = (self.i(x)?, self.i(y)?);
        if x >= b || y >= b {
            return Ok(T::zero());
        }
        Ok(self.c.clone() * self.h_hat[j].clone() * self.hbw(b, x).sub(self.hbw(y, x)).value())
    }

    /// `E_x[f(X_T) 1{T < ζ}]` for `T` the exit time of `(a, b)`, given `f`
    /// as a vector over `E`.
    pub fn dynkin_exit(&self, f: &[T], a: i64, b: i64, x: i64) -> Result<T, ChainError> {
        let i = self.i(x)?;
        if f.len() != self.chain.len() {
            return Err(ChainError::Domain(format!("f has {} entries for {} states", f.len(), self.chain.len())));
        }
        if a >= b {
            return Err(ChainError::Domain(format!("need a < b (a={a}, b={b})")));
        }
        let qf = self.chain.apply(f);
        let mut acc = f[i].clone();
        for z in (a + 1).max(self.chain.lo())..b.min(self.chain.hi() + 1) {
            let k = self.chain.idx(z);
            let g = self.reference.measure[k].clone() * self.killed_density_two_sided(x, z, a, b)?;
            acc = acc + qf[k].clone() * g;
        }
        Ok(acc)
    }

    /// Exit probability of `(a, b)` before killing (`dynkin_exit` with `f ≡ 1`).
    pub fn exit_interval_prob(&self, x: i64, a: i64, b: i64) -> Result<T, ChainError> {
        let ones = vec![T::one(); self.chain.len()];
        self.dynkin_exit(&ones, a, b, x)
    }

    /// `P_x(T_{[b} < ζ) = 1 - sum_{z < b} Q(z, ∂) G^{[b}(x, z)`.
    pub fn passage_up_prob(&self, x: i64, b: i64) -> Result<T, ChainError> {
        self.i(x)?;
        if x >= b {
            return Ok(T::one());
        }
        let mut acc = T::one();
        for z in self.chain.lo()..b.min(self.chain.hi() + 1) {
            let k = self.chain.idx(z);
            let g = self.reference.measure[k].clone() * self.killed_density_one_sided(x, z, b)?;
            acc = acc - self.chain.kill()[k].clone() * g;
        }
        Ok(acc)
    }

    /// Largest `|(Q h)(x)|` over `x > a`: zero exactly when `h` restricted to
    /// `[a, hi]` is harmonic for the chain stopped at `a`.
    pub fn harmonicity_residual(&self, h: &[T], a: i64) -> f64 {
        let qh = self.chain.apply(h);
        (a + 1..=self.chain.hi())
            .filter(|&x| self.chain.contains(x))
            .map(|x| qh[self.chain.idx(x)].to_f64_lossy().abs())
            .fold(0.0, f64::max)
    }

    /// Dual generator `Q̂(y, x) = π(x) Q(x, y) / π(y)`.
    pub fn dual_rates(&self) -> Matrix<T> {
        let n = self.chain.len();
        let pi = &self.reference.measure;
        let q = self.chain.rates();
        let mut d = Matrix::zeros(n, n);
        for y in 0..n {
            for x in 0..n {
                d[(y, x)] = pi[x].clone() * q[(x, y)].clone() / pi[y].clone();
            }
        }
        d
    }

    /// Largest `|ĝ^A(y, x) - g^A(x, y)|` relative to `max g^A`.
    pub fn switching_residual(&self, avoid: &BTreeSet<i64>) -> Result<f64, ChainError> {
        let n = self.chain.len();
        let keep: Vec<usize> =
            (0..n).filter(|&i| !avoid.contains(&(self.chain.lo() + i as i64))).collect();
        let ga = killed_inverse(self.chain.rates(), &keep)?;
        let ga_hat = killed_inverse(&self.dual_rates(), &keep)?;
        let pi = &self.reference.measure;
        let scale = ga.max_abs().max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for x in 0..n {
            for y in 0..n {
                let g = ga[(x, y)].clone() / pi[y].clone();
                let g_hat = ga_hat[(y, x)].clone() / pi[x].clone();
                let d = (g - g_hat).abs();
                if !d.is_zero() {
                    worst = worst.max(d.to_f64_lossy() / scale);
                }
            }
        }
        Ok(worst)
    }
}

/// Column `target` of the resolvent killed on `{index >= b}`, zero-extended.
fn killed_column<T: Scalar>(rates: &Matrix<T>, b: usize, target: usize) -> Result<Vec<Wide<T>>, ChainError> {
    let n = rates.rows();
    let mut out = vec![Wide::zero(); n];
    if b <= target {
        return Ok(out);
    }
    let mut sub = Matrix::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            sub[(i, j)] = -rates[(i, j)].clone();
        }
    }
    let mut e = vec![T::zero(); b];
    e[target] = T::one();
    let col = sub.lu()?.solve_refined(&sub, &e, REFINE_STEPS);
    out[..b].clone_from_slice(&col);
    Ok(out)
}
