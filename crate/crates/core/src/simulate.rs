//! Monte Carlo paths from exponential holding times and jump-chain moves.
//!
//! Every path draws from its own ChaCha8 stream selected by the path index,
//! so estimates depend on `(seed, n_paths)` only. The worker count changes
//! how fast the answer arrives, never the answer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::chain::FiniteSkipFreeChain;
use crate::cpp::CppParams;
use crate::mbi::MbiParams;
use crate::scalar::Scalar;

/// States beyond this magnitude end the path as capped.
pub const STATE_GUARD: i64 = 1 << 62;

/// Capped paths with the event still pending may make up at most this
/// fraction of a run.
pub const MAX_CAPPED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("start state or event out of domain: {0}")]
    Domain(String),
    #[error("{capped} of {n_paths} paths capped with the event pending; the estimate would be biased")]
    ExcessiveCapping { capped: u64, n_paths: u64 },
    #[error("cannot build thread pool: {0}")]
    Pool(String),
}

fn unlimited() -> Option<f64> {
    None
}

/// Run parameters. `max_time = None` means no time horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub n_paths: u64,
    pub max_jumps: u64,
    #[serde(default = "unlimited")]
    pub max_time: Option<f64>,
    #[serde(default = "one_worker")]
    pub workers: usize,
}

fn one_worker() -> usize {
    1
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { seed: 0, n_paths: 100_000, max_jumps: 100_000, max_time: None, workers: 1 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_paths == 0 || self.max_jumps == 0 || self.workers == 0 {
            return Err(SimError::Config("n_paths, max_jumps and workers must be positive".into()));
        }
        if let Some(t) = self.max_time {
            if t.is_nan() || t <= 0.0 {
                return Err(SimError::Config(format!("max_time must be positive, got {t}")));
            }
        }
        Ok(())
    }

    pub fn from_json(v: &Value) -> Result<Self, SimError> {
        let c: SimConfig = serde_json::from_value(v.clone()).map_err(|e| SimError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

/// Transition mechanism of a model in binary64.
#[derive(Debug, Clone)]
pub enum SimModel {
    Chain { lo: i64, rows: Vec<Row> },
    Cpp(Row),
    Mbi { per_capita: Row, immigration: Row, p: f64, q: f64 },
}

/// Rates out of one state (or per capita): unit step down, upward steps,
/// killing.
#[derive(Debug, Clone, Default)]
pub struct Row {
    down: f64,
    ups: Vec<(i64, f64)>,
    kill: f64,
}

impl Row {
    fn total(&self) -> f64 {
        self.down + self.kill + self.ups.iter().map(|u| u.1).sum::<f64>()
    }
}

enum Move {
    To(i64),
    Kill,
}

impl SimModel {
    pub fn from_chain<T: Scalar>(c: &FiniteSkipFreeChain<T>) -> Self {
        let rows = c
            .states()
            .map(|x| {
                let ups = (x + 1..=c.hi())
                    .map(|y| (y - x, c.rate(x, y).to_f64_lossy()))
                    .filter(|u| u.1 > 0.0)
                    .collect();
                let down = if x > c.lo() { c.rate(x, x - 1).to_f64_lossy() } else { 0.0 };
                Row { down, ups, kill: c.kill_at(x).to_f64_lossy() }
            })
            .collect();
        SimModel::Chain { lo: c.lo(), rows }
    }

    pub fn from_cpp<T: Scalar>(prm: &CppParams<T>) -> Self {
        let alpha = prm.alpha.to_f64_lossy();
        SimModel::Cpp(Row {
            down: alpha * prm.mu.mass(0).to_f64_lossy(),
            ups: prm.mu.iter().filter(|(j, _)| *j >= 2).map(|(j, w)| (j as i64 - 1, alpha * w.to_f64_lossy())).collect(),
            kill: prm.p.to_f64_lossy(),
        })
    }

    pub fn from_mbi<T: Scalar>(prm: &MbiParams<T>) -> Self {
        let alpha = prm.alpha.to_f64_lossy();
        let beta = prm.beta.to_f64_lossy();
        let per_capita = Row {
            down: alpha * prm.mu.mass(0).to_f64_lossy(),
            ups: prm.mu.iter().filter(|(j, _)| *j >= 2).map(|(j, w)| (j as i64 - 1, alpha * w.to_f64_lossy())).collect(),
            kill: 0.0,
        };
        let immigration = Row {
            down: 0.0,
            ups: prm.nu.iter().filter(|(k, _)| *k >= 1).map(|(k, w)| (k as i64, beta * w.to_f64_lossy())).collect(),
            kill: 0.0,
        };
        SimModel::Mbi { per_capita, immigration, p: prm.p.to_f64_lossy(), q: prm.q.to_f64_lossy() }
    }

    fn contains(&self, x: i64) -> bool {
        match self {
            SimModel::Chain { lo, rows } => x >= *lo && x < lo + rows.len() as i64,
            SimModel::Cpp(_) => true,
            SimModel::Mbi { .. } => x >= 0,
        }
    }

    fn total_rate(&self, x: i64) -> f64 {
        match self {
            SimModel::Chain { lo, rows } => rows[(x - lo) as usize].total(),
            SimModel::Cpp(row) => row.total(),
            SimModel::Mbi { per_capita, immigration, p, q } => {
                let xf = x as f64;
                xf * (per_capita.total() + p) + immigration.total() + q
            }
        }
    }

    /// Destination for `u` uniform on `[0, total_rate(x))`.
    fn choose(&self, x: i64, mut u: f64) -> Move {
        let pick = |row: &Row, scale: f64, u: &mut f64| -> Option<Move> {
            for &(step, r) in &row.ups {
                let r = r * scale;
                if *u < r {
                    return Some(Move::To(x + step));
                }
                *u -= r;
            }
            let r = row.down * scale;
            if *u < r {
                return Some(Move::To(x - 1));
            }
            *u -= r;
            None
        };
        match self {
            SimModel::Chain { lo, rows } => pick(&rows[(x - lo) as usize], 1.0, &mut u).unwrap_or(Move::Kill),
            SimModel::Cpp(row) => pick(row, 1.0, &mut u).unwrap_or(Move::Kill),
            SimModel::Mbi { per_capita, immigration, .. } => pick(per_capita, x as f64, &mut u)
                .or_else(|| pick(immigration, 1.0, &mut u))
                .unwrap_or(Move::Kill),
        }
    }
}

/// Smallest `d` with `s₀^d < 1e-9`. A process whose downward hitting
/// probabilities decay like `s₀^d` practically never comes back down `d`
/// levels, so paths that far above a target can be given up.
pub fn give_up_distance(s0: f64) -> i64 {
    if !(s0 > 0.0 && s0 < 1.0) {
        return i64::MAX / 4;
    }
    ((1e-9f64).ln() / s0.ln()).ceil() as i64
}

/// When a path stops. Give-up levels end paths whose event can no longer be
/// resolved in reasonable time; they count as failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    /// Success on reaching `a` before `[b, ∞)`.
    TwoSided { a: i64, b: i64 },
    /// Success on reaching `y`.
    Hit { y: i64, give_up_above: Option<i64>, give_up_below: Option<i64> },
    /// Success on reaching `[b, ∞)`.
    PassUp { b: i64, give_up_below: Option<i64> },
    /// Success on leaving `(a, b)` by either side.
    Exit { a: i64, b: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminal {
    HitTargetA,
    CrossedB,
    GaveUp,
    Killed,
    Capped,
    TimedOut,
}

impl Event {
    fn check(&self, x: i64) -> Option<Terminal> {
        let beyond = |lvl: Option<i64>, above: bool| lvl.is_some_and(|l| if above { x >= l } else { x <= l });
        match *self {
            Event::TwoSided { a, b } => {
                if x == a {
                    Some(Terminal::HitTargetA)
                } else if x >= b {
                    Some(Terminal::CrossedB)
                } else {
                    None
                }
            }
            Event::Hit { y, give_up_above, give_up_below } => {
                if x == y {
                    Some(Terminal::HitTargetA)
                } else if beyond(give_up_above, true) || beyond(give_up_below, false) {
                    Some(Terminal::GaveUp)
                } else {
                    None
                }
            }
            Event::PassUp { b, give_up_below } => {
                if x >= b {
                    Some(Terminal::CrossedB)
                } else if beyond(give_up_below, false) {
                    Some(Terminal::GaveUp)
                } else {
                    None
                }
            }
            Event::Exit { a, b } => {
                if x <= a {
                    Some(Terminal::HitTargetA)
                } else if x >= b {
                    Some(Terminal::CrossedB)
                } else {
                    None
                }
            }
        }
    }

    pub fn is_success(&self, t: Terminal) -> bool {
        match self {
            Event::TwoSided { .. } | Event::Hit { .. } => t == Terminal::HitTargetA,
            Event::PassUp { .. } => t == Terminal::CrossedB,
            Event::Exit { .. } => matches!(t, Terminal::HitTargetA | Terminal::CrossedB),
        }
    }

    fn validate(&self, x0: i64) -> Result<(), SimError> {
        let bad = match *self {
            Event::TwoSided { a, b } => !(a < b && a <= x0),
            Event::Exit { a, b } => a >= b,
            _ => false,
        };
        if bad {
            Err(SimError::Domain(format!("{self:?} from x0={x0}")))
        } else {
            Ok(())
        }
    }
}

/// Quantity averaged over paths.
#[derive(Debug, Clone, Copy)]
pub enum Observable {
    /// Indicator of the event.
    Success,
    /// `f(X_T)` on the event, zero otherwise.
    Terminal(fn(i64) -> f64),
    /// Time spent at `y` before the path stops.
    Occupation { y: i64 },
}

/// Feynman–Kac discount `exp(-∫ (q + p X_s) ds)` applied to the observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weighting {
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathOutcome {
    pub terminal: Terminal,
    pub position: i64,
    pub hit_time: f64,
    pub weight: f64,
    pub jumps_used: u64,
    /// (Discounted) time spent at the tracked state, if any.
    pub occupation: f64,
    /// Stopped in a state with no way out.
    pub absorbed: bool,
}

impl PathOutcome {
    /// Capped or timed out while the event could still happen.
    pub fn pending(&self) -> bool {
        match self.terminal {
            Terminal::Capped => true,
            Terminal::TimedOut => !self.absorbed,
            _ => false,
        }
    }
}

/// Simulates one path on stream `index`.
pub fn sample_path(
    model: &SimModel,
    x0: i64,
    event: &Event,
    cfg: &SimConfig,
    index: u64,
    weighting: Option<Weighting>,
    track: Option<i64>,
) -> PathOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let max_time = cfg.max_time.unwrap_or(f64::INFINITY);
    let (mut x, mut t, mut w, mut occ, mut jumps) = (x0, 0.0f64, 1.0f64, 0.0f64, 0u64);
    let out = |terminal, x, t, w, occ, jumps, absorbed| PathOutcome {
        terminal,
        position: x,
        hit_time: t,
        weight: w,
        jumps_used: jumps,
        occupation: occ,
        absorbed,
    };
    loop {
        if let Some(term) = event.check(x) {
            return out(term, x, t, w, occ, jumps, false);
        }
        if x.abs() >= STATE_GUARD || jumps >= cfg.max_jumps {
            return out(Terminal::Capped, x, t, w, occ, jumps, false);
        }
        let total = model.total_rate(x);
        let hold = if total > 0.0 {
            let e: f64 = rng.sample(Exp1);
            e / total
        } else {
            f64::INFINITY
        };
        let stay = hold.min(max_time - t);
        let disc = weighting.map_or(0.0, |wt| wt.q + wt.p * x as f64);
        if track == Some(x) {
            occ += if disc > 0.0 { w * -(-disc * stay).exp_m1() / disc } else { w * stay };
        }
        if disc > 0.0 {
            w *= (-disc * stay).exp();
        }
        if hold > max_time - t {
            return out(Terminal::TimedOut, x, max_time, w, occ, jumps, total <= 0.0);
        }
        t += hold;
        jumps += 1;
        let u = rng.random::<f64>() * total;
        match model.choose(x, u) {
            Move::To(y) => x = y,
            Move::Kill => return out(Terminal::Killed, x, t, w, occ, jumps, false),
        }
    }
}

/// Mean of an observable over `cfg.n_paths` paths with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub p_hat: f64,
    pub std_err: f64,
    pub n_paths: u64,
    pub n_capped: u64,
    /// Pending paths scored as failure and as success; present when
    /// `n_capped > 0`.
    pub bounds: Option<(f64, f64)>,
}

impl Estimate {
    /// `|p_hat - target| <= k std_err`, with a 1e-9 floor so that
    /// deterministic events (zero variance) are judged by exact agreement.
    /// Capped paths are undecided, so with `bounds` present the target only
    /// has to lie in the bounds widened by the same margin.
    pub fn within(&self, target: f64, k: f64) -> bool {
        let margin = k * self.std_err + 1e-9;
        let (lo, hi) = self.bounds.unwrap_or((self.p_hat, self.p_hat));
        target >= lo - margin && target <= hi + margin
    }

    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "p_hat": self.p_hat,
            "std_err": self.std_err,
            "n_capped": self.n_capped,
            "bounds": self.bounds.map(|(lo, hi)| vec![lo, hi]),
        })
    }
}

/// A complete estimation request.
#[derive(Debug, Clone)]
pub struct Request<'a> {
    pub model: &'a SimModel,
    pub x0: i64,
    pub event: Event,
    pub observable: Observable,
    pub weighting: Option<Weighting>,
}

pub fn estimate(req: &Request<'_>, cfg: &SimConfig) -> Result<Estimate, SimError> {
    cfg.validate()?;
    if !req.model.contains(req.x0) {
        return Err(SimError::Domain(format!("start state {} outside the state space", req.x0)));
    }
    req.event.validate(req.x0)?;
    let track = match req.observable {
        Observable::Occupation { y } => Some(y),
        _ => None,
    };
    let run = |i: u64| sample_path(req.model, req.x0, &req.event, cfg, i, req.weighting, track);
    let paths: Vec<PathOutcome> = if cfg.workers == 1 {
        (0..cfg.n_paths).map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| SimError::Pool(e.to_string()))?;
        pool.install(|| (0..cfg.n_paths).into_par_iter().map(run).collect())
    };
    let n = cfg.n_paths as f64;
    let (mut sum, mut sum_sq, mut capped, mut upper_extra) = (0.0, 0.0, 0u64, 0.0);
    for o in &paths {
        let v = match req.observable {
            Observable::Success => {
                if req.event.is_success(o.terminal) {
                    o.weight
                } else {
                    0.0
                }
            }
            Observable::Terminal(f) => {
                if req.event.is_success(o.terminal) {
                    o.weight * f(o.position)
                } else {
                    0.0
                }
            }
            Observable::Occupation { .. } => o.occupation,
        };
        if o.pending() {
            capped += 1;
            upper_extra += match req.observable {
                Observable::Success => o.weight,
                _ => f64::INFINITY,
            };
        }
        sum += v;
        sum_sq += v * v;
    }
    if capped as f64 > MAX_CAPPED_FRACTION * n {
        return Err(SimError::ExcessiveCapping { capped, n_paths: cfg.n_paths });
    }
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok(Estimate {
        p_hat: mean,
        std_err: (var / n).sqrt(),
        n_paths: cfg.n_paths,
        n_capped: capped,
        bounds: (capped > 0).then(|| (mean, mean + upper_extra / n)),
    })
}
