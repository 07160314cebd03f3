//! Randomized regression panels.
//!
//! Two kinds of panel run here. The identity panel draws random chains and
//! CPP/MBI parameters and compares every closed form with an independent
//! linear solve or coefficient identity. The Monte Carlo panel compares
//! closed forms with simulated estimates. Both are deterministic functions
//! of their seed.

use std::collections::BTreeSet;
use std::fmt::Display;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainAnalysis, ChainError, FiniteSkipFreeChain};
use crate::cpp::{CppError, CppParams, CppTables};
use crate::mbi::{default_horizon, Classification, MbiError, MbiParams, MbiTables};
use crate::measures::ProbMeasure;
use crate::oracle;
use crate::scalar::{Mode, Scalar};
use crate::simulate::{self, give_up_distance, Estimate, Event, Observable, SimConfig, SimError, SimModel, Weighting};

#[derive(Debug, Error)]
pub enum PanelError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Cpp(#[from] CppError),
    #[error(transparent)]
    Mbi(#[from] MbiError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One compared quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub query_kind: String,
    pub args: String,
    pub closed_form: String,
    pub oracle: Option<String>,
    pub mc: Option<Estimate>,
    pub abs_diff: f64,
    pub pass: bool,
}

impl Row {
    /// A closed form with an optional oracle value. Agreement means equality
    /// in rational mode and `|diff| < tol` in float mode.
    pub fn compare<T: Scalar>(kind: &str, args: String, closed: &T, oracle: Option<&T>, tol: f64) -> Row {
        let (abs_diff, pass) = match oracle {
            Some(o) => {
                let d = (closed.clone() - o.clone()).abs().to_f64_lossy();
                let pass = match T::MODE {
                    Mode::Rational => closed == o,
                    Mode::Float => d < tol,
                };
                (d, pass)
            }
            None => (0.0, closed.is_finite_value()),
        };
        Row {
            query_kind: kind.into(),
            args,
            closed_form: closed.to_string(),
            oracle: oracle.map(|o| o.to_string()),
            mc: None,
            abs_diff,
            pass,
        }
    }

    /// A normalized identity residual, which must vanish in rational mode and
    /// stay below `tol` in float mode.
    pub fn residual(kind: &str, args: String, value: f64, mode: Mode, tol: f64) -> Row {
        let pass = match mode {
            Mode::Rational => value == 0.0,
            Mode::Float => value < tol,
        };
        Row {
            query_kind: kind.into(),
            args,
            closed_form: format!("{value:e}"),
            oracle: Some("0".into()),
            mc: None,
            abs_diff: value,
            pass,
        }
    }

    /// Attaches a Monte Carlo estimate of `target`; the row passes only if
    /// the estimate lies within three standard errors.
    pub fn with_mc(mut self, target: f64, est: Estimate) -> Row {
        let ok = est.within(target, 3.0);
        if self.oracle.is_none() {
            self.abs_diff = (est.p_hat - target).abs();
        }
        self.pass &= ok;
        self.mc = Some(est);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<Row>,
}

impl Report {
    pub fn passed(&self) -> usize {
        self.rows.iter().filter(|r| r.pass).count()
    }

    pub fn all_pass(&self) -> bool {
        self.passed() == self.rows.len()
    }

    pub fn pass_rate(&self) -> f64 {
        if self.rows.is_empty() {
            1.0
        } else {
            self.passed() as f64 / self.rows.len() as f64
        }
    }
}

fn args(v: &[(&str, &dyn Display)]) -> String {
    v.iter().map(|(k, x)| format!("{k}={x}")).collect::<Vec<_>>().join(";")
}

fn small_ratio<T: Scalar>(rng: &mut impl Rng, num: std::ops::RangeInclusive<i64>, den: i64) -> T {
    T::ratio(rng.random_range(num), rng.random_range(1..=den))
}

fn random_measure<T: Scalar>(rng: &mut impl Rng, support: &[usize]) -> ProbMeasure<T> {
    let w: Vec<i64> = support.iter().map(|_| rng.random_range(1..=5)).collect();
    let total: i64 = w.iter().sum();
    ProbMeasure::from_pairs(support.iter().zip(&w).map(|(&k, &n)| (k, T::ratio(n, total)))).expect("weights sum to one")
}

/// Random skip-free chain on `n` states with small rational rates: unit
/// steps down everywhere but the bottom, upward jumps with probability 1/2,
/// and killing at every state.
pub fn random_chain<T: Scalar>(rng: &mut impl Rng, n: usize) -> FiniteSkipFreeChain<T> {
    let lo = rng.random_range(-3..=3);
    let mut rows = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        if i > 0 {
            rows[i][i - 1] = small_ratio(rng, 1..=6, 3);
        }
        for j in i + 1..n {
            if j == i + 1 || rng.random_bool(0.5) {
                rows[i][j] = small_ratio(rng, 1..=4, 4);
            }
        }
    }
    let kill = (0..n).map(|_| small_ratio(rng, 1..=3, 6)).collect();
    FiniteSkipFreeChain::from_off_diagonal(lo, rows, kill).expect("valid by construction")
}

/// Offspring law with an atom at zero, none at one, and support within
/// `0..=max_support`.
fn random_offspring<T: Scalar>(rng: &mut impl Rng, max_support: usize) -> ProbMeasure<T> {
    let mut support = vec![0];
    support.extend((2..=max_support).filter(|_| rng.random_bool(0.5)));
    if support.len() == 1 {
        support.push(rng.random_range(2..=max_support));
    }
    random_measure(rng, &support)
}

/// Random compound Poisson parameters with offspring support in `0..=max_support`.
pub fn random_cpp<T: Scalar>(rng: &mut impl Rng, max_support: usize, killed: bool) -> CppParams<T> {
    let alpha = small_ratio(rng, 1..=3, 2);
    let mu = random_offspring(rng, max_support);
    let p = if killed { small_ratio(rng, 1..=2, 4) } else { T::zero() };
    CppParams::new(alpha, mu, p).expect("valid by construction")
}

/// Random MBI parameters with positive constant killing `q`.
pub fn random_mbi<T: Scalar>(rng: &mut impl Rng, max_support: usize) -> MbiParams<T> {
    let alpha = small_ratio(rng, 1..=3, 2);
    let mu = random_offspring(rng, max_support);
    let p = if rng.random_bool(0.5) { small_ratio(rng, 1..=2, 5) } else { T::zero() };
    let beta = small_ratio(rng, 0..=2, 2);
    let nu_support: Vec<usize> = (1..=3).filter(|_| rng.random_bool(0.6)).collect();
    let nu = random_measure(rng, if nu_support.is_empty() { &[1] } else { &nu_support });
    let q = small_ratio(rng, 1..=2, 4);
    MbiParams::new(alpha, mu, p, beta, nu, q).expect("valid by construction")
}

/// Instance counts for the identity panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub chains: usize,
    #[serde(default)]
    pub cpp: usize,
    #[serde(default)]
    pub mbi: usize,
    /// Coefficient horizon for the generating-function identities.
    #[serde(default = "default_identity_horizon")]
    pub horizon: usize,
    /// Number of Monte Carlo checks (0 disables the simulation panel).
    #[serde(default)]
    pub mc_checks: usize,
    #[serde(default)]
    pub sim: Option<SimConfig>,
}

fn default_identity_horizon() -> usize {
    100
}

impl Default for PanelSpec {
    fn default() -> Self {
        PanelSpec { seed: 0, chains: 20, cpp: 10, mbi: 10, horizon: 100, mc_checks: 0, sim: None }
    }
}

fn rng_for(seed: u64, family: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(family);
    rng
}

/// Closed forms against oracles and coefficient identities against zero.
pub fn identity_panel<T: Scalar>(spec: &PanelSpec, tol: f64) -> Result<Report, PanelError> {
    let mut rows = Vec::new();
    let mut rng = rng_for(spec.seed, 1);
    for i in 0..spec.chains {
        let n = rng.random_range(4..=12);
        let chain = random_chain::<T>(&mut rng, n);
        rows.extend(chain_rows(&mut rng, i, chain, tol)?);
    }
    let mut rng = rng_for(spec.seed, 2);
    for i in 0..spec.cpp {
        let killed = rng.random_bool(0.5);
        let prm = random_cpp::<T>(&mut rng, 6, killed);
        let t = CppTables::build(&prm, spec.horizon)?;
        rows.push(Row::residual("cpp_gf_identity", args(&[("instance", &i)]), t.gf_residual(spec.horizon)?, T::MODE, tol));
        let a = rng.random_range(-5..=5);
        let b = a + rng.random_range(2..=15);
        let chain = t.lumped_window(a, b)?;
        for x in a..b {
            let label = || args(&[("instance", &i), ("x", &x), ("a", &a), ("b", &b)]);
            let o = oracle::two_sided_exit(&chain, x, a, b)?;
            rows.push(Row::compare("two_sided", label(), &t.two_sided_exit_down(x, a, b)?, Some(&o), tol));
            let o = oracle::exit_interval_prob(&chain, x, a, b)?;
            rows.push(Row::compare("exit_interval", label(), &t.exit_interval_prob(x, a, b)?, Some(&o), tol));
        }
    }
    let mut rng = rng_for(spec.seed, 3);
    for i in 0..spec.mbi {
        let prm = random_mbi::<T>(&mut rng, 5);
        let t = MbiTables::build(&prm, spec.horizon)?;
        rows.push(Row::residual("mbi_coefficient_identities", args(&[("instance", &i)]), t.sequence_residuals(spec.horizon)?.max(), T::MODE, tol));
        let a = rng.random_range(0..=5);
        let b = a + rng.random_range(2..=15);
        let chain = t.lumped_window(a, b)?;
        for x in a..b {
            let label = || args(&[("instance", &i), ("x", &x), ("a", &a), ("b", &b)]);
            let o = oracle::two_sided_exit(&chain, x, a, b)?;
            rows.push(Row::compare("two_sided", label(), &t.two_sided_exit(x, a, b)?, Some(&o), tol));
            let o = oracle::exit_interval_prob(&chain, x, a, b)?;
            rows.push(Row::compare("exit_interval", label(), &t.exit_interval_prob(x, a, b)?, Some(&o), tol));
        }
    }
    Ok(Report { rows })
}

fn chain_rows<T: Scalar>(rng: &mut impl Rng, i: usize, chain: FiniteSkipFreeChain<T>, tol: f64) -> Result<Vec<Row>, PanelError> {
    let an = ChainAnalysis::new(chain.clone())?;
    let mut rows = vec![Row::residual("resolvent_factorization", args(&[("instance", &i)]), an.resolvent_identity_residual(), T::MODE, tol)];
    let (lo, hi) = (chain.lo(), chain.hi());
    let x = rng.random_range(lo..=hi);
    let y = rng.random_range(lo..=hi);
    let a = rng.random_range(lo..=x);
    let b = rng.random_range(x + 1..=hi + 1);
    let label = args(&[("instance", &i), ("x", &x), ("y", &y)]);
    rows.push(Row::compare("hit", label, &an.hit_prob(x, y)?, Some(&oracle::hit_prob(&chain, x, y)?), tol));
    let label = || args(&[("instance", &i), ("x", &x), ("a", &a), ("b", &b)]);
    rows.push(Row::compare("two_sided", label(), &an.two_sided_exit(x, a, b)?, Some(&oracle::two_sided_exit(&chain, x, a, b)?), tol));
    let o = oracle::exit_interval_prob(&chain, x, a, b)?;
    rows.push(Row::compare("exit_interval", label(), &an.exit_interval_prob(x, a, b)?, Some(&o), tol));
    let label = args(&[("instance", &i), ("x", &x), ("b", &b)]);
    rows.push(Row::compare("passage_up", label, &an.passage_up_prob(x, b)?, Some(&oracle::passage_up(&chain, x, b)?), tol));
    let avoid: BTreeSet<i64> = [a].into();
    rows.push(Row::residual("switching", args(&[("instance", &i), ("avoid", &a)]), an.switching_residual(&avoid)?, T::MODE, tol));
    Ok(rows)
}

/// Kinds of Monte Carlo check, cycled through by [`mc_panel`].
const MC_KINDS: usize = 14;

/// Minimum expected number of successes and of failures for an indicator
/// check; below this the sample standard error is not a usable yardstick.
const MIN_EXPECTED_COUNT: f64 = 10.0;

/// `n_checks` closed forms compared with simulation. Instance `i` uses
/// simulation seed `cfg.seed + i`, so the panel is reproducible bit for bit.
pub fn mc_panel(seed: u64, n_checks: usize, cfg: &SimConfig) -> Result<Report, PanelError> {
    let mut rng = rng_for(seed, 4);
    let mut rows = Vec::with_capacity(n_checks);
    let n = cfg.n_paths as f64;
    for i in 0..n_checks {
        let sim = SimConfig { seed: cfg.seed.wrapping_add(i as u64), ..cfg.clone() };
        let plan = loop {
            let plan = mc_plan(&mut rng, i % MC_KINDS)?;
            if plan.usable(n) {
                break plan;
            }
        };
        let req = simulate::Request {
            model: &plan.model,
            x0: plan.x0,
            event: plan.event,
            observable: plan.observable,
            weighting: plan.weighting,
        };
        let est = simulate::estimate(&req, &sim)?;
        let label = format!("check={i};{}", plan.args);
        rows.push(Row::compare::<f64>(plan.kind, label, &plan.target, None, 0.0).with_mc(plan.target, est));
    }
    Ok(Report { rows })
}

/// A closed-form value together with the simulation that should reproduce it.
struct McPlan {
    kind: &'static str,
    args: String,
    target: f64,
    model: SimModel,
    x0: i64,
    event: Event,
    observable: Observable,
    weighting: Option<Weighting>,
}

impl McPlan {
    fn new(kind: &'static str, args: String, target: f64, model: SimModel, x0: i64, event: Event) -> Self {
        McPlan { kind, args, target, model, x0, event, observable: Observable::Success, weighting: None }
    }

    fn observe(mut self, observable: Observable) -> Self {
        self.observable = observable;
        self
    }

    /// Certain events are judged by exact agreement; otherwise an indicator
    /// needs enough expected successes and failures.
    fn usable(&self, n: f64) -> bool {
        if !matches!(self.observable, Observable::Success) || self.weighting.is_some() {
            return true;
        }
        let t = self.target;
        t == 0.0 || t == 1.0 || (n * t >= MIN_EXPECTED_COUNT && n * (1.0 - t) >= MIN_EXPECTED_COUNT)
    }
}

fn mc_plan(rng: &mut ChaCha8Rng, kind: usize) -> Result<McPlan, PanelError> {
    if kind <= 5 {
        let n = rng.random_range(4..=8);
        let chain = random_chain::<f64>(rng, n);
        let an = ChainAnalysis::new(chain.clone())?;
        let model = SimModel::from_chain(&chain);
        let (lo, hi) = (chain.lo(), chain.hi());
        let x = rng.random_range(lo + 1..=hi - 1);
        let a = rng.random_range(lo..x);
        let b = rng.random_range(x + 1..=hi);
        let xab = || args(&[("x", &x), ("a", &a), ("b", &b)]);
        return Ok(match kind {
            0 => McPlan::new("chain_two_sided", xab(), an.two_sided_exit(x, a, b)?, model, x, Event::TwoSided { a, b }),
            1 => {
                let y = rng.random_range(lo..=hi);
                let event = Event::Hit { y, give_up_above: None, give_up_below: None };
                McPlan::new("chain_hit", args(&[("x", &x), ("y", &y)]), an.hit_prob(x, y)?, model, x, event)
            }
            2 => {
                let event = Event::PassUp { b, give_up_below: None };
                McPlan::new("chain_passage_up", args(&[("x", &x), ("b", &b)]), an.passage_up_prob(x, b)?, model, x, event)
            }
            3 => McPlan::new("chain_exit_interval", xab(), an.exit_interval_prob(x, a, b)?, model, x, Event::Exit { a, b }),
            4 => {
                let y = rng.random_range(lo..b);
                let target = an.reference().measure[(y - lo) as usize] * an.killed_density_one_sided(x, y, b)?;
                let event = Event::PassUp { b, give_up_below: None };
                McPlan::new("chain_occupation", args(&[("x", &x), ("y", &y), ("b", &b)]), target, model, x, event)
                    .observe(Observable::Occupation { y })
            }
            _ => {
                let f: Vec<f64> = chain.states().map(|z| z as f64).collect();
                McPlan::new("chain_exit_position", xab(), an.dynkin_exit(&f, a, b, x)?, model, x, Event::Exit { a, b })
                    .observe(Observable::Terminal(|z| z as f64))
            }
        });
    }
    if kind <= 8 {
        let prm = loop {
            let p = random_cpp::<f64>(rng, 4, kind != 7);
            // the hitting check wants upward drift with a quick give-up
            if kind != 7 || (p.mean() > 1.2 && crate::cpp::find_s0(&p).0 < 0.8) {
                break p;
            }
        };
        let t = CppTables::build(&prm, 64)?;
        let model = SimModel::from_cpp(&prm);
        let x = rng.random_range(1..=6);
        return Ok(match kind {
            6 => {
                let b = x + rng.random_range(1..=8);
                let label = args(&[("x", &x), ("a", &0), ("b", &b)]);
                McPlan::new("cpp_two_sided", label, t.two_sided_exit_down(x, 0, b)?, model, x, Event::TwoSided { a: 0, b })
            }
            7 => {
                let event = Event::Hit { y: 0, give_up_above: Some(x + give_up_distance(t.s0)), give_up_below: None };
                McPlan::new("cpp_hit", args(&[("x", &x), ("y", &0)]), t.hit_prob(x, 0)?, model, x, event)
            }
            _ => {
                let b = x + rng.random_range(1..=6);
                let event = Event::PassUp { b, give_up_below: None };
                McPlan::new("cpp_passage_up", args(&[("x", &x), ("b", &b)]), t.passage_up_prob(x, b)?, model, x, event)
            }
        });
    }
    if kind == 9 {
        // supercritical branching without immigration: extinction probability s₀^x
        let prm = loop {
            let alpha = small_ratio::<f64>(rng, 1..=3, 2);
            let p = MbiParams::branching(alpha, random_offspring(rng, 4), 0.0)?;
            if crate::cpp::find_s0(&p.cpp()).0 < 0.8 {
                break p;
            }
        };
        let t = MbiTables::build(&prm, 16)?;
        let x = rng.random_range(1..=4);
        let event = Event::Hit { y: 0, give_up_above: Some(x + give_up_distance(t.s0)), give_up_below: None };
        return Ok(McPlan::new("mbp_extinction", args(&[("x", &x)]), t.hit_prob(x, 0)?, SimModel::from_mbi(&prm), x, event));
    }
    let prm = loop {
        let p = random_mbi::<f64>(rng, 4);
        // keep paths short: no supercritical growth
        if p.cpp().mean() <= 1.0 {
            break p;
        }
    };
    let a = rng.random_range(0..=3);
    let b = a + rng.random_range(2..=8);
    let x = rng.random_range(a + 1..b);
    let t = MbiTables::build(&prm, default_horizon(b as usize))?;
    let model = SimModel::from_mbi(&prm);
    let xab = || args(&[("x", &x), ("a", &a), ("b", &b)]);
    Ok(match kind {
        10 => McPlan::new("mbi_two_sided", xab(), t.two_sided_exit(x, a, b)?, model, x, Event::TwoSided { a, b }),
        11 => McPlan::new("mbi_exit_interval", xab(), t.exit_interval_prob(x, a, b)?, model, x, Event::Exit { a, b }),
        12 => {
            debug_assert_eq!(t.class(), Classification::Transient);
            let event = Event::Hit { y: a, give_up_above: None, give_up_below: None };
            McPlan::new("mbi_hit", args(&[("x", &x), ("y", &a)]), t.hit_prob(x, a)?, model, x, event)
        }
        _ => {
            // discounting an unkilled path reproduces the killed model
            let unkilled = MbiParams { p: 0.0, q: 0.0, ..prm.clone() };
            let w = Weighting { p: prm.p, q: prm.q };
            let label = args(&[("x", &x), ("a", &a), ("b", &b), ("p", &w.p), ("q", &w.q)]);
            let mut plan = McPlan::new("mbi_weighted_two_sided", label, t.two_sided_exit(x, a, b)?, SimModel::from_mbi(&unkilled), x, Event::TwoSided { a, b });
            plan.weighting = Some(w);
            plan
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::rational::BigRational;

    #[test]
    fn empty_panel_passes() {
        let spec = PanelSpec { chains: 0, cpp: 0, mbi: 0, ..PanelSpec::default() };
        let r = identity_panel::<f64>(&spec, 1e-9).unwrap();
        assert!(r.rows.is_empty() && r.all_pass() && r.pass_rate() == 1.0);
    }

    #[test]
    fn small_rational_panel_is_exact() {
        let spec = PanelSpec { seed: 3, chains: 3, cpp: 2, mbi: 2, horizon: 30, ..PanelSpec::default() };
        let r = identity_panel::<BigRational>(&spec, 0.0).unwrap();
        let bad: Vec<_> = r.rows.iter().filter(|r| !r.pass).collect();
        assert!(bad.is_empty(), "{bad:#?}");
    }

    #[test]
    fn mc_panel_is_reproducible() {
        let cfg = SimConfig { seed: 11, n_paths: 2000, ..SimConfig::default() };
        let a = mc_panel(5, MC_KINDS, &cfg).unwrap();
        let b = mc_panel(5, MC_KINDS, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), MC_KINDS);
    }
}
