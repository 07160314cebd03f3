//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any fails. Pass criterion numbers as arguments to
//! run a subset.

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use num::rational::BigRational as Q;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skipfree::chain::{ChainAnalysis, FiniteSkipFreeChain};
use skipfree::cpp::{self, CppParams, CppTables};
use skipfree::mbi::{Classification, MbiParams, MbiTables};
use skipfree::measures::ProbMeasure;
use skipfree::oracle;
use skipfree::panel::{self, random_chain, random_cpp, random_mbi};
use skipfree::poly;
use skipfree::scalar::Scalar;
use skipfree::simulate::{self, Event, Observable, SimConfig, SimModel};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn r(n: i64, d: i64) -> Q {
    Q::ratio(n, d)
}

fn measure(pairs: &[(usize, i64, i64)]) -> ProbMeasure<Q> {
    ProbMeasure::from_pairs(pairs.iter().map(|&(k, n, d)| (k, r(n, d)))).unwrap()
}

fn to_f64<T: Scalar>(v: &T) -> f64 {
    v.to_f64_lossy()
}

/// The 200-chain panel shared by the first two criteria.
fn chain_panel() -> Vec<FiniteSkipFreeChain<Q>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..200)
        .map(|_| {
            let n = rng.random_range(4..=12);
            random_chain::<Q>(&mut rng, n)
        })
        .collect()
}

fn resolvent_factorization() -> Outcome {
    let start = Instant::now();
    let (mut worst_float, mut worst_exact) = (0.0f64, 0.0f64);
    for chain in chain_panel() {
        worst_exact = worst_exact.max(ChainAnalysis::new(chain.clone()).map_err(|e| e.to_string())?.resolvent_identity_residual());
        let float = ChainAnalysis::new(chain.convert(to_f64)).map_err(|e| e.to_string())?;
        worst_float = worst_float.max(float.resolvent_identity_residual());
    }
    let elapsed = start.elapsed();
    ensure(worst_float < 1e-9, || format!("float residual {worst_float:e}"))?;
    ensure(worst_exact == 0.0, || format!("rational residual {worst_exact:e}"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("200 chains, float max {worst_float:.1e}, rational 0, {elapsed:.1?}"))
}

fn boundary_value_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut count = 0usize;
    let mut track = |closed: f64, oracle: f64| {
        worst = worst.max((closed - oracle).abs());
        count += 1;
    };
    for chain in chain_panel() {
        let c = chain.convert(to_f64);
        let an = ChainAnalysis::new(c.clone()).map_err(|e| e.to_string())?;
        let (lo, hi) = (c.lo(), c.hi());
        let err = |e: skipfree::chain::ChainError| e.to_string();
        for x in lo..=hi {
            for y in lo..=hi {
                track(an.hit_prob(x, y).map_err(err)?, oracle::hit_prob(&c, x, y).map_err(err)?);
            }
            for b in x + 1..=hi + 1 {
                track(an.passage_up_prob(x, b).map_err(err)?, oracle::passage_up(&c, x, b).map_err(err)?);
                for a in lo..=x {
                    track(an.two_sided_exit(x, a, b).map_err(err)?, oracle::two_sided_exit(&c, x, a, b).map_err(err)?);
                    track(an.exit_interval_prob(x, a, b).map_err(err)?, oracle::exit_interval_prob(&c, x, a, b).map_err(err)?);
                }
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(worst < 1e-10, || format!("max deviation {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("{count} comparisons, max deviation {worst:.1e}, {elapsed:.1?}"))
}

fn gamblers_ruin() -> Outcome {
    let prm = CppParams::new(r(1, 1), measure(&[(0, 1, 2), (2, 1, 2)]), r(0, 1)).unwrap();
    let t = CppTables::build(&prm, 64).unwrap();
    let mut n = 0;
    for b in 1..=50i64 {
        for a in 0..b {
            for x in a..b {
                let v = t.two_sided_exit_down(x, a, b).map_err(|e| e.to_string())?;
                ensure(v == r(b - x, b - a), || format!("x={x} a={a} b={b}: {v}"))?;
                n += 1;
            }
        }
    }
    Ok(format!("{n} triples exact"))
}

/// Draws whose `s₀` is at least 0.3, so that tables to index 500 stay
/// within binary64 range.
fn representable_draws<P>(seed: u64, count: usize, mut draw: impl FnMut(&mut ChaCha8Rng) -> P, s0: impl Fn(&P) -> f64) -> Vec<P> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let p = draw(&mut rng);
        if s0(&p) >= 0.3 {
            out.push(p);
        }
    }
    out
}

fn cpp_gf_identity() -> Outcome {
    let draws = representable_draws(
        4,
        50,
        |rng| {
            let killed = rng.random_bool(0.5);
            random_cpp::<Q>(rng, 6, killed)
        },
        |p| cpp::find_s0(&p.convert(to_f64)).0,
    );
    let (mut worst_float, mut worst_exact) = (0.0f64, 0.0f64);
    for p in &draws {
        let f = CppTables::build(&p.convert(to_f64), 500).map_err(|e| e.to_string())?;
        worst_float = worst_float.max(f.gf_residual(500).map_err(|e| e.to_string())?);
        let x = CppTables::build(p, 500).map_err(|e| e.to_string())?;
        worst_exact = worst_exact.max(x.gf_residual(500).map_err(|e| e.to_string())?);
    }
    ensure(worst_float < 1e-10, || format!("float residual {worst_float:e}"))?;
    ensure(worst_exact == 0.0, || format!("rational residual {worst_exact:e}"))?;
    Ok(format!("50 draws to index 500, float max {worst_float:.1e}, rational 0"))
}

fn cpp_supercritical_hitting() -> Outcome {
    let prm = CppParams::new(r(1, 1), measure(&[(0, 1, 4), (2, 3, 4)]), r(0, 1)).unwrap();
    let exact = CppTables::build(&prm, 32).unwrap();
    let float = CppTables::build(&prm.convert(to_f64), 32).unwrap();
    let mut worst = 0.0f64;
    for x in 0..=20i64 {
        ensure(exact.hit_prob(x, 0).unwrap() == r(1, 1).powi(x) / r(3, 1).powi(x), || format!("rational x={x}"))?;
        worst = worst.max((float.hit_prob(x, 0).unwrap() - 3f64.powi(-(x as i32))).abs());
    }
    ensure(worst < 1e-12, || format!("float deviation {worst:e}"))?;
    let model = SimModel::from_cpp(&prm);
    let cfg = SimConfig { seed: 20240605, n_paths: 100_000, ..SimConfig::default() };
    // from 40 levels up, coming back has probability 3^-40
    let event = Event::Hit { y: 0, give_up_above: Some(41), give_up_below: None };
    let req = simulate::Request { model: &model, x0: 1, event, observable: Observable::Success, weighting: None };
    let est = simulate::estimate(&req, &cfg).map_err(|e| e.to_string())?;
    ensure(est.within(1.0 / 3.0, 3.0), || format!("MC {} ± {}", est.p_hat, est.std_err))?;
    Ok(format!("3^-x exact for x<=20, float max {worst:.1e}, MC {:.4} ± {:.4}", est.p_hat, est.std_err))
}

fn mbi_coefficient_identities() -> Outcome {
    let draws = representable_draws(6, 50, |rng| random_mbi::<Q>(rng, 6), |p| cpp::find_s0(&p.cpp().convert(to_f64)).0);
    let (mut worst_float, mut worst_exact, mut dominated) = (0.0f64, 0.0f64, true);
    for p in &draws {
        let f = MbiTables::build(&p.convert(to_f64), 500).map_err(|e| e.to_string())?;
        let rf = f.sequence_residuals(500).map_err(|e| e.to_string())?;
        worst_float = worst_float.max(rf.max());
        let x = MbiTables::build(p, 500).map_err(|e| e.to_string())?;
        let rx = x.sequence_residuals(500).map_err(|e| e.to_string())?;
        worst_exact = worst_exact.max(rx.max());
        dominated &= rx.pi_dominates;
    }
    ensure(worst_float < 1e-10, || format!("float residual {worst_float:e}"))?;
    ensure(worst_exact == 0.0, || format!("rational residual {worst_exact:e}"))?;
    ensure(dominated, || "π(k) < |ϖ(k)| somewhere".into())?;
    Ok(format!("50 draws to horizon 500, float max {worst_float:.1e}, rational 0"))
}

/// Ten members of the family with `φ = -ψ'`.
fn family_members() -> Vec<MbiParams<Q>> {
    let members: [(Q, &[(usize, i64, i64)], Q); 10] = [
        (r(1, 1), &[(0, 1, 2), (2, 1, 2)], r(0, 1)),
        (r(2, 1), &[(0, 1, 2), (2, 1, 4), (4, 1, 4)], r(1, 1)),
        (r(1, 1), &[(0, 3, 4), (2, 1, 4)], r(0, 1)),
        (r(1, 1), &[(0, 2, 3), (3, 1, 3)], r(1, 2)),
        (r(3, 2), &[(0, 1, 2), (2, 1, 4), (3, 1, 4)], r(1, 1)),
        (r(1, 2), &[(0, 3, 5), (2, 1, 5), (5, 1, 5)], r(1, 1)),
        (r(2, 1), &[(0, 4, 5), (4, 1, 5)], r(0, 1)),
        (r(1, 1), &[(0, 1, 3), (2, 2, 3)], r(1, 2)),
        (r(3, 1), &[(0, 5, 8), (2, 1, 4), (6, 1, 8)], r(1, 1)),
        (r(1, 1), &[(0, 1, 2), (3, 1, 6), (4, 1, 3)], r(1, 1)),
    ];
    members.into_iter().map(|(a, mu, p)| MbiParams::example_family(a, measure(mu), p).unwrap()).collect()
}

fn check_family<T: Scalar>(p: &MbiParams<T>, tol: f64) -> Result<f64, String> {
    let t = MbiTables::build(p, 120).map_err(|e| e.to_string())?;
    let psi0 = poly::eval(&p.psi_coeffs(), &T::zero());
    let mut worst = 0.0f64;
    let mut judge = |got: T, want: T, what: String| -> Result<(), String> {
        let ok = got.approx_eq(&want, tol * want.to_f64_lossy().abs().max(1.0));
        worst = worst.max((got.clone() - want.clone()).abs().to_f64_lossy() / want.to_f64_lossy().abs().max(1.0));
        ensure(ok, || format!("{what}: {got} vs {want}"))
    };
    for x in 0..=100i64 {
        judge(t.pi_at(x).unwrap(), psi0.clone() * t.w(x).unwrap(), format!("pi({x})"))?;
        for y in 0..=100i64 {
            let want = if y > x { t.w(y - x - 1).unwrap() / T::from_int(x + 1) } else { T::zero() };
            judge(t.script_h(x, y).unwrap(), want, format!("H[{y}({x})"))?;
        }
    }
    Ok(worst)
}

fn family_closed_forms() -> Outcome {
    let mut worst = 0.0f64;
    for p in family_members() {
        check_family(&p, 0.0)?;
        worst = worst.max(check_family(&p.convert(to_f64), 1e-9)?);
    }
    let critical = MbiTables::build(&family_members()[0], 8).unwrap();
    ensure(critical.s0 == r(1, 1) && critical.s0_exact, || format!("s0 = {}", critical.s0))?;
    Ok(format!("10 members, x,y <= 100, rational exact, float max rel {worst:.1e}"))
}

fn lumped_exit_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = random_mbi::<Q>(&mut rng, 6);
        let a = rng.random_range(0..=10);
        let b = a + rng.random_range(1..=15);
        let exact = MbiTables::build(&p, 64).map_err(|e| e.to_string())?;
        let float = MbiTables::build(&p.convert(to_f64), 64).map_err(|e| e.to_string())?;
        let chain = exact.lumped_window(a, b).map_err(|e| e.to_string())?;
        for x in a..b {
            let o2 = oracle::two_sided_exit(&chain, x, a, b).map_err(|e| e.to_string())?;
            let oe = oracle::exit_interval_prob(&chain, x, a, b).map_err(|e| e.to_string())?;
            let e2 = exact.two_sided_exit(x, a, b).map_err(|e| e.to_string())?;
            let ee = exact.exit_interval_prob(x, a, b).map_err(|e| e.to_string())?;
            ensure(e2 == o2 && ee == oe, || format!("rational mismatch at x={x} a={a} b={b}"))?;
            worst = worst.max((float.two_sided_exit(x, a, b).unwrap() - o2.to_f64_lossy()).abs());
            worst = worst.max((float.exit_interval_prob(x, a, b).unwrap() - oe.to_f64_lossy()).abs());
        }
    }
    ensure(worst < 1e-10, || format!("float deviation {worst:e}"))?;
    Ok(format!("100 instances, rational exact, float max {worst:.1e}"))
}

/// Transient instances whose tables stay in binary64 range up to index 200.
fn transient_mbi(seed: u64, count: usize) -> Vec<MbiTables<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let t = MbiTables::build(&random_mbi::<f64>(&mut rng, 5), 200).unwrap();
        if t.class() == Classification::Transient && t.s0 >= 0.3 {
            out.push(t);
        }
    }
    out
}

fn downward_hitting_limit() -> Outcome {
    let mut worst = 0.0f64;
    for t in transient_mbi(9, 10) {
        for (x, a) in [(1, 0), (3, 1), (6, 2), (10, 7)] {
            let hit = t.hit_prob(x, a).map_err(|e| e.to_string())?;
            let two = t.two_sided_exit(x, a, 200).map_err(|e| e.to_string())?;
            worst = worst.max((hit - two).abs());
        }
    }
    ensure(worst < 1e-6, || format!("deviation {worst:e}"))?;
    Ok(format!("10 instances, max deviation {worst:.1e}"))
}

fn semigroup_identities() -> Outcome {
    let (mut worst_fd, mut worst_stat) = (0.0f64, 0.0f64);
    let h = 1e-4;
    for t in transient_mbi(10, 10) {
        let s0 = t.s0;
        let grid: Vec<(f64, f64)> =
            [0.5, 1.0, 2.0].iter().flat_map(|&tt| [0.2, 0.5, 0.8].map(|f| (tt, f * s0))).collect();
        for &(tt, s) in &grid {
            let d = (t.big_psi(tt + h, s).unwrap() - t.big_psi(tt - h, s).unwrap()) / (2.0 * h);
            let v = t.big_psi(tt, s).unwrap();
            let rhs = cpp::psi_eval(&t.params.cpp(), &v);
            worst_fd = worst_fd.max((d - rhs).abs());
        }
        worst_stat = worst_stat.max(t.stationarity_residual(&grid).map_err(|e| e.to_string())?);
    }
    ensure(worst_fd < 1e-6, || format!("finite difference {worst_fd:e}"))?;
    ensure(worst_stat < 1e-8, || format!("stationarity {worst_stat:e}"))?;
    Ok(format!("10 instances, d/dt max {worst_fd:.1e}, stationarity max {worst_stat:.1e}"))
}

fn mc_regression_panel() -> Outcome {
    let start = Instant::now();
    let cfg = SimConfig { seed: 77, n_paths: 100_000, ..SimConfig::default() };
    let report = panel::mc_panel(2024, 100, &cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let again = panel::mc_panel(2024, 100, &cfg).map_err(|e| e.to_string())?;
    ensure(report == again, || "rerun differs".into())?;
    ensure(report.passed() >= 99, || format!("{} of 100 within 3 standard errors", report.passed()))?;
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!("{} of 100 within 3 standard errors, {elapsed:.1?}, rerun identical", report.passed()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("resolvent factorization", resolvent_factorization),
        ("boundary-value suite", boundary_value_suite),
        ("CPP gambler's ruin", gamblers_ruin),
        ("CPP generating-function identity", cpp_gf_identity),
        ("CPP supercritical hitting", cpp_supercritical_hitting),
        ("MBI coefficient identities", mbi_coefficient_identities),
        ("family closed forms", family_closed_forms),
        ("MBI exits vs lumped systems", lumped_exit_agreement),
        ("downward hitting limit", downward_hitting_limit),
        ("semigroup and stationarity", semigroup_identities),
        ("Monte Carlo regression panel", mc_regression_panel),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
