//! Properties of compound Poisson processes with unit down-steps.

use num::rational::BigRational as Q;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skipfree::cpp::{CppParams, CppTables};
use skipfree::oracle;
use skipfree::panel::random_cpp;
use skipfree::scalar::Scalar;
use skipfree::simulate::{self, Event, Observable, Request, SimConfig, SimModel, Weighting};

fn tables<T: Scalar>(seed: u64, killed: bool) -> (CppTables<T>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p: CppParams<T> = random_cpp(&mut rng, 5, killed);
    (CppTables::build(&p, 40).unwrap(), rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shifts_leave_probabilities_unchanged(seed in any::<u64>(), c in -20i64..20) {
        let (t, mut rng) = tables::<Q>(seed, true);
        let y = rng.random_range(-5..=5);
        let x = y + rng.random_range(0..=6);
        let (a, b) = (y, x + rng.random_range(1..=6));
        prop_assert_eq!(t.hit_prob(x, y).unwrap(), t.hit_prob(x + c, y + c).unwrap());
        prop_assert_eq!(t.two_sided_exit_down(x, a, b).unwrap(), t.two_sided_exit_down(x + c, a + c, b + c).unwrap());
        prop_assert_eq!(t.exit_interval_prob(x, a, b).unwrap(), t.exit_interval_prob(x + c, a + c, b + c).unwrap());
    }

    #[test]
    fn two_sided_exit_decreases_in_start(seed in any::<u64>(), killed in any::<bool>()) {
        let (t, mut rng) = tables::<Q>(seed, killed);
        let a = rng.random_range(-4..=4);
        let b = a + rng.random_range(2..=12);
        let v: Vec<Q> = (a..b).map(|x| t.two_sided_exit_down(x, a, b).unwrap()).collect();
        prop_assert!(v.windows(2).all(|w| w[0] >= w[1]), "{v:?}");
        prop_assert_eq!(&v[0], &Q::from_int(1));
    }

    #[test]
    fn generating_function_identity_is_exact(seed in any::<u64>(), killed in any::<bool>()) {
        let (t, _) = tables::<Q>(seed, killed);
        prop_assert_eq!(t.gf_residual(40).unwrap(), 0.0);
        let (f, _) = tables::<f64>(seed, killed);
        prop_assert!(f.gf_residual(40).unwrap() < 1e-12);
    }

    #[test]
    fn exits_match_the_lumped_system(seed in any::<u64>(), killed in any::<bool>()) {
        let (t, mut rng) = tables::<Q>(seed, killed);
        let a = rng.random_range(-3..=3);
        let b = a + rng.random_range(1..=10);
        let chain = t.lumped_window(a, b).unwrap();
        for x in a..b {
            prop_assert_eq!(t.two_sided_exit_down(x, a, b).unwrap(), oracle::two_sided_exit(&chain, x, a, b).unwrap());
            prop_assert_eq!(t.exit_interval_prob(x, a, b).unwrap(), oracle::exit_interval_prob(&chain, x, a, b).unwrap());
        }
    }

    #[test]
    fn occupation_is_bounded_by_lifetime(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: CppParams<Q> = random_cpp(&mut rng, 5, true);
        let t = CppTables::build(&p, 40).unwrap();
        let life = Q::from_int(1) / p.p.clone();
        for y in -6..=6 {
            let g = t.resolvent_g(0, y).unwrap();
            prop_assert!(g > Q::from_int(0) && g <= life, "G(0,{y}) = {g}");
        }
    }
}

/// Raising the killing rate by `q` gives `E_x[e^{-qT}; event]` for the
/// original process, which the simulator estimates by discounting.
#[test]
fn extra_killing_is_a_laplace_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cfg = SimConfig { seed: 5, n_paths: 40_000, ..SimConfig::default() };
    for _ in 0..4 {
        let base: CppParams<f64> = random_cpp(&mut rng, 4, true);
        let q = rng.random_range(1..=4) as f64 / 4.0;
        let raised = CppParams::new(base.alpha, base.mu.clone(), base.p + q).unwrap();
        let t = CppTables::build(&raised, 32).unwrap();
        let (x, a, b) = (3, 0, 7);
        let target = t.two_sided_exit_down(x, a, b).unwrap();
        let model = SimModel::from_cpp(&base);
        let req = Request {
            model: &model,
            x0: x,
            event: Event::TwoSided { a, b },
            observable: Observable::Success,
            weighting: Some(Weighting { p: 0.0, q }),
        };
        let est = simulate::estimate(&req, &cfg).unwrap();
        assert!(est.within(target, 3.0), "target {target}, estimate {est:?}");
    }
}
