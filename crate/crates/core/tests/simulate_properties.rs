//! Reproducibility and capping behaviour of the path simulator.

use num::rational::BigRational as Q;
use proptest::prelude::*;
use skipfree::cpp::{CppParams, CppTables};
use skipfree::measures::ProbMeasure;
use skipfree::scalar::Scalar;
use skipfree::simulate::{self, Event, Observable, Request, SimConfig, SimModel};

/// Critical walk with steps -1 and +1 at rate 1 each.
fn critical() -> CppParams<f64> {
    let mu = ProbMeasure::new([(0, 0.5), (2, 0.5)].into()).unwrap();
    CppParams::new(1.0, mu, 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn fixed_seed_is_reproducible(seed in any::<u64>(), workers in 1usize..4) {
        let model = SimModel::from_cpp(&critical());
        let req = Request { model: &model, x0: 2, event: Event::TwoSided { a: 0, b: 5 }, observable: Observable::Success, weighting: None };
        let cfg = SimConfig { seed, n_paths: 2_000, workers, ..SimConfig::default() };
        let first = simulate::estimate(&req, &cfg).unwrap();
        prop_assert_eq!(first, simulate::estimate(&req, &cfg).unwrap());
        prop_assert!(first.within(0.6, 4.0), "{first:?}");
    }
}

#[test]
fn capped_paths_bracket_the_truth() {
    // The critical walk hits every level below with probability one, but a
    // fraction of a percent of paths outlive the jump budget.
    let exact = CppTables::build(&critical().convert(|v| Q::from_f64_exact(*v)), 8).unwrap();
    assert_eq!(exact.hit_prob(1, 0).unwrap(), Q::from_int(1));
    let model = SimModel::from_cpp(&critical());
    let req = Request {
        model: &model,
        x0: 1,
        event: Event::Hit { y: 0, give_up_above: None, give_up_below: None },
        observable: Observable::Success,
        weighting: None,
    };
    let cfg = SimConfig { seed: 8, n_paths: 20_000, max_jumps: 20_000, ..SimConfig::default() };
    let est = simulate::estimate(&req, &cfg).unwrap();
    assert!(est.n_capped > 0);
    let (lo, hi) = est.bounds.unwrap();
    assert!(lo < 1.0 && hi == 1.0, "{est:?}");
    assert!(est.within(1.0, 3.0));
    assert!(!est.within(lo - 0.01, 3.0));
}
