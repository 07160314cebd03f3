//! Structural properties of finite skip-free chains on random instances.

use std::collections::BTreeSet;

use num::rational::BigRational as Q;
use num::{One, Signed, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skipfree::chain::{ChainAnalysis, FiniteSkipFreeChain};
use skipfree::oracle;
use skipfree::panel::random_chain;
use skipfree::scalar::Scalar;

fn instance<T: Scalar>(seed: u64) -> (ChainAnalysis<T>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=9);
    let chain: FiniteSkipFreeChain<T> = random_chain(&mut rng, n);
    (ChainAnalysis::new(chain).expect("random chains are transient"), rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn switching_identity(seed in any::<u64>(), pick in any::<u64>()) {
        let (an, _) = instance::<Q>(seed);
        let states: Vec<i64> = an.chain().states().collect();
        let avoid: BTreeSet<i64> = states.iter().copied().filter(|s| (pick >> (s - states[0])) & 1 == 1).collect();
        prop_assert_eq!(an.switching_residual(&avoid).unwrap(), 0.0);
        let (af, _) = instance::<f64>(seed);
        prop_assert!(af.switching_residual(&avoid).unwrap() < 1e-9);
    }

    #[test]
    fn downward_hits_multiply(seed in any::<u64>()) {
        let (an, mut rng) = instance::<Q>(seed);
        let (lo, hi) = (an.chain().lo(), an.chain().hi());
        let x = rng.random_range(lo..=hi);
        let a = rng.random_range(lo..=x);
        let y = rng.random_range(lo..=a);
        let through = an.hit_prob(x, a).unwrap() * an.hit_prob(a, y).unwrap();
        prop_assert_eq!(through, an.hit_prob(x, y).unwrap());
    }

    #[test]
    fn exit_splits_into_lower_and_upper(seed in any::<u64>()) {
        let (an, mut rng) = instance::<Q>(seed);
        let (lo, hi) = (an.chain().lo(), an.chain().hi());
        let x = rng.random_range(lo..=hi);
        let a = rng.random_range(lo..=x);
        let b = rng.random_range(x + 1..=hi + 1);
        let upper: Vec<Q> = an.chain().states().map(|z| if z >= b { Q::one() } else { Q::zero() }).collect();
        let total = an.two_sided_exit(x, a, b).unwrap() + an.dynkin_exit(&upper, a, b, x).unwrap();
        prop_assert_eq!(total, an.exit_interval_prob(x, a, b).unwrap());
    }

    #[test]
    fn fundamental_function_is_the_unique_harmonic_one(seed in any::<u64>(), bump in 1i64..5) {
        let (an, mut rng) = instance::<Q>(seed);
        let (lo, hi) = (an.chain().lo(), an.chain().hi());
        let h = an.fundamental_h().to_vec();
        for a in lo..=hi {
            prop_assert_eq!(an.harmonicity_residual(&h, a), 0.0);
        }
        // H is positive and nonincreasing with H(𝔬) = 1
        prop_assert!(h.iter().all(|v| v.is_positive()));
        prop_assert!(h.windows(2).all(|w| w[0] >= w[1]));
        let o = (an.reference().ref_point - lo) as usize;
        prop_assert!(h[o].is_one());
        // any perturbation away from the lowest state breaks harmonicity
        let k = rng.random_range(1..h.len());
        let mut g = h.clone();
        g[k] = g[k].clone() * Q::new(bump.into(), (bump + 1).into());
        prop_assert!(an.harmonicity_residual(&g, lo) > 0.0);
    }

    #[test]
    fn float_and_rational_agree(seed in any::<u64>()) {
        let (aq, mut rng) = instance::<Q>(seed);
        let (af, _) = instance::<f64>(seed);
        prop_assert_eq!(aq.resolvent_identity_residual(), 0.0);
        prop_assert!(af.resolvent_identity_residual() < 1e-9);
        let (lo, hi) = (aq.chain().lo(), aq.chain().hi());
        let x = rng.random_range(lo..=hi);
        let b = rng.random_range(x + 1..=hi + 1);
        let exact = aq.passage_up_prob(x, b).unwrap();
        prop_assert_eq!(&exact, &oracle::passage_up(aq.chain(), x, b).unwrap());
        prop_assert!((af.passage_up_prob(x, b).unwrap() - exact.to_f64_lossy()).abs() < 1e-12);
        for y in lo..=hi {
            prop_assert_eq!(aq.resolvent_closed(x, y).unwrap(), aq.resolvent().raw[((x - lo) as usize, (y - lo) as usize)].clone());
        }
    }
}
