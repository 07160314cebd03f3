use super::*;
use num::rational::BigRational as Q;
use num::Zero;

fn r(n: i64, d: i64) -> Q {
    Q::ratio(n, d)
}

fn mu(pairs: &[(usize, i64, i64)]) -> ProbMeasure<Q> {
    ProbMeasure::from_pairs(pairs.iter().map(|&(k, n, d)| (k, r(n, d)))).unwrap()
}

fn critical_mu() -> ProbMeasure<Q> {
    mu(&[(0, 1, 2), (2, 1, 2)])
}

fn critical_family() -> MbiParams<Q> {
    MbiParams::example_family(r(1, 1), critical_mu(), r(0, 1)).unwrap()
}

fn supercritical_mbp() -> MbiParams<Q> {
    MbiParams::branching(r(1, 1), mu(&[(0, 1, 4), (2, 3, 4)]), r(0, 1)).unwrap()
}

#[test]
fn phi_examples() {
    let p = MbiParams::new(r(1, 1), critical_mu(), r(0, 1), r(1, 1), mu(&[(1, 1, 1)]), r(0, 1)).unwrap();
    assert_eq!(phi_eval(&p, &r(1, 2)), r(1, 2));
    assert_eq!(phi_eval(&p, &r(1, 1)), r(0, 1));
    let p = MbiParams::new(r(1, 1), critical_mu(), r(0, 1), r(0, 1), mu(&[(2, 1, 1)]), r(3, 7)).unwrap();
    assert_eq!(phi_eval(&p, &r(1, 3)), r(3, 7));
    assert_eq!(phi_eval(&p, &r(1, 1)), r(3, 7));
}

#[test]
fn family_examples() {
    let f = critical_family();
    assert_eq!((f.beta.clone(), f.q.clone()), (r(1, 1), r(0, 1)));
    assert_eq!(f.nu, mu(&[(1, 1, 1)]));
    let g = MbiParams::example_family(r(1, 1), mu(&[(0, 3, 4), (2, 1, 4)]), r(0, 1)).unwrap();
    assert_eq!((g.beta.clone(), g.q.clone()), (r(1, 2), r(1, 2)));
    assert_eq!(g.nu, mu(&[(1, 1, 1)]));
    let bad = MbiParams::example_family(r(1, 1), mu(&[(0, 1, 4), (2, 3, 4)]), r(0, 1));
    assert!(matches!(bad, Err(MbiError::InvalidFamily(_))));
    // φ = -ψ'
    let h = MbiParams::example_family(r(2, 1), mu(&[(0, 1, 2), (2, 1, 4), (4, 1, 4)]), r(1, 1)).unwrap();
    let dpsi = poly::derivative(&h.psi_coeffs());
    for k in 0..=10 {
        let s = r(k, 10);
        assert_eq!(phi_eval(&h, &s), -poly::eval(&dpsi, &s));
    }
}

#[test]
fn table_examples() {
    let t = MbiTables::build(&critical_family(), 20).unwrap();
    assert_eq!(t.delta_w()[0], r(2, 1));
    assert_eq!(t.pi()[0], r(1, 1));
    assert_eq!(t.varpi()[0], r(1, 1));
    for x in 0..=20 {
        assert_eq!(t.pi()[x], Q::from_int(x as i64 + 1));
    }
    let m = MbiTables::build(&supercritical_mbp(), 10).unwrap();
    assert_eq!(m.class(), Classification::Mbp);
    for k in 1..=10 {
        assert!(m.pi()[k].is_zero() && m.varpi()[k].is_zero());
    }
}

#[test]
fn script_h_examples() {
    let t = MbiTables::build(&critical_family(), 30).unwrap();
    for x in 0..10i64 {
        for y in 0..20i64 {
            let expect = if y > x { r(2 * (y - x), x + 1) } else { r(0, 1) };
            assert_eq!(t.script_h(x, y).unwrap(), expect, "x={x} y={y}");
        }
    }
    let m = MbiTables::build(&supercritical_mbp(), 30).unwrap();
    for x in 0..8i64 {
        for y in x + 1..16i64 {
            assert_eq!(m.script_h(x, y).unwrap(), m.w(y - x - 1).unwrap() / Q::from_int(y));
        }
    }
}

#[test]
fn mbp_resolvent_and_hitting() {
    let m = MbiTables::build(&supercritical_mbp(), 10).unwrap();
    assert_eq!(m.s0, r(1, 3));
    assert_eq!(m.resolvent_g(0, 1).unwrap(), r(0, 1));
    assert_eq!(m.resolvent_g(1, 1).unwrap(), r(4, 3));
    assert_eq!(m.resolvent_g(1, 0), Err(MbiError::MbpAtZero));
    assert_eq!(m.hit_prob(2, 0).unwrap(), r(1, 9));
    assert_eq!(m.hit_prob(3, 3).unwrap(), r(1, 1));
}

#[test]
fn exit_examples() {
    let t = MbiTables::build(&critical_family(), 10).unwrap();
    assert_eq!(t.two_sided_exit(1, 0, 4).unwrap(), r(3, 8));
    assert_eq!(t.two_sided_exit(2, 2, 4).unwrap(), r(1, 1));
    assert_eq!(t.exit_interval_prob(2, 0, 5).unwrap(), r(1, 1));
    assert_eq!(t.passage_up_prob(1, 6).unwrap(), r(1, 1));
    let c = MbiTables::build(&MbiParams::branching(r(1, 1), critical_mu(), r(0, 1)).unwrap(), 10).unwrap();
    assert_eq!(c.passage_up_prob(1, 3).unwrap(), r(1, 3));
    let k = MbiParams::new(r(1, 1), critical_mu(), r(1, 5), r(1, 1), mu(&[(1, 1, 2), (3, 1, 2)]), r(1, 4)).unwrap();
    let k = MbiTables::build(&k, 10).unwrap();
    assert_eq!(k.exit_interval_prob(3, 3, 7).unwrap(), r(1, 1));
    assert!(k.two_sided_exit(5, 6, 7).is_err());
}

#[test]
fn lumped_window_agrees_exactly() {
    let p = MbiParams::new(r(3, 2), mu(&[(0, 1, 2), (2, 1, 4), (3, 1, 4)]), r(1, 5), r(1, 1), mu(&[(1, 1, 2), (3, 1, 2)]), r(1, 4))
        .unwrap();
    let t = MbiTables::build(&p, 20).unwrap();
    let (a, b) = (2, 9);
    let chain = t.lumped_window(a, b).unwrap();
    for x in a..b {
        assert_eq!(t.two_sided_exit(x, a, b).unwrap(), crate::oracle::two_sided_exit(&chain, x, a, b).unwrap());
        assert_eq!(t.exit_interval_prob(x, a, b).unwrap(), crate::oracle::exit_interval_prob(&chain, x, a, b).unwrap());
    }
}

#[test]
fn integral_examples() {
    let f = MbiTables::build(&critical_family().convert(Scalar::to_f64_lossy), 10).unwrap();
    assert_eq!(f.class(), Classification::Transient);
    assert!(f.classification.heuristic);
    assert!((f.integral_i(0).unwrap().value - 2.0).abs() < 1e-12);
    for x in 1..6 {
        assert!((f.integral_i(x).unwrap().value - 2.0 / (x as f64 + 1.0)).abs() < 1e-12);
    }
    let g = MbiParams::new(1.0, ProbMeasure::from_pairs([(0, 0.75), (2, 0.25)]).unwrap(), 0.0, 1.0, ProbMeasure::point_mass(1), 0.5)
        .unwrap();
    let g = MbiTables::build(&g, 10).unwrap();
    for x in [0, 3] {
        let quad = g.integral_i(x).unwrap().value;
        let series = g.integral_i_series(x, 1e-14).unwrap().value;
        assert!((quad - series).abs() < 1e-8 * quad);
    }
}

#[test]
fn mbp_has_no_integral() {
    let m = MbiTables::build(&supercritical_mbp(), 5).unwrap();
    assert!(matches!(m.integral_i(0), Err(MbiError::NotApplicable(_))));
}

#[test]
fn recurrent_classification_and_override() {
    // subcritical branching with immigration and no killing is recurrent
    let p = MbiParams::new(1.0, ProbMeasure::from_pairs([(0, 0.75), (2, 0.25)]).unwrap(), 0.0, 1.0, ProbMeasure::point_mass(1), 0.0)
        .unwrap();
    let t = MbiTables::build(&p, 10).unwrap();
    assert_eq!(t.class(), Classification::Recurrent);
    assert!(t.classification.heuristic);
    assert_eq!(t.hit_prob(5, 0).unwrap(), 1.0);
    assert_eq!(t.resolvent_g(0, 0), Err(MbiError::RecurrentChain));
    let forced = t.clone().with_classification(Classification::Transient).unwrap();
    assert!(forced.classification.overridden);
    assert!(matches!(forced.integral_i(0), Err(MbiError::NonConvergent(_))));
    let killed = MbiParams { q: 0.5, ..p };
    let killed = MbiTables::build(&killed, 10).unwrap();
    assert!(killed.with_classification(Classification::Recurrent).is_err());
}

#[test]
fn gf_examples() {
    let f = MbiTables::build(&critical_family().convert(Scalar::to_f64_lossy), 10).unwrap();
    for &(x, s) in &[(0, 0.3), (3, 0.5)] {
        let v = f.transient_gf(x, 0.0, s).unwrap();
        assert!((v - s.powi(x as i32)).abs() < 1e-13);
    }
    let r = f.stationarity_residual(&[(0.5, 0.1), (1.0, 0.3), (2.0, 0.5)]).unwrap();
    assert!(r < 1e-8, "{r}");
    let m = MbiTables::build(&supercritical_mbp().convert(Scalar::to_f64_lossy), 10).unwrap();
    assert!(m.stationarity_residual(&[(1.0, 0.1)]).is_err());
    assert!(f.transient_gf(0, 1.0, 1.0).is_err());
}

#[test]
fn sequence_residuals_exact() {
    let p = MbiParams::new(r(3, 2), mu(&[(0, 1, 2), (2, 1, 4), (3, 1, 4)]), r(1, 5), r(1, 1), mu(&[(1, 1, 2), (3, 1, 2)]), r(1, 4))
        .unwrap();
    let t = MbiTables::build(&p, 40).unwrap();
    let res = t.sequence_residuals(40).unwrap();
    assert_eq!(res.max(), 0.0);
    assert!(res.pi_dominates);
}

#[test]
fn json_round_trip() {
    let p = critical_family();
    assert_eq!(MbiParams::<Q>::from_json(&p.to_json()).unwrap(), p);
    let v: Value = serde_json::from_str(r#"{"alpha": 1, "mu": {"0": 0.5, "2": 0.5}}"#).unwrap();
    let m = MbiParams::<f64>::from_json(&v).unwrap();
    assert!(m.is_mbp());
    let v: Value = serde_json::from_str(r#"{"alpha": 1, "mu": {"0": 0.5, "2": 0.5}, "beta": 1}"#).unwrap();
    assert!(MbiParams::<f64>::from_json(&v).is_err());
}
