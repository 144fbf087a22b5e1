use super::*;
use crate::scenarios::{build_scenario, ScenarioConfig};
use nalgebra::dvector;
use proptest::prelude::*;

fn unit_k() -> IntervalUnion {
    IntervalUnion::from_f64(&[(0.0, 1.0)]).unwrap()
}

fn constant_one() -> StepFunction {
    StepFunction::new(vec![q_ratio(0, 1), q_ratio(1, 1)], vec![dvector![1.0]]).unwrap()
}

#[test]
fn quarter_measure_on_unit_interval() {
    let fam = build_variation_sets(&unit_k(), &constant_one(), 0.5, 1, &[0.25]).unwrap();
    assert_eq!(fam.partitions.len(), 4);
    let m = fam.set(0, 0.25).unwrap();
    assert_eq!(m.measure(), q_ratio(1, 4));
    let expected: Vec<(Q, Q)> = (0..4).map(|i| (q_ratio(i, 4), q_ratio(4 * i + 1, 16))).collect();
    assert_eq!(m, IntervalUnion::new(expected).unwrap());
}

#[test]
fn zero_weight_gives_empty_set() {
    let fam = build_variation_sets(&unit_k(), &constant_one(), 0.1, 2, &[0.0]).unwrap();
    assert!(fam.set(0, 0.0).unwrap().is_empty());
    assert!(fam.set(1, 0.0).unwrap().is_empty());
}

#[test]
fn sign_step_sup_deviation() {
    let y = StepFunction::new(vec![q_ratio(0, 1), q_ratio(1, 2), q_ratio(1, 1)], vec![dvector![1.0], dvector![-1.0]]).unwrap();
    let fam = build_variation_sets(&unit_k(), &y, 0.1, 1, &[0.1, 0.2]).unwrap();
    let row = fam.sup_bound.iter().find(|r| r.alpha == 0.2 && r.alpha_prime == 0.1).unwrap();
    assert!(row.sup <= 0.01 + 1e-15, "sup = {}", row.sup);
    assert!(fam.sup_bound_holds());
}

#[test]
fn rejects_bad_inputs() {
    assert!(matches!(build_variation_sets(&unit_k(), &constant_one(), 0.1, 2, &[0.6]), Err(Error::InvalidInput(_))));
    let breaks = vec![q_ratio(0, 1), q_ratio(1, 1)];
    assert!(matches!(StepFunction::from_fn(breaks.clone(), |t| dvector![t]), Err(Error::Unsupported(_))));
    assert!(StepFunction::from_fn(breaks, |_| dvector![3.0]).is_ok());
}

#[test]
fn export_lists_every_set() {
    let fam = build_variation_sets(&unit_k(), &constant_one(), 0.5, 2, &[0.1, 0.5]).unwrap();
    let ex = fam.export();
    assert_eq!(ex.len(), 4);
    assert!(ex.iter().all(|s| !s.intervals.is_empty()));
}

fn scenario(name: &str) -> crate::scenarios::Scenario {
    let cfg = ScenarioConfig::embedded();
    build_scenario(name, &cfg.settings(name).unwrap()).unwrap()
}

#[test]
fn needle_control_limits() {
    let sc = scenario("lq_regulator");
    let k = unit_k();
    let u1 = sc.process.u.map(|t, u| if (0.0..1.0).contains(&t) { u.add_scalar(1.0) } else { u });
    let fam = build_variation_sets(&k, &constant_one(), 0.1, 1, &[]).unwrap();
    let u0 = needle_control(&sc.grid, &sc.process.u, &[u1.clone()], &fam, &[0.0]).unwrap();
    let full = needle_control(&sc.grid, &sc.process.u, &[u1.clone()], &fam, &[1.0]).unwrap();
    for t in [0.0, 0.3, 0.77, 0.999, 1.5, 4.0] {
        assert_eq!(u0.eval(t), sc.process.u.eval(t));
        assert_eq!(full.eval(t), u1.eval(t));
    }
    assert!(matches!(needle_control(&sc.grid, &sc.process.u, &[u1], &fam, &[0.1, 0.1]), Err(Error::InvalidInput(_))));
}

/// Ramsey needle data: `K = [0, tau/2]`, direction `u = 0` on `K`, and a step
/// approximation of the stacked dynamics and discounted cost differences.
fn ramsey_family(delta: f64, alpha: f64) -> (crate::scenarios::Scenario, NeedleFamily, ControlPath) {
    let sc = scenario("ramsey_budget");
    let tau = sc.process.u.breakpoints()[0];
    let k = IntervalUnion::from_f64(&[(0.0, 0.5 * tau)]).unwrap();
    let zero = sc.process.u.map(move |t, u| if t < 0.5 * tau { dvector![0.0] } else { u });
    let problem = sc.problem.clone();
    let process = sc.process.clone();
    let z = zero.clone();
    let y = StepFunction::approximate(&k, 8, move |t| {
        let x = process.state(t);
        let (us, ui) = (process.control(t), z.eval(t));
        let dphi = (problem.phi)(t, &x, &ui) - (problem.phi)(t, &x, &us);
        let df = (problem.omega)(t) * ((problem.f)(t, &x, &ui) - (problem.f)(t, &x, &us));
        dvector![dphi[0], dphi[1], df]
    })
    .unwrap();
    let fam = build_variation_sets(&k, &y, delta, 1, &[alpha]).unwrap();
    (sc, fam, zero)
}

#[test]
fn ramsey_patches_have_zero_control() {
    let (sc, fam, zero) = ramsey_family(0.1, 0.1);
    let tau = sc.process.u.breakpoints()[0];
    let m = fam.set(0, 0.1).unwrap();
    assert_eq!(m.measure(), fam.k.measure() * q(0.1).unwrap());
    let u = needle_control(&sc.grid, &sc.process.u, &[zero], &fam, &[0.1]).unwrap();
    for (a, b) in m.to_f64() {
        assert_eq!(u.eval(0.5 * (a + b))[0], 0.0);
    }
    let mut outside = 0;
    for i in 0..200 {
        let t = 0.5 * tau * (i as f64 + 0.5) / 200.0;
        if !m.contains_f64(t) {
            assert_eq!(u.eval(t)[0], 1.0);
            outside += 1;
        }
    }
    assert!(outside > 150);
}

#[test]
fn equal_weights_give_zero_gaps() {
    let (sc, fam, zero) = ramsey_family(0.1, 0.1);
    let rep = variation_gap_check(&sc.problem, &sc.process, &fam, &[zero], &[0.1], &[0.1]).unwrap();
    assert_eq!(rep.phi1_gap, 0.0);
    assert_eq!(rep.phi2_gap, 0.0);
}

#[test]
fn lq_cost_linearization_constant_below_delta() {
    let sc = scenario("lq_regulator");
    let k = unit_k();
    let u1 = sc.process.u.map(|t, u| if (0.0..1.0).contains(&t) { u.add_scalar(1.0) } else { u });
    let problem = sc.problem.clone();
    let process = sc.process.clone();
    let v = u1.clone();
    let y = StepFunction::approximate(&k, 20, move |t| {
        let x = process.state(t);
        let (us, ui) = (process.control(t), v.eval(t));
        let dphi = (problem.phi)(t, &x, &ui) - (problem.phi)(t, &x, &us);
        dvector![dphi[0], (problem.omega)(t) * ((problem.f)(t, &x, &ui) - (problem.f)(t, &x, &us))]
    })
    .unwrap();
    let fam = build_variation_sets(&k, &y, 0.1, 1, &[0.05]).unwrap();
    let rep = variation_gap_check(&sc.problem, &sc.process, &fam, &[u1], &[0.05], &[0.0]).unwrap();
    assert!(rep.phi2_constant < 0.1, "{rep:?}");
    assert!(rep.phi1_constant < 0.1, "{rep:?}");
    assert!(rep.state_deviation > 0.0);
}

#[test]
fn ramsey_constant_shrinks_under_refinement() {
    let run = |delta: f64| {
        let (sc, fam, zero) = ramsey_family(delta, 0.1);
        let r = fam.partitions.len();
        (r, variation_gap_check(&sc.problem, &sc.process, &fam, &[zero], &[0.1], &[0.0]).unwrap())
    };
    let (r1, coarse) = run(0.1);
    let (r2, fine) = run(0.05);
    assert!(r2 >= 2 * r1 - 1, "r {r1} -> {r2}");
    assert!(fine.phi1_constant < coarse.phi1_constant, "{coarse:?} {fine:?}");
    assert!(fine.phi2_constant < coarse.phi2_constant, "{coarse:?} {fine:?}");
}

#[test]
fn large_needle_leaves_the_tube() {
    let sc = scenario("lq_regulator");
    let k = IntervalUnion::from_f64(&[(0.0, 3.0)]).unwrap();
    let u1 = sc.process.u.map(|t, u| if t < 3.0 { u.add_scalar(5.0) } else { u });
    let y = StepFunction::new(vec![q_ratio(0, 1), q_ratio(3, 1)], vec![dvector![5.0]]).unwrap();
    let fam = build_variation_sets(&k, &y, 1.0, 1, &[]).unwrap();
    let err = variation_gap_check(&sc.problem, &sc.process, &fam, &[u1], &[0.5], &[0.0]).unwrap_err();
    assert!(matches!(err, Error::RadiusExceeded { .. }));
}

fn arb_step() -> impl Strategy<Value = (StepFunction, IntervalUnion, f64)> {
    (1usize..6, 1usize..4)
        .prop_flat_map(|(pieces, gaps)| {
            (
                prop::collection::vec(1i64..20, pieces),
                prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 2), pieces),
                prop::collection::vec((0i64..40, 1i64..40), gaps),
                0.05f64..0.5,
            )
        })
        .prop_map(|(widths, vals, holes, delta)| {
            let mut breaks = vec![q_ratio(0, 1)];
            for w in &widths {
                let next = breaks.last().unwrap() + q_ratio(*w, 8);
                breaks.push(next);
            }
            let end = sets::f(breaks.last().unwrap());
            let values = vals.into_iter().map(Vector::from_vec).collect();
            let y = StepFunction::new(breaks, values).unwrap();
            let span = IntervalUnion::from_f64(&[(0.0, end)]).unwrap();
            let cut: Vec<(f64, f64)> = holes.iter().map(|&(a, l)| (end * a as f64 / 40.0, end * (a + l).min(40) as f64 / 40.0)).collect();
            let mut k = span.clone();
            for (a, b) in cut.iter().step_by(2) {
                let left = IntervalUnion::from_f64(&[(0.0, *a)]).unwrap();
                let right = IntervalUnion::from_f64(&[(*b, end)]).unwrap();
                let kept = k.intersect(&left.union(&right));
                if !kept.is_empty() {
                    k = kept;
                }
            }
            (y, k, delta)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn family_invariants((y, k, delta) in arb_step(), a in 0.0f64..0.5, b in 0.0f64..0.5) {
        let alphas = [a.min(b), a.max(b), 0.5];
        let fam = build_variation_sets(&k, &y, delta, 2, &alphas).unwrap();
        for i in 0..2 {
            let sets: Vec<IntervalUnion> = alphas.iter().map(|&x| fam.set(i, x).unwrap()).collect();
            for (s, &x) in sets.iter().zip(&alphas) {
                prop_assert_eq!(s.measure(), k.measure() * q(x).unwrap());
                prop_assert!(s.is_subset(&k));
            }
            prop_assert!(sets[0].is_subset(&sets[1]));
            prop_assert!(sets[1].is_subset(&sets[2]));
        }
        prop_assert!(fam.set(0, 0.5).unwrap().is_disjoint(&fam.set(1, 0.5).unwrap()));
        for row in &fam.sup_bound {
            prop_assert!(row.holds(), "{:?}", row);
        }
    }
}
