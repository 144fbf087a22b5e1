//! Invariants across modules, checked on randomized inputs and on every
//! built-in scenario.

use horizon_pmp::adjoint::{adjoint_free_endpoint, adjoint_residual, nontriviality_check, AdjointSolution};
use horizon_pmp::horizon_transform::{round_trip_error, to_finite, HorizonMap};
use horizon_pmp::linear_ode::{
    fundamental_matrices, fundamental_matrices_finite, integrate_ivp, jacobian_along, picard_solve, LinearSystem, OdeOptions,
    PicardOptions, Tau,
};
use horizon_pmp::pmp_verify::active_set;
use horizon_pmp::scenarios::{build_scenario, run, Scenario, ScenarioConfig, SCENARIO_NAMES};
use horizon_pmp::sufficiency::{arrow_verdict, concavity_check, delta_t_check, ArrowInputs};
use horizon_pmp::{clim_norms, make_grid, ConvergentFunction, Error, Matrix, TimeMap, Vector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scenario(name: &str) -> Scenario {
    let cfg = ScenarioConfig::embedded();
    build_scenario(name, &cfg.settings(name).unwrap()).unwrap()
}

fn with_adjoint() -> impl Iterator<Item = Scenario> {
    SCENARIO_NAMES.iter().map(|n| scenario(n)).filter(|s| s.adjoint.is_some())
}

fn arb_convergent() -> impl Strategy<Value = ConvergentFunction> {
    (1usize..4, 8usize..40, any::<u64>(), prop_oneof![Just(TimeMap::Log), Just(TimeMap::Rational)]).prop_map(|(dim, n, seed, map)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = make_grid(map, n).unwrap();
        let limit = Vector::from_fn(dim, |_, _| rng.random_range(-3.0..3.0));
        let amp = Vector::from_fn(dim, |_, _| rng.random_range(-3.0..3.0));
        let rate = rng.random_range(0.1..3.0);
        let freq = rng.random_range(0.0..4.0);
        let lim = limit.clone();
        ConvergentFunction::from_fn(&grid, move |t| &lim + &amp * ((-rate * t).exp() * (freq * t).cos()), limit)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn norm_equivalence(x in arb_convergent()) {
        let (sup, split) = clim_norms(&x).unwrap();
        prop_assert!(sup <= split * (1.0 + 1e-14), "sup {} split {}", sup, split);
        prop_assert!(split <= 3.0 * sup * (1.0 + 1e-14), "sup {} split {}", sup, split);
    }
}

#[test]
fn norm_ratio_three_is_attained() {
    let grid = make_grid(TimeMap::Log, 64).unwrap();
    let x = ConvergentFunction::from_fn(&grid, |t| Vector::from_element(1, (-t).exp() - 0.5), Vector::from_element(1, -0.5));
    let (sup, split) = clim_norms(&x).unwrap();
    assert_eq!(sup, 0.5);
    assert_eq!(split, 1.5);
    assert_eq!(split / sup, 3.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn grid_is_monotone_and_covers(n in 8usize..600, rational in any::<bool>(), frac in 0.0f64..1.0) {
        let map = if rational { TimeMap::Rational } else { TimeMap::Log };
        let g = make_grid(map, n).unwrap();
        prop_assert_eq!(g.nodes()[0], 0.0);
        prop_assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        let t = frac * g.last();
        let back = map.to_time(map.to_unit(t));
        prop_assert!((back - t).abs() <= 1e-12 * t.max(1.0), "{} -> {}", t, back);
    }
}

#[test]
fn scenario_jacobians_match_differences() {
    for (k, name) in SCENARIO_NAMES.iter().enumerate() {
        let sc = scenario(name);
        let rep = sc.problem.jacobian_check(k as u64, 100);
        assert!(rep.passes(1e-5), "{name}: worst {}", rep.worst());
    }
}

/// `A(t) = M e^{-a t}`, `a(t) = b e^{-c t}`, `z` constant.
fn random_system(rng: &mut ChaCha8Rng) -> (LinearSystem, Vector) {
    let n = rng.random_range(1..4);
    let m = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let b = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let (a, c) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
    let z = Vector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    (LinearSystem::new(n, move |t| &m * (-a * t).exp(), move |t| &b * (-c * t).exp()), z)
}

#[test]
fn picard_matches_adaptive_integrator() {
    let grid = make_grid(TimeMap::Log, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let (sys, z0) = random_system(&mut rng);
        let z = ConvergentFunction::constant(&grid, z0.clone());
        let sol = picard_solve(&sys, &z, Tau::At(0.0), &grid, PicardOptions::default()).unwrap();
        let mut t_out = grid.nodes().to_vec();
        t_out.push(80.0);
        let xs = integrate_ivp(&|t, x: &Vector| sys.rhs(t, x), &z0, &t_out, &[], &OdeOptions::tight()).unwrap();
        let mut worst = (sol.x.limit() - xs.last().unwrap()).amax();
        for (v, x) in sol.x.values().iter().zip(&xs) {
            worst = worst.max((v - x).amax());
        }
        assert!(worst < 1e-7, "trial {trial}: {worst:e}");
        for r in &sol.records {
            assert!(r.change <= r.bound * (1.0 + 1e-9) + 1e-13, "trial {trial}: {r:?}");
        }
    }
}

#[test]
fn picard_rejects_growing_coefficients() {
    let grid = make_grid(TimeMap::Log, 16).unwrap();
    let sys = LinearSystem::new(1, |_| Matrix::from_element(1, 1, 0.5), |_| Vector::zeros(1));
    let z = ConvergentFunction::constant(&grid, Vector::from_element(1, 1.0));
    assert!(matches!(picard_solve(&sys, &z, Tau::At(0.0), &grid, PicardOptions::default()), Err(Error::NonSummable(_))));
}

#[test]
fn fundamental_duality_on_every_scenario() {
    for name in SCENARIO_NAMES {
        let sc = scenario(name);
        let fm = match fundamental_matrices(&sc.problem, &sc.process, &sc.grid) {
            Err(Error::NonSummable(_)) => fundamental_matrices_finite(&sc.problem, &sc.process, &sc.grid),
            other => other,
        }
        .unwrap();
        assert!(fm.duality_residual() < 1e-8, "{name}: {:e}", fm.duality_residual());
    }
}

#[test]
fn representation_satisfies_the_adjoint_equation() {
    for name in ["lq_regulator", "resource_a"] {
        let sc = scenario(name);
        let adj = adjoint_free_endpoint(&sc.problem, &sc.process, &sc.grid).unwrap();
        let rep = adjoint_residual(&adj, &sc.problem, &sc.process, &sc.grid, &sc.settings.tol).unwrap();
        assert!(rep.ode.residual < 1e-6, "{name}: {:e}", rep.ode.residual);
    }
}

/// `Z(t) (Z(T)^{-1} p(T) + int_T^t Z^{-1} omega f_x ds)` by integrating `Z` and
/// the bracket together from `T`.
fn shifted(sc: &Scenario, adj: &AdjointSolution, z_big: &Matrix, t_big: f64, t: f64) -> Vector {
    let n = sc.problem.state_dim;
    let jac = jacobian_along(&sc.problem, &sc.process);
    let (problem, process) = (&sc.problem, &sc.process);
    let rhs = |s: f64, y: &Vector| {
        let z = Matrix::from_column_slice(n, n, &y.as_slice()[..n * n]);
        let dz = -jac(s).transpose() * &z;
        let (x, u) = (process.state(s), process.control(s));
        let dc = z.clone().try_inverse().unwrap() * ((problem.f_x)(s, &x, &u) * (problem.omega)(s) * adj.lambda0);
        let mut out = Vector::zeros(n * n + n);
        out.as_mut_slice()[..n * n].copy_from_slice(dz.as_slice());
        out.as_mut_slice()[n * n..].copy_from_slice(dc.as_slice());
        out
    };
    let mut y0 = Vector::zeros(n * n + n);
    y0.as_mut_slice()[..n * n].copy_from_slice(z_big.as_slice());
    let c0 = z_big.clone().try_inverse().unwrap() * adj.eval(t_big);
    y0.as_mut_slice()[n * n..].copy_from_slice(c0.as_slice());
    let breaks = process.breakpoints();
    let y = integrate_ivp(&rhs, &y0, &[t_big, t], &breaks, &OdeOptions::tight()).unwrap().pop().unwrap();
    Matrix::from_column_slice(n, n, &y.as_slice()[..n * n]) * Vector::from_column_slice(&y.as_slice()[n * n..])
}

#[test]
fn shift_identity_at_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for name in ["lq_regulator", "ramsey_budget"] {
        let sc = scenario(name);
        let adj = sc.adjoint.as_ref().unwrap();
        let fm = fundamental_matrices_finite(&sc.problem, &sc.process, &sc.grid).unwrap();
        let nodes: Vec<usize> = (0..sc.grid.len()).filter(|&k| sc.grid.nodes()[k] <= 8.0).collect();
        for _ in 0..10 {
            let (kt, kb) = (nodes[rng.random_range(0..nodes.len())], nodes[rng.random_range(0..nodes.len())]);
            let (t, t_big) = (sc.grid.nodes()[kt], sc.grid.nodes()[kb]);
            let p = shifted(&sc, adj, &fm.z[kb], t_big, t);
            let err = (p - adj.eval(t)).amax();
            assert!(err < 1e-7, "{name}: T = {t_big}, t = {t}: {err:e}");
        }
    }
}

#[test]
fn adjoints_have_bounded_variation() {
    for sc in with_adjoint() {
        let adj = sc.adjoint.as_ref().unwrap();
        let total: f64 = adj.jumps.iter().map(|j| j.mass.abs() + j.jump.iter().map(|v| v.abs()).sum::<f64>()).sum();
        assert!(total.is_finite(), "{}", sc.name);
        for m in &adj.measures {
            assert!(m.total_mass().is_finite() && m.atom_mass().is_finite(), "{}", sc.name);
        }
        assert!(nontriviality_check(adj).nontrivial, "{}", sc.name);
    }
}

#[test]
fn active_sets_shrink_with_tolerance() {
    for name in ["ramsey_budget", "resource_a", "resource_c", "terminal_constraint_embedded"] {
        let sc = scenario(name);
        for j in 0..sc.problem.constraints.len() {
            let mut prev = active_set(&sc.problem, &sc.process, j, 1e-1).unwrap();
            for tol in [1e-2, 1e-4, 1e-6, 1e-9, 0.0] {
                let next = active_set(&sc.problem, &sc.process, j, tol).unwrap();
                assert!(next.times.iter().all(|&t| prev.contains(t)), "{name} constraint {j} at {tol}");
                assert!(!next.infinity || prev.infinity);
                prev = next;
            }
        }
    }
}

#[test]
fn quadratic_hamiltonian_is_concave_everywhere() {
    let sc = scenario("lq_regulator");
    let probe = concavity_check(&sc.problem, sc.adjoint.as_ref().unwrap(), &sc.process, 0.5, 10_000, 3);
    assert_eq!(probe.samples, 10_000);
    assert_eq!(probe.violations, 0, "worst {:e}", probe.worst_violation);
}

#[test]
fn lq_delta_margins_increase() {
    let sc = scenario("lq_regulator");
    let alt = &sc.alternatives[0];
    let t_list: Vec<f64> = (1..=30).map(|k| 0.25 * k as f64).collect();
    let rep = delta_t_check(&sc.problem, &sc.process, &alt.process, sc.adjoint.as_ref().unwrap(), &t_list, sc.problem.gamma, &sc.settings.tol)
        .unwrap();
    assert!(rep.pass);
    for w in rep.rows.windows(2) {
        assert!(w[1].margin >= w[0].margin - 1e-12, "{:?} -> {:?}", w[0], w[1]);
    }
}

#[test]
fn one_failed_subcheck_fails_the_verdict() {
    let sc = scenario("lq_regulator");
    let out = run(&sc, true).unwrap();
    assert_eq!(out.sufficiency(), Some(true));
    let mut probe = out.concavity.clone().unwrap();
    probe.violations = 1;
    let inputs = ArrowInputs {
        adjoint: sc.adjoint.as_ref(),
        necessary: out.necessary.as_ref(),
        admissibility: Some(&out.admissibility),
        concavity: Some(&probe),
        delta_t: Some(&out.delta_t),
    };
    assert!(!arrow_verdict(&inputs, &sc.settings.tol).unwrap().verdict);

    let mut delta = out.delta_t.clone();
    delta[0].pass = false;
    let inputs = ArrowInputs { concavity: out.concavity.as_ref(), delta_t: Some(&delta), ..inputs };
    assert!(!arrow_verdict(&inputs, &sc.settings.tol).unwrap().verdict);

    let inputs = ArrowInputs { delta_t: None, ..inputs };
    assert!(matches!(arrow_verdict(&inputs, &sc.settings.tol), Err(Error::IncompleteVerification(_))));
}

#[test]
fn transformed_integration_round_trips() {
    let eps = 1e-6;
    let ladder = |s_max: f64| -> Vec<f64> { (0..=40).map(|k| (s_max * k as f64 / 40.0).min(s_max)).collect() };
    for name in SCENARIO_NAMES {
        let sc = scenario(name);
        let tp = to_finite(&sc.problem, HorizonMap::default()).unwrap();
        if name == "lq_regulator" {
            // `x' = 2x + u` amplifies rounding by `e^{2t}` in both integrations.
            let err = round_trip_error(&tp, &sc.process, &ladder(0.999)).unwrap();
            assert!(err <= 1e-6, "{name}: {err:e}");
            let t_max = tp.map.to_time(1.0 - eps);
            let err = round_trip_error(&tp, &sc.process, &ladder(1.0 - eps)).unwrap();
            assert!(err <= 1e-12 * (2.0 * t_max).exp(), "{name}: {err:e}");
        } else {
            let err = round_trip_error(&tp, &sc.process, &ladder(1.0 - eps)).unwrap();
            assert!(err <= 1e-6, "{name}: {err:e}");
        }
    }
}
