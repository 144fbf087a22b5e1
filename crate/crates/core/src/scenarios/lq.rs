//! Linear-quadratic scenarios: the discounted regulator and two finite-horizon
//! problems embedded on `[0, inf)`.

use std::f64::consts::SQRT_2;

use super::{v1, Alternative, Expected, Provenance, Quantity, Reference, Scenario, ScenarioSettings};
use crate::adjoint::{adjoint_free_endpoint, adjoint_from_multipliers, BorelMeasureExt, Multipliers};
use crate::error::Result;
use crate::horizon_transform::{embed_finite, FiniteProblem};
use crate::problem_model::{make_grid, ControlPath, ControlProblem, ControlSet, ConvergentFunction, Matrix, Process};

/// `min int e^{-2t} (x^2 + u^2)/2`, `x' = 2x + u`, `x(0) = x0`.
pub(super) fn regulator(s: &ScenarioSettings) -> Result<Scenario> {
    let x0 = s.param_or("x0", 2.0);
    let bound = s.param_or("u_bound", 20.0);
    let res = s.param_or("u_resolution", 4001.0) as usize;
    let grid = make_grid(s.map, s.n)?;
    let problem = ControlProblem::new("lq_regulator", 1, 1)
        .cost(|_, x, u| 0.5 * (x[0] * x[0] + u[0] * u[0]), |_, x, _| v1(x[0]))
        .dynamics(|_, x, u| v1(2.0 * x[0] + u[0]), |_, _, _| Matrix::from_element(1, 1, 2.0))
        .density(|t| (-2.0 * t).exp(), 0.5)
        .initial_state(v1(x0))
        .controls(ControlSet::interval(-bound, bound, res))
        .radius(s.gamma);

    let decay = 1.0 - SQRT_2;
    let gain = 1.0 + SQRT_2;
    let xs = move |t: f64| x0 * (decay * t).exp();
    let process = Process::new(
        ConvergentFunction::from_fn(&grid, move |t| v1(xs(t)), v1(0.0)),
        ControlPath::from_fn(&grid, move |t| v1(-gain * xs(t)), v1(0.0), Vec::new()),
    );
    let adjoint = adjoint_free_endpoint(&problem, &process, &grid)?;

    // x = x* + (e^{-t} - e^{-3t})/2 stays within 0.2 of x* and keeps x(0).
    let alt = Process::new(
        ConvergentFunction::from_fn(&grid, move |t| v1(xs(t) + 0.5 * ((-t).exp() - (-3.0 * t).exp())), v1(0.0)),
        ControlPath::from_fn(
            &grid,
            move |t| v1(-gain * xs(t) + 0.5 * (5.0 * (-3.0 * t).exp() - 3.0 * (-t).exp())),
            v1(0.0),
            Vec::new(),
        ),
    );

    let p0 = -gain * x0;
    let u0 = -gain * x0;
    let references = vec![
        Reference::new(
            "cost",
            Quantity::Cost { sign: 1.0 },
            gain * x0 * x0 / 2.0,
            1e-8,
            Provenance::ClosedForm,
            "(1 + sqrt 2) x0^2 / 2",
        ),
        Reference::new(
            "adjoint_at_0",
            Quantity::AdjointAt { t: 0.0, component: 0 },
            p0,
            1e-7,
            Provenance::ClosedForm,
            "p(t) = -(1 + sqrt 2) x0 e^{-(1 + sqrt 2) t}",
        ),
        Reference::new(
            "adjoint_at_1",
            Quantity::AdjointAt { t: 1.0, component: 0 },
            p0 * (-gain).exp(),
            1e-7,
            Provenance::ClosedForm,
            "p(t) = -(1 + sqrt 2) x0 e^{-(1 + sqrt 2) t}",
        ),
        Reference::new(
            "hamiltonian_at_0",
            Quantity::Hamiltonian { t: 0.0 },
            -0.5 * (x0 * x0 + u0 * u0) + p0 * (2.0 * x0 + u0),
            1e-6,
            Provenance::Derived,
            "-(x0^2 + u*(0)^2)/2 + p(0) (2 x0 + u*(0))",
        ),
    ];
    Ok(Scenario {
        name: "lq_regulator".into(),
        description: "discounted scalar regulator with an unstable open loop".into(),
        problem,
        process,
        grid,
        settings: s.clone(),
        adjoint: Some(adjoint),
        alternatives: vec![Alternative { label: "decaying_bump".into(), process: alt, t_list: vec![1.0, 5.0, 20.0] }],
        references,
        expected: Expected { pass: true, lim_cond1: Some(false), sufficiency: Some(true) },
        finite: None,
        notes: Vec::new(),
    })
}

/// `min int_0^{t1} (x^2 + u^2)/2`, `x' = x + u`, `x(0) = x0`, free `x(t1)`.
pub(super) fn finite_embedded(s: &ScenarioSettings) -> Result<Scenario> {
    let x0 = s.param_or("x0", 1.0);
    let t1 = s.param_or("t1", 2.0);
    let bound = s.param_or("u_bound", 20.0);
    let res = s.param_or("u_resolution", 4001.0) as usize;
    let base = ControlProblem::new("finite_lq", 1, 1)
        .cost(|_, x, u| 0.5 * (x[0] * x[0] + u[0] * u[0]), |_, x, _| v1(x[0]))
        .dynamics(|_, x, u| v1(x[0] + u[0]), |_, _, _| Matrix::from_element(1, 1, 1.0))
        .initial_state(v1(x0))
        .controls(ControlSet::interval(-bound, bound, res))
        .radius(s.gamma);
    let finite = FiniteProblem { problem: base, t0: 0.0, t1 };
    let problem = embed_finite(&finite)?;
    let grid = make_grid(s.map, s.n)?.with_breakpoints(&[t1]);

    // With sigma = t1 - t: x = a (cosh k sigma - sinh(k sigma)/k), p = u = -a sinh(k sigma)/k.
    let k = SQRT_2;
    let a = x0 / ((k * t1).cosh() - (k * t1).sinh() / k);
    let xs = move |t: f64| {
        let sg = (t1 - t).max(0.0);
        a * ((k * sg).cosh() - (k * sg).sinh() / k)
    };
    let ps = move |t: f64| if t < t1 { -a * (k * (t1 - t)).sinh() / k } else { 0.0 };
    let process = Process::new(
        ConvergentFunction::from_fn(&grid, move |t| v1(xs(t)), v1(a)),
        ControlPath::from_fn(&grid, move |t| v1(ps(t)), v1(0.0), vec![t1]),
    );
    let adjoint = adjoint_free_endpoint(&problem, &process, &grid)?;
    let references = [0.0, 0.5 * t1]
        .into_iter()
        .map(|t| {
            Reference::new(
                &format!("adjoint_at_{t}"),
                Quantity::AdjointAt { t, component: 0 },
                ps(t),
                1e-7,
                Provenance::Derived,
                "p = -a sinh(sqrt2 (t1 - t)) / sqrt2",
            )
        })
        .collect();
    Ok(Scenario {
        name: "finite_lq_embedded".into(),
        description: "finite-horizon regulator embedded with an indicator density".into(),
        problem,
        process,
        grid,
        settings: s.clone(),
        adjoint: Some(adjoint),
        alternatives: Vec::new(),
        references,
        expected: Expected { pass: true, lim_cond1: None, sufficiency: None },
        finite: Some(finite),
        notes: Vec::new(),
    })
}

/// `min int_0^{t1} (u^2/2 - u)`, `x' = u`, `x(0) = 0`, `x <= bound`: the
/// constraint binds only at `t1` and carries an atom there.
pub(super) fn terminal_embedded(s: &ScenarioSettings) -> Result<Scenario> {
    let t1 = s.param_or("t1", 1.0);
    let bound = s.param_or("bound", 0.5);
    let ub = s.param_or("u_bound", 5.0);
    let res = s.param_or("u_resolution", 1001.0) as usize;
    let base = ControlProblem::new("terminal_constraint", 1, 1)
        .cost(|_, _, u| 0.5 * u[0] * u[0] - u[0], |_, _, _| v1(0.0))
        .dynamics(|_, _, u| u.clone(), |_, _, _| Matrix::zeros(1, 1))
        .initial_state(v1(0.0))
        .constraint("x_le_bound", move |_, x| x[0] - bound, |_, _| v1(1.0))
        .controls(ControlSet::interval(-ub, ub, res))
        .radius(s.gamma);
    let finite = FiniteProblem { problem: base, t0: 0.0, t1 };
    let problem = embed_finite(&finite)?;
    let grid = make_grid(s.map, s.n)?.with_breakpoints(&[t1]);

    let rate = bound / t1;
    let beta = 1.0 - rate;
    let process = Process::new(
        ConvergentFunction::from_fn(&grid, move |t| v1(rate * t.min(t1)), v1(bound)),
        ControlPath::from_fn(&grid, move |t| v1(if t < t1 { rate } else { 0.0 }), v1(0.0), vec![t1]),
    );
    let mult = Multipliers::normal(&problem).with_measures(vec![BorelMeasureExt::zero().with_atom(t1, beta)]);
    let adjoint = adjoint_from_multipliers(&problem, &process, &grid, mult)?;
    let references = vec![
        Reference::new(
            "adjoint_before_t1",
            Quantity::AdjointAt { t: 0.5 * t1, component: 0 },
            -beta,
            1e-9,
            Provenance::Derived,
            "u* = 1 + p = bound / t1",
        ),
        Reference::new(
            "adjoint_after_jump",
            Quantity::AdjointRightAt { t: t1, component: 0 },
            0.0,
            1e-9,
            Provenance::Derived,
            "p(t1+) = p(t1) + beta",
        ),
        Reference::new(
            "cost",
            Quantity::Cost { sign: 1.0 },
            t1 * (0.5 * rate * rate - rate),
            1e-10,
            Provenance::Derived,
            "t1 (u*^2/2 - u*)",
        ),
    ];
    Ok(Scenario {
        name: "terminal_constraint_embedded".into(),
        description: "state constraint active only at the terminal time".into(),
        problem,
        process,
        grid,
        settings: s.clone(),
        adjoint: Some(adjoint),
        alternatives: Vec::new(),
        references,
        expected: Expected { pass: true, lim_cond1: None, sufficiency: None },
        finite: Some(finite),
        notes: Vec::new(),
    })
}
