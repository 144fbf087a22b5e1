//! Investment/consumption model with a cumulative budget `z(inf) <= Z` (or
//! `= Z`), state `(x, z)`, `x' = u x`, `z' = e^{-rho t} x`, utility
//! `(1 - u) x` discounted at `rho`.

use super::{fit_multiplier, solve_switching_time, v1, v2, Alternative, Expected, Provenance, Quantity, Reference, Scenario, ScenarioSettings};
use crate::adjoint::{adjoint_from_multipliers, BorelMeasureExt, Multipliers};
use crate::error::{invalid, Result};
use crate::problem_model::{
    make_grid, ControlPath, ControlProblem, ControlSet, ConvergentFunction, EndpointKind, Matrix, Process, SemiInfiniteGrid,
};

struct Params {
    rho: f64,
    z: f64,
}

fn params(s: &ScenarioSettings) -> Result<Params> {
    let rho = s.param_or("rho", 0.5);
    let z = s.param_or("Z", 3.0);
    if !(rho > 0.0 && rho < 1.0) {
        return invalid(format!("rho must lie in (0, 1), got {rho}"));
    }
    Ok(Params { rho, z })
}

fn base(name: &str, rho: f64, gamma: f64) -> ControlProblem {
    ControlProblem::new(name, 2, 1)
        .cost(|_, x, u| -(1.0 - u[0]) * x[0], |_, _, u| v2(-(1.0 - u[0]), 0.0))
        .dynamics(
            move |t, x, u| v2(u[0] * x[0], (-rho * t).exp() * x[0]),
            move |t, _, u| Matrix::from_row_slice(2, 2, &[u[0], 0.0, (-rho * t).exp(), 0.0]),
        )
        .density(move |t| (-rho * t).exp(), 1.0 / rho)
        .initial_state(v2(1.0, 0.0))
        .controls(ControlSet::interval(0.0, 1.0, 101))
        .radius(gamma)
}

/// Full investment up to `tau`, then full consumption; `z` reaches `Z` at infinity.
fn policy_a(grid: &SemiInfiniteGrid, rho: f64, tau: f64) -> Process {
    let g = 1.0 - rho;
    let z_tau = ((g * tau).exp() - 1.0) / g;
    let z_lim = z_tau + (g * tau).exp() / rho;
    let state = move |t: f64| {
        if t < tau {
            v2(t.exp(), ((g * t).exp() - 1.0) / g)
        } else {
            v2(tau.exp(), z_tau + ((g * tau).exp() - (tau - rho * t).exp()) / rho)
        }
    };
    Process::new(
        ConvergentFunction::from_fn(grid, state, v2(tau.exp(), z_lim)),
        ControlPath::from_fn(grid, move |t| v1(if t < tau { 1.0 } else { 0.0 }), v1(0.0), vec![tau]),
    )
}

/// Constant investment rate `alpha = rho - 1/Z`; `x` diverges, `z -> Z`.
fn policy_b(grid: &SemiInfiniteGrid, rho: f64, z: f64) -> Process {
    let alpha = rho - 1.0 / z;
    let state = move |t: f64| v2((alpha * t).exp(), (((alpha - rho) * t).exp() - 1.0) / (alpha - rho));
    Process::new(
        ConvergentFunction::from_fn(grid, state, v2(f64::INFINITY, 1.0 / (rho - alpha))),
        ControlPath::constant(grid, v1(alpha)),
    )
}

fn tau_reference(rho: f64, z: f64, tau: f64) -> Reference {
    let g = 1.0 - rho;
    Reference::new(
        "switching_time",
        Quantity::Value(tau),
        ((z + 1.0 / g) / (1.0 / rho + 1.0 / g)).ln() / g,
        1e-10,
        Provenance::Derived,
        "ln((Z + 1/(1-rho)) / (1/rho + 1/(1-rho))) / (1-rho)",
    )
}

fn value_reference(rho: f64, z: f64) -> Reference {
    Reference::new(
        "value",
        Quantity::Cost { sign: -1.0 },
        1.0 + (1.0 - rho) * z,
        1e-8,
        Provenance::ClosedForm,
        "1 + (1 - rho) Z",
    )
}

fn common_references(rho: f64, z: f64, tau: f64) -> Vec<Reference> {
    vec![
        tau_reference(rho, z, tau),
        value_reference(rho, z),
        Reference::new("p_at_0", Quantity::AdjointAt { t: 0.0, component: 0 }, 1.0, 1e-7, Provenance::Derived, "p = e^{-rho t}"),
        Reference::new(
            "p_at_2",
            Quantity::AdjointAt { t: 2.0, component: 0 },
            (-2.0 * rho).exp(),
            1e-7,
            Provenance::Derived,
            "p = e^{-rho t}",
        ),
        Reference::new("q_limit", Quantity::AdjointLimit { component: 1 }, rho - 1.0, 1e-7, Provenance::Derived, "q = rho - 1"),
    ]
}

pub(super) fn budget(s: &ScenarioSettings) -> Result<Scenario> {
    let Params { rho, z } = params(s)?;
    let tau = solve_switching_time(rho, z)?;
    let zb = z;
    let problem = base("ramsey_budget", rho, s.gamma)
        .constraint("budget", move |_, x| x[1] - zb, |_, _| v2(0.0, 1.0))
        .with_breakpoints(vec![tau]);
    let grid = make_grid(s.map, s.n)?.with_breakpoints(&[tau]);
    let process = policy_a(&grid, rho, tau);
    let (_, adjoint) = fit_multiplier(&problem, &process, 0.5 * tau, |m| {
        let mult = Multipliers::normal(&problem).with_measures(vec![BorelMeasureExt::zero().with_atom_at_infinity(m)]);
        adjoint_from_multipliers(&problem, &process, &grid, mult)
    })?;
    let mut references = common_references(rho, z, tau);
    references.push(Reference::new(
        "mass_at_infinity",
        Quantity::MuInfinity { constraint: 0 },
        1.0 - rho,
        1e-7,
        Provenance::Derived,
        "mu({inf}) = 1 - rho",
    ));
    let alt = policy_b(&grid, rho, z);
    Ok(Scenario {
        name: "ramsey_budget".into(),
        description: "cumulative budget as a state constraint binding only at infinity".into(),
        problem,
        process,
        grid,
        settings: s.clone(),
        adjoint: Some(adjoint),
        alternatives: vec![Alternative { label: "constant_rate".into(), process: alt, t_list: vec![0.5, 1.0, 2.0, 4.0] }],
        references,
        expected: Expected { pass: true, lim_cond1: Some(true), sufficiency: Some(true) },
        finite: None,
        notes: vec!["mass at infinity fitted from the switching function on the investment arc".into()],
    })
}

pub(super) fn fixed(s: &ScenarioSettings) -> Result<Scenario> {
    let Params { rho, z } = params(s)?;
    let tau = solve_switching_time(rho, z)?;
    let zb = z;
    let problem = base("ramsey_fixed", rho, s.gamma)
        .terminal(move |_, x| v1(x[1] - zb), |_, _| Matrix::from_row_slice(1, 2, &[0.0, 1.0]), EndpointKind::Mixed { free: 1 })
        .with_breakpoints(vec![tau]);
    let grid = make_grid(s.map, s.n)?.with_breakpoints(&[tau]);
    let process = policy_a(&grid, rho, tau);
    let (_, adjoint) = fit_multiplier(&problem, &process, 0.5 * tau, |m| {
        adjoint_from_multipliers(&problem, &process, &grid, Multipliers::normal(&problem).with_l1(v1(m)))
    })?;
    let mut references = common_references(rho, z, tau);
    references.push(Reference::new("l1", Quantity::L1 { component: 0 }, 1.0 - rho, 1e-7, Provenance::Derived, "l1 = 1 - rho"));
    Ok(Scenario {
        name: "ramsey_fixed".into(),
        description: "cumulative budget imposed as a terminal condition at infinity".into(),
        problem,
        process,
        grid,
        settings: s.clone(),
        adjoint: Some(adjoint),
        alternatives: Vec::new(),
        references,
        expected: Expected { pass: true, lim_cond1: Some(true), sufficiency: None },
        finite: None,
        notes: vec![format!("q(inf) = {} does not vanish: the pinned component carries l1", rho - 1.0)],
    })
}

/// The divergent-state optimum: admissible, equal value, outside the class
/// where the necessary conditions are established.
pub(super) fn policy_b_scenario(s: &ScenarioSettings) -> Result<Scenario> {
    let Params { rho, z } = params(s)?;
    if !(z > 1.0 / rho) {
        return invalid(format!("budget Z = {z} must exceed 1/rho"));
    }
    let zb = z;
    let problem = base("ramsey_policy_b", rho, s.gamma).constraint("budget", move |_, x| x[1] - zb, |_, _| v2(0.0, 1.0));
    let grid = make_grid(s.map, s.n)?;
    let process = policy_b(&grid, rho, z);
    Ok(Scenario {
        name: "ramsey_policy_b".into(),
        description: "constant investment rate with an unbounded capital path".into(),
        problem,
        process,
        grid,
        settings: s.clone(),
        adjoint: None,
        alternatives: Vec::new(),
        references: vec![value_reference(rho, z)],
        expected: Expected { pass: true, lim_cond1: Some(false), sufficiency: None },
        finite: None,
        notes: vec!["capital diverges; only admissibility and the value are checked".into()],
    })
}
