//! Extraction of a finite stock `x` with a pollution stock `y`:
//! `x' = -u`, `y' = c f(u)`, `x >= 0`, running cost
//! `e^{-rt} (-f(u) + a y + q u)` with `f(u) = ln(1 + u)`.

use serde::Serialize;

use super::{
    extraction_rate, resource_extraction_threshold, v1, v2, Alternative, ConcaveUtility, Expected, Provenance, Quantity,
    Reference, ResourceCase, ResourceParams, Scenario, ScenarioSettings,
};
use crate::adjoint::{adjoint_free_endpoint, adjoint_from_multipliers, BorelMeasureExt, Multipliers};
use crate::error::{invalid, Result};
use crate::problem_model::{
    make_grid, ControlPath, ControlProblem, ControlSet, ConvergentFunction, Matrix, Process, SemiInfiniteGrid, Vector,
};
use crate::quadrature::{integrate, QuadOptions};

/// `F(t) = int_a^t rate` tabulated on a uniform mesh of `[a, b]` and evaluated
/// by cubic Hermite interpolation with `F' = rate`; constant outside `[a, b]`.
#[derive(Clone, Debug, Serialize)]
pub struct CumulativeTable {
    a: f64,
    b: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl CumulativeTable {
    pub fn new(rate: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> Result<Self> {
        if !(b > a) || intervals == 0 {
            return invalid("cumulative table needs a < b and at least one interval");
        }
        let h = (b - a) / intervals as f64;
        let node = |k: usize| if k == intervals { b } else { a + h * k as f64 };
        let opts = QuadOptions { abs_tol: 1e-15, rel_tol: 1e-13, ..QuadOptions::default() };
        let mut values = Vec::with_capacity(intervals + 1);
        let mut acc = 0.0;
        values.push(0.0);
        for k in 0..intervals {
            acc += integrate(&mut |t| rate(t), node(k), node(k + 1), &[], opts);
            values.push(acc);
        }
        // One-sided slope at `b` so a kink there does not leak into the last cell.
        let slopes = (0..=intervals).map(|k| rate(if k == intervals { b - 1e-12 * b.max(1.0) } else { node(k) })).collect();
        Ok(CumulativeTable { a, b, values, slopes })
    }

    pub fn total(&self) -> f64 {
        *self.values.last().expect("table is never empty")
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= self.a {
            return 0.0;
        }
        if t >= self.b {
            return self.total();
        }
        let m = self.values.len() - 1;
        let h = (self.b - self.a) / m as f64;
        let k = (((t - self.a) / h) as usize).min(m - 1);
        let s = (t - self.a - h * k as f64) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.values[k] + h10 * h * self.slopes[k] + h01 * self.values[k + 1] + h11 * h * self.slopes[k + 1]
    }
}

const TABLE_INTERVALS: usize = 2000;

struct Setup {
    params: ResourceParams,
    c: f64,
    y0: f64,
    u_max: f64,
}

fn setup(s: &ScenarioSettings) -> Result<Setup> {
    let params = ResourceParams {
        r: s.param("r")?,
        a: s.param("a")?,
        c: s.param("c")?,
        q: s.param("q")?,
        x0: s.param_or("x0", 1.0),
    };
    params.validate()?;
    Ok(Setup { params, c: params.c, y0: s.param_or("y0", 0.0), u_max: s.param_or("u_max", 50.0) })
}

fn problem(name: &str, st: &Setup, gamma: f64) -> ControlProblem {
    let ResourceParams { r, a, c, q, x0 } = st.params;
    let y0 = st.y0;
    ControlProblem::new(name, 2, 1)
        .cost(move |_, x, u| -u[0].ln_1p() + a * x[1] + q * u[0], move |_, _, _| v2(0.0, a))
        .dynamics(move |_, _, u| v2(-u[0], c * u[0].ln_1p()), |_, _, _| Matrix::zeros(2, 2))
        .density(move |t| (-r * t).exp(), 1.0 / r)
        .initial_state(v2(x0, y0))
        .constraint("stock_nonnegative", |_, x| -x[0], |_, _| v2(-1.0, 0.0))
        .controls(ControlSet::Box {
            lower: Vector::zeros(1),
            upper: Vector::from_element(1, st.u_max),
            resolution: 2001,
            unbounded: true,
        })
        .radius(gamma)
}

/// Process driven by `u = rate(t)` on `[0, t_end)` and `u = 0` after.
fn tabulated(grid: &SemiInfiniteGrid, st: &Setup, rate: impl Fn(f64) -> f64 + Clone + Send + Sync + 'static, t_end: f64) -> Result<Process> {
    let (x0, y0, c) = (st.params.x0, st.y0, st.c);
    let ext = CumulativeTable::new(rate.clone(), 0.0, t_end, TABLE_INTERVALS)?;
    let r2 = rate.clone();
    let pol = CumulativeTable::new(move |t| r2(t).ln_1p(), 0.0, t_end, TABLE_INTERVALS)?;
    let lim = v2(x0 - ext.total(), y0 + c * pol.total());
    Ok(Process::new(
        ConvergentFunction::from_fn(grid, move |t| v2(x0 - ext.eval(t), y0 + c * pol.eval(t)), lim),
        ControlPath::from_fn(grid, move |t| v1(if t < t_end { rate(t) } else { 0.0 }), v1(0.0), vec![t_end]),
    ))
}

fn base_references(st: &Setup) -> Vec<Reference> {
    let ResourceParams { r, a, .. } = st.params;
    vec![Reference::new(
        "pollution_costate_at_0",
        Quantity::AdjointAt { t: 0.0, component: 1 },
        -a / r,
        1e-8,
        Provenance::Derived,
        "p2 = -(a/r) e^{-rt}",
    )]
}

/// `d <= q`: leave the stock in the ground.
pub(super) fn case_a(s: &ScenarioSettings) -> Result<Scenario> {
    let st = setup(s)?;
    let th = resource_extraction_threshold(&ConcaveUtility::log1p(), &st.params)?;
    if th.case != ResourceCase::A {
        return invalid(format!("resource_a needs d <= q, got d = {} and q = {}", th.d, st.params.q));
    }
    let problem = problem("resource_a", &st, s.gamma);
    let grid = make_grid(s.map, s.n)?.with_breakpoints(&[1.0]);
    let (x0, y0, c) = (st.params.x0, st.y0, st.c);
    let process = Process::new(ConvergentFunction::constant(&grid, v2(x0, y0)), ControlPath::constant(&grid, v1(0.0)));
    let adjoint = adjoint_free_endpoint(&problem, &process, &grid)?;
    let bump = 0.1;
    let alt = Process::new(
        ConvergentFunction::from_fn(
            &grid,
            move |t| v2(x0 - bump * t.min(1.0), y0 + c * bump.ln_1p() * t.min(1.0)),
            v2(x0 - bump, y0 + c * bump.ln_1p()),
        ),
        ControlPath::from_fn(&grid, move |t| v1(if t < 1.0 { bump } else { 0.0 }), v1(0.0), vec![1.0]),
    );
    let mut references = base_references(&st);
    references.push(Reference::new("cost", Quantity::Cost { sign: 1.0 }, st.params.a * y0 / st.params.r, 1e-10, Provenance::Derived, "a y0 / r"));
    Ok(Scenario {
        name: "resource_a".into(),
        description: "extraction never pays: u = 0".into(),
        problem,
        process,
        grid,
        settings: s.clone(),
        adjoint: Some(adjoint),
        alternatives: vec![Alternative { label: "early_extraction".into(), process: alt, t_list: vec![0.5, 1.0, 5.0, 20.0] }],
        references,
        expected: Expected { pass: true, lim_cond1: Some(true), sufficiency: Some(true) },
        finite: None,
        notes: vec![format!("d = {} <= q = {}", th.d, st.params.q)],
    })
}

/// `d > q` with the stock costate forced to zero: constant extraction
/// `d/q - 1` satisfies the necessary conditions pointwise but exhausts the
/// stock in finite time and then violates `x >= 0`.
pub(super) fn case_b(s: &ScenarioSettings) -> Result<Scenario> {
    let st = setup(s)?;
    let ResourceParams { q, x0, .. } = st.params;
    let d = st.params.d();
    if !(d > q) {
        return invalid(format!("resource_b needs d > q, got d = {d} and q = {q}"));
    }
    let problem = problem("resource_b", &st, s.gamma);
    let grid = make_grid(s.map, s.n)?;
    let u0 = d / q - 1.0;
    let (y0, c) = (st.y0, st.c);
    let state = move |t: f64| v2(x0 - u0 * t, y0 + c * u0.ln_1p() * t);
    let last = state(grid.last());
    let process = Process::new(
        ConvergentFunction::from_fn(&grid, state, last),
        ControlPath::constant(&grid, v1(u0)),
    );
    let adjoint = adjoint_free_endpoint(&problem, &process, &grid)?;
    Ok(Scenario {
        name: "resource_b".into(),
        description: "stock costate set to zero: constant extraction overdraws the stock".into(),
        problem,
        process,
        grid,
        settings: s.clone(),
        adjoint: Some(adjoint),
        alternatives: Vec::new(),
        references: base_references(&st),
        expected: Expected { pass: false, lim_cond1: None, sufficiency: None },
        finite: None,
        notes: vec![format!("u = d/q - 1 = {u0}; stock exhausted at t = {}", x0 / u0), "state limit set to the last-node value".into()],
    })
}

/// `d > q`: extraction until `t'` with `int_0^{t'} u = x0`, then a density
/// multiplier on `x >= 0`.
pub(super) fn case_c(s: &ScenarioSettings) -> Result<Scenario> {
    let st = setup(s)?;
    let util = ConcaveUtility::log1p();
    let th = resource_extraction_threshold(&util, &st.params)?;
    let Some(tp) = th.t_prime else {
        return invalid(format!("resource_c needs d > q, got d = {} and q = {}", th.d, st.params.q));
    };
    let ResourceParams { r, q, .. } = st.params;
    let d = th.d;
    let problem = problem("resource_c", &st, s.gamma).with_breakpoints(vec![tp]);
    let grid = make_grid(s.map, s.n)?.with_breakpoints(&[tp]);
    let p = st.params;
    let (u1, u2) = (util.clone(), util.clone());
    let process = tabulated(&grid, &st, move |t| extraction_rate(&u1, &p, tp, t), tp)?;
    let alt = tabulated(&grid, &st, move |t| 0.9 * extraction_rate(&u2, &p, tp, t), tp)?;

    let lam = BorelMeasureExt::zero().with_density(move |t| if t >= tp { r * (d - q) * (-r * t).exp() } else { 0.0 }, vec![tp]);
    let mult = Multipliers::normal(&problem).with_measures(vec![lam]);
    let adjoint = adjoint_from_multipliers(&problem, &process, &grid, mult)?;

    let mut references = base_references(&st);
    references.push(Reference::new(
        "stock_costate_at_0",
        Quantity::AdjointAt { t: 0.0, component: 0 },
        (d - q) * (-r * tp).exp(),
        1e-8,
        Provenance::Derived,
        "p1 = (d - q) e^{-r max(t, t')}",
    ));
    references.push(Reference::new(
        "stock_at_exhaustion",
        Quantity::Value(process.state(tp)[0]),
        0.0,
        1e-9,
        Provenance::Derived,
        "x0 - int_0^{t'} u = 0",
    ));
    Ok(Scenario {
        name: "resource_c".into(),
        description: "extraction until exhaustion at t', then a density multiplier".into(),
        problem,
        process,
        grid,
        settings: s.clone(),
        adjoint: Some(adjoint),
        alternatives: vec![Alternative { label: "scaled_extraction".into(), process: alt, t_list: vec![1.0, 5.0, 20.0, 60.0] }],
        references,
        expected: Expected { pass: true, lim_cond1: Some(true), sufficiency: Some(true) },
        finite: None,
        notes: vec![format!("t' = {tp}")],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_reproduces_polynomial_integral() {
        let tab = CumulativeTable::new(|t| 3.0 * t * t, 0.0, 2.0, 50).unwrap();
        for t in [0.0f64, 0.37, 1.0, 1.99, 2.0, 5.0] {
            let exact = t.min(2.0).powi(3);
            assert!((tab.eval(t) - exact).abs() < 1e-12, "t = {t}");
        }
    }
}
