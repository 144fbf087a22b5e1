//! Adjoint paths: the integral representation for the free endpoint, the
//! measure-augmented form with jumps, and residual and transversality checks.
//!
//! With `Y' = phi_x Y`, `Y(0) = I`, every solution of
//! `p' = -phi_x^T p + a(t)`, `a = lambda0 omega f_x + sum_j lambda_j g_jx`, with
//! jumps `J_n` at `s_n` reads
//!
//! `p(t) = Y(t)^{-T} [K + C(t) + sum_{s_n < t} Y(s_n)^T J_n]`, `C(t) = int_0^t Y^T a`.
//!
//! `K` is fixed by the limit `p(inf)`. When `p(inf) = 0` only `C(inf)` is needed,
//! which exists whenever `Y^T a` is summable even if `Y` itself blows up.

mod checks;
mod measure;

use std::sync::Arc;

use serde::Serialize;

pub use checks::{
    adjoint_residual, nontriviality_check, transversality_check, NontrivialityReport, ResidualReport, TransversalityReport,
};
pub use measure::{Atom, BorelMeasureExt, MeasureSummary};

use crate::error::{invalid, Error, Result};
use crate::linear_ode::{integrate_compactified, integrate_segment, OdeOptions, DEFAULT_EPS};
use crate::problem_model::{ControlProblem, EndpointKind, Matrix, Process, SemiInfiniteGrid, TimeMap, Vector};
use crate::quadrature::{tail_certificate, CertificateOptions};

/// Time at which limits at infinity are read off: `s = 1 - eps` under the rational map.
pub fn far_horizon() -> f64 {
    TimeMap::Rational.to_time(1.0 - DEFAULT_EPS)
}

/// Growth cap for `(Y, C)` before integration towards infinity is stopped.
const GROWTH_CAP: f64 = 1e250;
/// Relative change of `C` over the last doubling that still counts as converged.
const TAIL_TOL: f64 = 1e-9;

/// Multiplier data that fixes an adjoint: `lambda0`, boundary vectors and one
/// measure per state constraint. Empty `l0`/`l1` mean "fit by least squares".
#[derive(Clone, Debug)]
pub struct Multipliers {
    pub lambda0: f64,
    pub l0: Vector,
    pub l1: Vector,
    pub measures: Vec<BorelMeasureExt>,
}

impl Multipliers {
    /// `lambda0 = 1`, no boundary vectors, zero measures.
    pub fn normal(problem: &ControlProblem) -> Self {
        Multipliers {
            lambda0: 1.0,
            l0: Vector::zeros(0),
            l1: Vector::zeros(0),
            measures: vec![BorelMeasureExt::zero(); problem.constraints.len()],
        }
    }

    pub fn with_l1(mut self, l1: Vector) -> Self {
        self.l1 = l1;
        self
    }

    pub fn with_measures(mut self, measures: Vec<BorelMeasureExt>) -> Self {
        self.measures = measures;
        self
    }
}

/// Jump `p(s+) - p(s)` contributed by one atom of one constraint measure.
#[derive(Clone, Debug, Serialize)]
pub struct JumpRecord {
    pub time: f64,
    pub constraint: usize,
    pub mass: f64,
    pub jump: Vec<f64>,
}

type Evaluator = Arc<dyn Fn(f64) -> Vector + Send + Sync>;

/// Adjoint path together with its multipliers.
#[derive(Clone)]
pub struct AdjointSolution {
    pub times: Vec<f64>,
    /// `p(t_k)`, left limits at jump times.
    pub values: Vec<Vector>,
    pub jumps: Vec<JumpRecord>,
    pub lambda0: f64,
    pub l0: Vector,
    pub l1: Vector,
    pub measures: Vec<BorelMeasureExt>,
    pub p_limit: Vector,
    /// Time at which limits at infinity are read off.
    pub far_time: f64,
    /// `int ||phi_x|| dt` passed the summability certificate.
    pub in_lim_class: bool,
    /// Relative change of the representation integral over its last doubling.
    pub tail_change: f64,
    eval: Evaluator,
}

impl std::fmt::Debug for AdjointSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdjointSolution")
            .field("nodes", &self.times.len())
            .field("lambda0", &self.lambda0)
            .field("p_limit", &self.p_limit.as_slice())
            .field("jumps", &self.jumps.len())
            .finish()
    }
}

impl AdjointSolution {
    /// Left-continuous value `p(t)`.
    pub fn eval(&self, t: f64) -> Vector {
        if t.is_infinite() {
            return self.p_limit.clone();
        }
        (self.eval)(t)
    }

    /// Right limit `p(t+)`: the left value plus the jumps recorded at `t`.
    pub fn eval_right(&self, t: f64) -> Vector {
        let mut p = self.eval(t);
        for j in self.jumps.iter().filter(|j| j.time == t) {
            p += Vector::from_column_slice(&j.jump);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.p_limit.len()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(self.p_limit.norm(), f64::max)
    }

    /// Candidate adjoint given in closed form (left-continuous); jumps follow
    /// from the measures' atoms.
    pub fn from_fn(
        problem: &ControlProblem,
        process: &Process,
        grid: &SemiInfiniteGrid,
        p: impl Fn(f64) -> Vector + Send + Sync + 'static,
        p_limit: Vector,
        multipliers: Multipliers,
    ) -> Result<Self> {
        check_multipliers(problem, &multipliers)?;
        let values = grid.nodes().iter().map(|&t| p(t)).collect();
        let jumps = jump_records(problem, process, &multipliers.measures);
        let in_lim_class = lim_certificate(problem, process);
        Ok(AdjointSolution {
            times: grid.nodes().to_vec(),
            values,
            jumps,
            lambda0: multipliers.lambda0,
            l0: multipliers.l0,
            l1: multipliers.l1,
            measures: multipliers.measures,
            p_limit,
            far_time: far_horizon(),
            in_lim_class,
            tail_change: 0.0,
            eval: Arc::new(p),
        })
    }

    /// The all-zero multiplier set (fails nontriviality).
    pub fn zero(problem: &ControlProblem, grid: &SemiInfiniteGrid) -> Self {
        let n = problem.state_dim;
        AdjointSolution {
            times: grid.nodes().to_vec(),
            values: vec![Vector::zeros(n); grid.len()],
            jumps: Vec::new(),
            lambda0: 0.0,
            l0: Vector::zeros(0),
            l1: Vector::zeros(0),
            measures: vec![BorelMeasureExt::zero(); problem.constraints.len()],
            p_limit: Vector::zeros(n),
            far_time: far_horizon(),
            in_lim_class: true,
            tail_change: 0.0,
            eval: Arc::new(move |_| Vector::zeros(n)),
        }
    }
}

fn check_multipliers(problem: &ControlProblem, m: &Multipliers) -> Result<()> {
    if m.measures.len() != problem.constraints.len() {
        return invalid(format!(
            "{} measures supplied for {} state constraints",
            m.measures.len(),
            problem.constraints.len()
        ));
    }
    if !(m.lambda0 >= 0.0) {
        return invalid("lambda0 must be nonnegative");
    }
    for mu in &m.measures {
        mu.validate()?;
    }
    Ok(())
}

fn jump_records(problem: &ControlProblem, process: &Process, measures: &[BorelMeasureExt]) -> Vec<JumpRecord> {
    let mut out = Vec::new();
    for (j, (mu, c)) in measures.iter().zip(&problem.constraints).enumerate() {
        for a in &mu.atoms {
            let gx = (c.g_x)(a.time, &process.state(a.time));
            out.push(JumpRecord { time: a.time, constraint: j, mass: a.mass, jump: (gx * a.mass).as_slice().to_vec() });
        }
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    out
}

fn lim_certificate(problem: &ControlProblem, process: &Process) -> bool {
    let breaks = process.breakpoints();
    tail_certificate(
        &mut |t| (problem.phi_x)(t, &process.state(t), &process.control(t)).norm(),
        &breaks,
        CertificateOptions::default(),
    )
    .summable
}

/// Least-squares solution of `a x = b` and the residual norm `||a x - b||`.
pub(crate) fn least_squares(a: &Matrix, b: &Vector) -> (Vector, f64) {
    if a.ncols() == 0 {
        return (Vector::zeros(0), b.norm());
    }
    let x = a.clone().svd(true, true).solve(b, 1e-13).unwrap_or_else(|_| Vector::zeros(a.ncols()));
    let r = (a * &x - b).norm();
    (x, r)
}

/// `-h1x^T l1 - sum_j g_jx mu_j({inf})` at the far horizon.
pub fn limit_target(problem: &ControlProblem, process: &Process, l1: &Vector, measures: &[BorelMeasureExt], far: f64) -> Result<Vector> {
    let x = process.x.limit().clone();
    let mut target = Vector::zeros(problem.state_dim);
    if let Some(h1) = &problem.h1 {
        let jac = (h1.jac)(far, &x);
        if l1.len() != jac.nrows() {
            return invalid(format!("l1 has length {} but h1 has {} components", l1.len(), jac.nrows()));
        }
        target -= jac.tr_mul(l1);
    } else if !l1.is_empty() {
        return invalid("l1 supplied for a problem without terminal map");
    }
    for (mu, c) in measures.iter().zip(&problem.constraints) {
        if mu.at_infinity != 0.0 {
            target -= (c.g_x)(far, &x) * mu.at_infinity;
        }
    }
    Ok(target)
}

struct Representation {
    problem: ControlProblem,
    process: Process,
    lambda0: f64,
    measures: Vec<BorelMeasureExt>,
    times: Vec<f64>,
    states: Vec<Vector>,
    k: Vector,
    /// `(s_n, Y(s_n)^T J_n)`
    jumps: Vec<(f64, Vector)>,
    breaks: Vec<f64>,
    far_time: f64,
    p_limit: Vector,
}

impl Representation {
    fn n(&self) -> usize {
        self.problem.state_dim
    }

    fn rhs(&self, t: f64, z: &Vector) -> Vector {
        augmented_rhs(&self.problem, &self.process, &self.measures, self.lambda0, t, z)
    }

    fn p_from_state(&self, t: f64, z: &Vector) -> Vector {
        let n = self.n();
        let y = Matrix::from_column_slice(n, n, &z.as_slice()[..n * n]);
        let mut w = &self.k + z.rows(n * n, n);
        for (s, v) in &self.jumps {
            if *s < t {
                w += v;
            }
        }
        y.transpose().lu().solve(&w).unwrap_or_else(|| Vector::from_element(n, f64::NAN))
    }

    fn eval(&self, t: f64) -> Vector {
        if t >= self.far_time {
            return self.p_limit.clone();
        }
        let k = self.times.partition_point(|&s| s <= t).max(1) - 1;
        let t0 = self.times[k];
        if t == t0 {
            return self.p_from_state(t, &self.states[k]);
        }
        let mut z = self.states[k].clone();
        let mut cur = t0;
        let mut stops: Vec<f64> = self.breaks.iter().copied().filter(|&b| b > t0 && b < t).collect();
        stops.push(t);
        let opts = OdeOptions::tight();
        for s in stops {
            match integrate_segment(&|tt: f64, zz: &Vector| self.rhs(tt, zz), cur, &z, s, 0.0, &opts) {
                Ok((zn, _)) => z = zn,
                Err(_) => return Vector::from_element(self.n(), f64::NAN),
            }
            cur = s;
        }
        self.p_from_state(t, &z)
    }
}

/// `a(t) = lambda0 omega f_x + sum_j lambda_j(t) g_jx`.
pub(crate) fn forcing(
    problem: &ControlProblem,
    measures: &[BorelMeasureExt],
    lambda0: f64,
    t: f64,
    x: &Vector,
    u: &Vector,
) -> Vector {
    let mut a = Vector::zeros(problem.state_dim);
    let w = (problem.omega)(t);
    if lambda0 != 0.0 && w != 0.0 {
        a += (problem.f_x)(t, x, u) * (lambda0 * w);
    }
    for (mu, c) in measures.iter().zip(&problem.constraints) {
        let d = mu.density(t);
        if d != 0.0 {
            a += (c.g_x)(t, x) * d;
        }
    }
    a
}

fn augmented_rhs(
    problem: &ControlProblem,
    process: &Process,
    measures: &[BorelMeasureExt],
    lambda0: f64,
    t: f64,
    z: &Vector,
) -> Vector {
    let n = problem.state_dim;
    let x = process.state(t);
    let u = process.control(t);
    let jac = (problem.phi_x)(t, &x, &u);
    let y = Matrix::from_column_slice(n, n, &z.as_slice()[..n * n]);
    let a = forcing(problem, measures, lambda0, t, &x, &u);
    let dy = &jac * &y;
    let dc = y.tr_mul(&a);
    let mut out = Vector::zeros(n * n + n);
    out.rows_mut(0, n * n).copy_from_slice(dy.as_slice());
    out.rows_mut(n * n, n).copy_from(&dc);
    out
}

/// Adjoint fixed by the given multipliers through the integral representation.
pub fn adjoint_from_multipliers(
    problem: &ControlProblem,
    process: &Process,
    grid: &SemiInfiniteGrid,
    multipliers: Multipliers,
) -> Result<AdjointSolution> {
    process.check_dims(problem)?;
    check_multipliers(problem, &multipliers)?;
    let n = problem.state_dim;
    let nodes = grid.nodes();
    for mu in &multipliers.measures {
        for a in &mu.atoms {
            if grid.index_of(a.time).is_none() {
                return Err(Error::GridMismatch(a.time));
            }
        }
    }
    let mut breaks = process.breakpoints();
    breaks.extend_from_slice(&problem.breakpoints);
    for mu in &multipliers.measures {
        breaks.extend_from_slice(&mu.density_breaks);
    }
    breaks.retain(|t| t.is_finite() && *t > 0.0);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut z0 = Vector::zeros(n * n + n);
    for i in 0..n {
        z0[i * n + i] = 1.0;
    }
    let measures = multipliers.measures.clone();
    let lambda0 = multipliers.lambda0;
    let rhs = |t: f64, z: &Vector| augmented_rhs(problem, process, &measures, lambda0, t, z);
    let run = integrate_compactified(&rhs, &z0, nodes, &breaks, TimeMap::Rational, DEFAULT_EPS, GROWTH_CAP, &OdeOptions::tight())?;

    let c_of = |z: &Vector| z.rows(n * n, n).into_owned();
    let y_of = |z: &Vector| Matrix::from_column_slice(n, n, &z.as_slice()[..n * n]);
    let c_far = c_of(&run.far_value);
    // Change of C since the last checkpoint at or before half the far time.
    let tail_change = match run.checkpoints.iter().rev().find(|(t, _)| *t <= 0.5 * run.far_time) {
        Some((_, z)) => (&c_far - c_of(z)).norm() / (1.0 + c_far.norm()),
        None => 0.0,
    };
    if run.truncated && tail_change > TAIL_TOL {
        return Err(Error::NonSummable(format!(
            "representation integral does not settle: relative change {tail_change:e} over the last doubling before t = {}",
            run.far_time
        )));
    }

    let p_inf = limit_target(problem, process, &multipliers.l1, &multipliers.measures, run.far_time)?;
    let records = jump_records(problem, process, &multipliers.measures);
    let mut jumps = Vec::new();
    for r in &records {
        let k = grid.index_of(r.time).ok_or(Error::GridMismatch(r.time))?;
        let yk = y_of(&run.values[k]);
        jumps.push((r.time, yk.tr_mul(&Vector::from_column_slice(&r.jump))));
    }
    let jump_total = jumps.iter().fold(Vector::zeros(n), |acc, (_, v)| acc + v);
    let mut k_vec = -&c_far - &jump_total;
    if p_inf.amax() != 0.0 {
        if run.truncated {
            return Err(Error::NonSummable(format!(
                "fundamental matrix does not converge (stopped at t = {}) but the limit of p is nonzero",
                run.far_time
            )));
        }
        k_vec += y_of(&run.far_value).tr_mul(&p_inf);
    }

    let mut rep = Representation {
        problem: problem.clone(),
        process: process.clone(),
        lambda0,
        measures: multipliers.measures.clone(),
        times: nodes.to_vec(),
        states: run.values.clone(),
        k: k_vec,
        jumps,
        breaks,
        far_time: run.far_time,
        p_limit: Vector::zeros(n),
    };
    // Value at the far horizon, all jumps included.
    rep.p_limit = rep.p_from_state(f64::INFINITY, &run.far_value);
    if rep.p_limit.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { t: run.far_time });
    }
    let values: Vec<Vector> = nodes.iter().zip(&run.values).map(|(&t, z)| rep.p_from_state(t, z)).collect();
    if let Some((k, _)) = values.iter().enumerate().find(|(_, v)| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite { t: nodes[k] });
    }

    let l0 = if multipliers.l0.is_empty() {
        match &problem.h0 {
            Some(h0) => least_squares(&(h0.jac)(&process.state(0.0)).transpose(), &values[0]).0,
            None => Vector::zeros(0),
        }
    } else {
        multipliers.l0.clone()
    };
    let p_limit = rep.p_limit.clone();
    let far_time = rep.far_time;
    let rep = Arc::new(rep);
    Ok(AdjointSolution {
        times: nodes.to_vec(),
        values,
        jumps: records,
        lambda0,
        l0,
        l1: multipliers.l1,
        measures: multipliers.measures,
        p_limit,
        far_time,
        in_lim_class: lim_certificate(problem, process),
        tail_change,
        eval: Arc::new(move |t| rep.eval(t)),
    })
}

/// Normal-form adjoint of a free-endpoint problem from the integral
/// representation `p(t) = -Y(t)^{-T} int_t^inf Y^T omega f_x ds`, `p(inf) = 0`.
///
/// `in_lim_class` records whether `int ||phi_x||` is summable; the
/// representation is still evaluated when it is not, as long as the integral
/// converges.
pub fn adjoint_free_endpoint(problem: &ControlProblem, process: &Process, grid: &SemiInfiniteGrid) -> Result<AdjointSolution> {
    if problem.endpoint != EndpointKind::Free {
        return invalid(format!("adjoint_free_endpoint needs a free endpoint, problem has {:?}", problem.endpoint));
    }
    adjoint_from_multipliers(problem, process, grid, Multipliers::normal(problem))
}
