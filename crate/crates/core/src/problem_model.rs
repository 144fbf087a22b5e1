//! Problem and process data model on the half line.
//!
//! A [`ControlProblem`] bundles the cost, dynamics, density, boundary maps,
//! state constraints and control set as callables. A [`Process`] is a candidate
//! state/control pair sampled on a [`SemiInfiniteGrid`], optionally backed by a
//! closed-form evaluator so that quadrature is not limited by the grid.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

pub type CostFn = Arc<dyn Fn(f64, &Vector, &Vector) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(f64, &Vector, &Vector) -> Vector + Send + Sync>;
pub type MatrixField = Arc<dyn Fn(f64, &Vector, &Vector) -> Matrix + Send + Sync>;
pub type Density = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type StateScalar = Arc<dyn Fn(f64, &Vector) -> f64 + Send + Sync>;
pub type StateVector = Arc<dyn Fn(f64, &Vector) -> Vector + Send + Sync>;
pub type StateMatrix = Arc<dyn Fn(f64, &Vector) -> Matrix + Send + Sync>;
pub type PathFn = Arc<dyn Fn(f64) -> Vector + Send + Sync>;

/// `h0(x(0)) = 0` with Jacobian of shape `s0 x n`.
#[derive(Clone)]
pub struct InitialMap {
    pub map: Arc<dyn Fn(&Vector) -> Vector + Send + Sync>,
    pub jac: Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>,
}

/// `lim h1(t, x(t)) = 0` with Jacobian of shape `s1 x n`.
#[derive(Clone)]
pub struct TerminalMap {
    pub map: StateVector,
    pub jac: StateMatrix,
}

/// State constraint `g(t, x) <= 0`.
#[derive(Clone)]
pub struct StateConstraint {
    pub name: String,
    pub g: StateScalar,
    pub g_x: StateVector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    Free,
    Fixed,
    /// The first `free` state components are free at infinity, the rest are pinned by `h1`.
    Mixed { free: usize },
}

/// Sampler over the control set `U`.
#[derive(Clone, Debug)]
pub enum ControlSet {
    Finite(Vec<Vector>),
    /// Axis-aligned box sampled on a product grid with `resolution` points per axis.
    /// `unbounded` marks a box whose upper faces stand in for `+inf`; maximizers
    /// then probe a box with doubled extent to detect an unbounded supremum.
    Box {
        lower: Vector,
        upper: Vector,
        resolution: usize,
        unbounded: bool,
    },
}

/// Result of maximizing a function over a [`ControlSet`].
#[derive(Clone, Debug)]
pub struct ControlMax {
    pub argmax: Vector,
    pub value: f64,
    /// Set when the enlarged box produced a strictly larger value.
    pub unbounded_warning: bool,
}

const GOLDEN_ITERATIONS: usize = 90;

impl ControlSet {
    pub fn interval(lower: f64, upper: f64, resolution: usize) -> Self {
        ControlSet::Box {
            lower: Vector::from_element(1, lower),
            upper: Vector::from_element(1, upper),
            resolution,
            unbounded: false,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Finite(v) => v.first().map_or(0, |u| u.len()),
            ControlSet::Box { lower, .. } => lower.len(),
        }
    }

    pub fn contains(&self, u: &Vector, tol: f64) -> bool {
        match self {
            ControlSet::Finite(v) => v.iter().any(|w| (w - u).amax() <= tol),
            ControlSet::Box { lower, upper, .. } => (0..u.len())
                .all(|i| u[i] >= lower[i] - tol && u[i] <= upper[i] + tol),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vector {
        match self {
            ControlSet::Finite(v) => v[rng.random_range(0..v.len())].clone(),
            ControlSet::Box { lower, upper, .. } => {
                Vector::from_fn(lower.len(), |i, _| rng.random_range(lower[i]..=upper[i]))
            }
        }
    }

    fn enlarged(&self, factor: f64) -> Self {
        match self {
            ControlSet::Box { lower, upper, resolution, .. } => ControlSet::Box {
                lower: lower.clone(),
                upper: lower + (upper - lower) * factor,
                resolution: *resolution,
                unbounded: false,
            },
            other => other.clone(),
        }
    }

    /// Grid sampling followed by coordinatewise golden-section refinement around
    /// the best sample. `resolution` overrides the per-axis sample count.
    pub fn maximize(&self, h: &(dyn Fn(&Vector) -> f64 + Sync), resolution: Option<usize>) -> ControlMax {
        let (argmax, value) = self.maximize_plain(h, resolution);
        let unbounded_warning = match self {
            ControlSet::Box { unbounded: true, .. } => {
                let (_, wide) = self.enlarged(2.0).maximize_plain(h, resolution);
                wide > value + 1e-9 * (1.0 + value.abs())
            }
            _ => false,
        };
        ControlMax { argmax, value, unbounded_warning }
    }

    fn maximize_plain(&self, h: &(dyn Fn(&Vector) -> f64 + Sync), resolution: Option<usize>) -> (Vector, f64) {
        match self {
            ControlSet::Finite(v) => {
                let mut best = (v[0].clone(), h(&v[0]));
                for u in &v[1..] {
                    let val = h(u);
                    if val > best.1 {
                        best = (u.clone(), val);
                    }
                }
                best
            }
            ControlSet::Box { lower, upper, resolution: res, .. } => {
                let m = lower.len();
                let res = resolution.unwrap_or(*res).max(2);
                let step = Vector::from_fn(m, |i, _| (upper[i] - lower[i]) / (res - 1) as f64);
                let total = res.pow(m as u32);
                let mut best_u = lower.clone();
                let mut best_v = f64::NEG_INFINITY;
                let mut u = lower.clone();
                for idx in 0..total {
                    let mut rem = idx;
                    for i in 0..m {
                        u[i] = lower[i] + step[i] * (rem % res) as f64;
                        rem /= res;
                    }
                    let val = h(&u);
                    if val > best_v {
                        best_v = val;
                        best_u.copy_from(&u);
                    }
                }
                // Two sweeps of coordinatewise golden section inside the neighbouring cells.
                for _ in 0..2 {
                    for i in 0..m {
                        let lo = (best_u[i] - step[i]).max(lower[i]);
                        let hi = (best_u[i] + step[i]).min(upper[i]);
                        let mut probe = best_u.clone();
                        let (xi, val) = golden_section(
                            |s| {
                                probe[i] = s;
                                h(&probe)
                            },
                            lo,
                            hi,
                        );
                        if val > best_v {
                            best_v = val;
                            best_u[i] = xi;
                        }
                    }
                }
                (best_u, best_v)
            }
        }
    }
}

/// Golden-section search for a maximum of `f` on `[a, b]`.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..GOLDEN_ITERATIONS {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs()) {
            break;
        }
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for x in [a, b] {
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

/// The full problem datum.
#[derive(Clone)]
pub struct ControlProblem {
    pub name: String,
    pub state_dim: usize,
    pub control_dim: usize,
    pub f: CostFn,
    pub f_x: VectorField,
    pub phi: VectorField,
    pub phi_x: MatrixField,
    pub omega: Density,
    /// Declared `L1` norm of `omega`.
    pub omega_l1: f64,
    pub h0: Option<InitialMap>,
    pub h1: Option<TerminalMap>,
    pub constraints: Vec<StateConstraint>,
    pub control_set: ControlSet,
    pub endpoint: EndpointKind,
    /// Radius of the tube `V_gamma` around the candidate state.
    pub gamma: f64,
    /// Times where the data are discontinuous in `t`.
    pub breakpoints: Vec<f64>,
}

impl std::fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlProblem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("constraints", &self.constraints.len())
            .field("endpoint", &self.endpoint)
            .finish()
    }
}

impl ControlProblem {
    /// Zero problem: `f = 0`, `phi = 0`, `omega = e^{-t}`, `U = {0}`, free endpoint.
    pub fn new(name: impl Into<String>, n: usize, m: usize) -> Self {
        ControlProblem {
            name: name.into(),
            state_dim: n,
            control_dim: m,
            f: Arc::new(|_, _, _| 0.0),
            f_x: Arc::new(move |_, _, _| Vector::zeros(n)),
            phi: Arc::new(move |_, _, _| Vector::zeros(n)),
            phi_x: Arc::new(move |_, _, _| Matrix::zeros(n, n)),
            omega: Arc::new(|t| (-t).exp()),
            omega_l1: 1.0,
            h0: None,
            h1: None,
            constraints: Vec::new(),
            control_set: ControlSet::Finite(vec![Vector::zeros(m)]),
            endpoint: EndpointKind::Free,
            gamma: 0.5,
            breakpoints: Vec::new(),
        }
    }

    pub fn cost(
        mut self,
        f: impl Fn(f64, &Vector, &Vector) -> f64 + Send + Sync + 'static,
        f_x: impl Fn(f64, &Vector, &Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        self.f = Arc::new(f);
        self.f_x = Arc::new(f_x);
        self
    }

    pub fn dynamics(
        mut self,
        phi: impl Fn(f64, &Vector, &Vector) -> Vector + Send + Sync + 'static,
        phi_x: impl Fn(f64, &Vector, &Vector) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        self.phi = Arc::new(phi);
        self.phi_x = Arc::new(phi_x);
        self
    }

    pub fn density(mut self, omega: impl Fn(f64) -> f64 + Send + Sync + 'static, l1: f64) -> Self {
        self.omega = Arc::new(omega);
        self.omega_l1 = l1;
        self
    }

    pub fn initial(
        mut self,
        map: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        jac: impl Fn(&Vector) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        self.h0 = Some(InitialMap { map: Arc::new(map), jac: Arc::new(jac) });
        self
    }

    /// Shorthand for `h0(x) = x - x0`.
    pub fn initial_state(self, x0: Vector) -> Self {
        let n = x0.len();
        self.initial(move |x| x - &x0, move |_| Matrix::identity(n, n))
    }

    pub fn terminal(
        mut self,
        map: impl Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
        jac: impl Fn(f64, &Vector) -> Matrix + Send + Sync + 'static,
        kind: EndpointKind,
    ) -> Self {
        self.h1 = Some(TerminalMap { map: Arc::new(map), jac: Arc::new(jac) });
        self.endpoint = kind;
        self
    }

    pub fn constraint(
        mut self,
        name: impl Into<String>,
        g: impl Fn(f64, &Vector) -> f64 + Send + Sync + 'static,
        g_x: impl Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        self.constraints.push(StateConstraint { name: name.into(), g: Arc::new(g), g_x: Arc::new(g_x) });
        self
    }

    pub fn controls(mut self, set: ControlSet) -> Self {
        self.control_set = set;
        self
    }

    pub fn radius(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_breakpoints(mut self, b: Vec<f64>) -> Self {
        self.breakpoints = b;
        self
    }

    /// `H(t,x,u,p,lambda0) = -lambda0 * omega(t) f(t,x,u) + <p, phi(t,x,u)>`.
    pub fn pontryagin(&self, t: f64, x: &Vector, u: &Vector, p: &Vector, lambda0: f64) -> f64 {
        let w = (self.omega)(t);
        let cost = if lambda0 == 0.0 || w == 0.0 { 0.0 } else { -lambda0 * w * (self.f)(t, x, u) };
        cost + p.dot(&(self.phi)(t, x, u))
    }

    /// `H_x = -lambda0 * omega f_x + phi_x^T p`.
    pub fn pontryagin_x(&self, t: f64, x: &Vector, u: &Vector, p: &Vector, lambda0: f64) -> Vector {
        let w = (self.omega)(t);
        let mut out = (self.phi_x)(t, x, u).tr_mul(p);
        if lambda0 != 0.0 && w != 0.0 {
            out -= (self.f_x)(t, x, u) * (lambda0 * w);
        }
        out
    }

    /// Checks the density sign, the declared `L1` norm and the dimensions of all
    /// callables at a few sample points.
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.control_dim == 0 {
            return invalid("state and control dimensions must be positive");
        }
        if !(self.omega_l1 > 0.0) || !self.omega_l1.is_finite() {
            return invalid(format!("declared L1 norm of omega must be positive, got {}", self.omega_l1));
        }
        if !(self.gamma > 0.0) {
            return invalid("tube radius gamma must be positive");
        }
        if self.control_set.dim() != self.control_dim {
            return invalid("control set dimension differs from control_dim");
        }
        if let EndpointKind::Mixed { free } = self.endpoint {
            if free >= self.state_dim {
                return invalid("mixed endpoint split must be below the state dimension");
            }
        }
        match (self.endpoint, &self.h1) {
            (EndpointKind::Free, Some(_)) => return invalid("free endpoint with a terminal map h1"),
            (EndpointKind::Fixed | EndpointKind::Mixed { .. }, None) => {
                return invalid("fixed or mixed endpoint without a terminal map h1")
            }
            _ => {}
        }
        for k in 0..200 {
            let t = 0.05 * k as f64;
            let w = (self.omega)(t);
            if !(w >= 0.0) {
                return invalid(format!("omega({t}) = {w} is negative or not a number"));
            }
        }
        let x = Vector::zeros(self.state_dim);
        let u = self.control_set.sample(&mut ChaCha8Rng::seed_from_u64(0));
        if (self.f_x)(0.0, &x, &u).len() != self.state_dim
            || (self.phi)(0.0, &x, &u).len() != self.state_dim
            || (self.phi_x)(0.0, &x, &u).shape() != (self.state_dim, self.state_dim)
        {
            return invalid("callable output dimensions do not match state_dim");
        }
        Ok(())
    }

    /// Central finite-difference check of every Jacobian at `points` random
    /// samples (step `1e-6`), returning the worst relative error per callable.
    pub fn jacobian_check(&self, seed: u64, points: usize) -> JacobianReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.state_dim;
        let samples: Vec<(f64, Vector, Vector)> = (0..points)
            .map(|_| {
                let t = rng.random_range(0.0..10.0);
                let x = Vector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
                (t, x, self.control_set.sample(&mut rng))
            })
            .collect();
        self.jacobian_check_at(&samples)
    }

    /// Finite-difference Jacobian check at the given `(t, x, u)` samples.
    pub fn jacobian_check_at(&self, samples: &[(f64, Vector, Vector)]) -> JacobianReport {
        let n = self.state_dim;
        let mut rep = JacobianReport::default();
        let step = 1e-6;
        for (t, x, u) in samples {
            let (t, u) = (*t, u.clone());
            // Column `i` of the difference quotient and its rounding noise
            // `eps * max|g(x +- h e_i)| / h`.
            let fd_jac = |g: &dyn Fn(&Vector) -> Vector, rows: usize| {
                let mut m = Matrix::zeros(rows, n);
                let mut noise = Matrix::zeros(rows, n);
                for i in 0..n {
                    let h = step * x[i].abs().max(1.0);
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    let (gp, gm) = (g(&xp), g(&xm));
                    m.set_column(i, &((&gp - &gm) / (2.0 * h)));
                    noise.set_column(i, &gp.zip_map(&gm, |a, b| f64::EPSILON * a.abs().max(b.abs()) / h));
                }
                (m, noise)
            };
            let row = |g: &dyn Fn(&Vector) -> f64| fd_jac(&|y| Vector::from_element(1, g(y)), 1);
            let f_fd = row(&|y| (self.f)(t, y, &u));
            rep.f_x = rep.f_x.max(rel_err(&f_fd, &as_row(&(self.f_x)(t, x, &u))));
            let phi_fd = fd_jac(&|y| (self.phi)(t, y, &u), n);
            rep.phi_x = rep.phi_x.max(rel_err(&phi_fd, &(self.phi_x)(t, x, &u)));
            for c in &self.constraints {
                let g_fd = row(&|y| (c.g)(t, y));
                rep.g_x = rep.g_x.max(rel_err(&g_fd, &as_row(&(c.g_x)(t, x))));
            }
            if let Some(h0) = &self.h0 {
                let s0 = (h0.map)(x).len();
                let fd = fd_jac(&|y| (h0.map)(y), s0);
                rep.h_x = rep.h_x.max(rel_err(&fd, &(h0.jac)(x)));
            }
            if let Some(h1) = &self.h1 {
                let s1 = (h1.map)(t, x).len();
                let fd = fd_jac(&|y| (h1.map)(t, y), s1);
                rep.h_x = rep.h_x.max(rel_err(&fd, &(h1.jac)(t, x)));
            }
        }
        rep
    }
}

fn as_row(v: &Vector) -> Matrix {
    Matrix::from_row_slice(1, v.len(), v.as_slice())
}

/// Worst entrywise mismatch beyond the rounding noise of the difference
/// quotient, relative to the larger Jacobian (at least 1).
fn rel_err((fd, noise): &(Matrix, Matrix), exact: &Matrix) -> f64 {
    let excess = fd.zip_zip_map(exact, noise, |a, b, e| ((a - b).abs() - 4.0 * e).max(0.0));
    excess.amax() / fd.amax().max(exact.amax()).max(1.0)
}

/// Worst relative finite-difference mismatch per Jacobian callable.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct JacobianReport {
    pub f_x: f64,
    pub phi_x: f64,
    pub g_x: f64,
    pub h_x: f64,
}

impl JacobianReport {
    pub fn worst(&self) -> f64 {
        self.f_x.max(self.phi_x).max(self.g_x).max(self.h_x)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst() <= tol
    }
}

/// Compactifying change of variable `s in [0,1) -> t in [0, inf)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMap {
    /// `t = -ln(1 - s)`
    Log,
    /// `t = s / (1 - s)`
    Rational,
}

impl TimeMap {
    pub fn to_time(self, s: f64) -> f64 {
        match self {
            TimeMap::Log => -(-s).ln_1p(),
            TimeMap::Rational => s / (1.0 - s),
        }
    }

    pub fn to_unit(self, t: f64) -> f64 {
        if t.is_infinite() {
            return 1.0;
        }
        match self {
            TimeMap::Log => -(-t).exp_m1(),
            TimeMap::Rational => t / (1.0 + t),
        }
    }

    /// `dt/ds`
    pub fn speed(self, s: f64) -> f64 {
        match self {
            TimeMap::Log => 1.0 / (1.0 - s),
            TimeMap::Rational => 1.0 / ((1.0 - s) * (1.0 - s)),
        }
    }
}

/// Finite nodes `0 = t_0 < ... < t_N` plus the ideal point at infinity.
#[derive(Clone, Debug, Serialize)]
pub struct SemiInfiniteGrid {
    nodes: Vec<f64>,
    pub map: TimeMap,
    pub includes_infinity: bool,
}

/// Nodes `map(k/N)`, `k = 0..N-1`, with the infinity marker.
pub fn make_grid(map: TimeMap, n: usize) -> Result<SemiInfiniteGrid> {
    if n < 8 {
        return invalid(format!("grid needs at least 8 nodes, got {n}"));
    }
    let nodes = (0..n).map(|k| map.to_time(k as f64 / n as f64)).collect();
    Ok(SemiInfiniteGrid { nodes, map, includes_infinity: true })
}

impl SemiInfiniteGrid {
    pub fn from_nodes(nodes: Vec<f64>, map: TimeMap) -> Result<Self> {
        if nodes.is_empty() {
            return invalid("grid has no nodes");
        }
        if nodes[0] != 0.0 {
            return invalid("grid must start at t = 0");
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes.iter().any(|t| !t.is_finite()) {
            return invalid("grid nodes must be finite and strictly increasing");
        }
        Ok(SemiInfiniteGrid { nodes, map, includes_infinity: true })
    }

    /// Inserts exact breakpoints; an existing node closer than `1e-9` (relative)
    /// is replaced by the breakpoint.
    pub fn with_breakpoints(mut self, extra: &[f64]) -> Self {
        for &b in extra {
            if !b.is_finite() || b < 0.0 {
                continue;
            }
            let tol = 1e-9 * b.max(1.0);
            match self.nodes.iter().position(|&t| (t - b).abs() <= tol) {
                Some(i) => self.nodes[i] = b,
                None => {
                    let pos = self.nodes.partition_point(|&t| t < b);
                    self.nodes.insert(pos, b);
                }
            }
        }
        self
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.nodes.last().expect("grid is never empty")
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * t.abs().max(1.0);
        self.nodes.iter().position(|&s| (s - t).abs() <= tol)
    }
}

/// Function on `[0, inf]` that converges at infinity: `x = x0 + a` with `x0 -> 0`.
///
/// Sampled functions interpolate linearly between nodes and equal the limit beyond
/// the last node; a closed-form evaluator, when present, takes precedence.
#[derive(Clone)]
pub struct ConvergentFunction {
    times: Arc<Vec<f64>>,
    values: Vec<Vector>,
    limit: Vector,
    tail_tol: f64,
    exact: Option<PathFn>,
}

impl std::fmt::Debug for ConvergentFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConvergentFunction")
            .field("nodes", &self.times.len())
            .field("limit", &self.limit.as_slice())
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

impl ConvergentFunction {
    pub fn from_samples(times: Vec<f64>, values: Vec<Vector>, limit: Vector, tail_tol: f64) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return invalid("sample count must be positive and match the node count");
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("sample times must be strictly increasing");
        }
        let n = limit.len();
        if values.iter().any(|v| v.len() != n) {
            return invalid("sample dimension differs from the limit dimension");
        }
        let gap = (values.last().unwrap() - &limit).norm();
        if gap > tail_tol {
            return invalid(format!("tail gap {gap:e} exceeds declared tail tolerance {tail_tol:e}"));
        }
        Ok(ConvergentFunction { times: Arc::new(times), values, limit, tail_tol, exact: None })
    }

    /// Samples a closed form on the grid and keeps it as the evaluator.
    pub fn from_fn(grid: &SemiInfiniteGrid, f: impl Fn(f64) -> Vector + Send + Sync + 'static, limit: Vector) -> Self {
        let values = grid.nodes().iter().map(|&t| f(t)).collect();
        ConvergentFunction {
            times: Arc::new(grid.nodes().to_vec()),
            values,
            limit,
            tail_tol: f64::INFINITY,
            exact: Some(Arc::new(f)),
        }
    }

    pub fn constant(grid: &SemiInfiniteGrid, v: Vector) -> Self {
        let w = v.clone();
        Self::from_fn(grid, move |_| w.clone(), v)
    }

    pub fn dim(&self) -> usize {
        self.limit.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn limit(&self) -> &Vector {
        &self.limit
    }

    pub fn tail_tolerance(&self) -> f64 {
        self.tail_tol
    }

    pub fn tail_gap(&self) -> f64 {
        (self.values.last().unwrap() - &self.limit).norm()
    }

    pub fn has_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn eval(&self, t: f64) -> Vector {
        if t.is_infinite() {
            return self.limit.clone();
        }
        if let Some(f) = &self.exact {
            return f(t);
        }
        let ts = &self.times;
        if t >= *ts.last().unwrap() {
            // Linear blend from the last node into the limit is not defined; the
            // tail equals the limit by convention.
            return if t == *ts.last().unwrap() { self.values.last().unwrap().clone() } else { self.limit.clone() };
        }
        if t <= ts[0] {
            return self.values[0].clone();
        }
        let k = ts.partition_point(|&s| s <= t) - 1;
        let w = (t - ts[k]) / (ts[k + 1] - ts[k]);
        &self.values[k] * (1.0 - w) + &self.values[k + 1] * w
    }
}

/// `(sup_norm, split_norm)` with `split = sup ||x - a|| + ||a||`.
pub fn clim_norms(x: &ConvergentFunction) -> Result<(f64, f64)> {
    if x.values.is_empty() {
        return invalid("empty grid");
    }
    let a = x.limit();
    let sup = x.values.iter().map(|v| v.norm()).fold(a.norm(), f64::max);
    let split = x.values.iter().map(|v| (v - a).norm()).fold(0.0, f64::max) + a.norm();
    Ok((sup, split))
}

/// Control path, piecewise constant on the grid (value `u_k` on `[t_k, t_{k+1})`)
/// unless a closed-form evaluator is attached.
#[derive(Clone)]
pub struct ControlPath {
    times: Arc<Vec<f64>>,
    values: Vec<Vector>,
    limit: Vector,
    exact: Option<PathFn>,
    breakpoints: Vec<f64>,
}

impl std::fmt::Debug for ControlPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlPath")
            .field("nodes", &self.times.len())
            .field("breakpoints", &self.breakpoints.len())
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

impl ControlPath {
    pub fn from_samples(times: Vec<f64>, values: Vec<Vector>, limit: Vector) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return invalid("control sample count must be positive and match the node count");
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("control sample times must be strictly increasing");
        }
        let breakpoints = times.clone();
        Ok(ControlPath { times: Arc::new(times), values, limit, exact: None, breakpoints })
    }

    /// Closed-form control; `breakpoints` lists its discontinuities.
    pub fn from_fn(
        grid: &SemiInfiniteGrid,
        f: impl Fn(f64) -> Vector + Send + Sync + 'static,
        limit: Vector,
        breakpoints: Vec<f64>,
    ) -> Self {
        let values = grid.nodes().iter().map(|&t| f(t)).collect();
        ControlPath { times: Arc::new(grid.nodes().to_vec()), values, limit, exact: Some(Arc::new(f)), breakpoints }
    }

    pub fn constant(grid: &SemiInfiniteGrid, v: Vector) -> Self {
        let w = v.clone();
        Self::from_fn(grid, move |_| w.clone(), v, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.limit.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn limit(&self) -> &Vector {
        &self.limit
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn has_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn eval(&self, t: f64) -> Vector {
        if t.is_infinite() {
            return self.limit.clone();
        }
        if let Some(f) = &self.exact {
            return f(t);
        }
        let k = self.times.partition_point(|&s| s <= t).max(1) - 1;
        self.values[k].clone()
    }

    /// Pointwise map keeping the breakpoint structure.
    pub fn map(&self, f: impl Fn(f64, Vector) -> Vector + Send + Sync + Clone + 'static) -> Self {
        let values = self.times.iter().zip(&self.values).map(|(&t, v)| f(t, v.clone())).collect();
        let limit = f(f64::INFINITY, self.limit.clone());
        let exact = self.exact.clone().map(|g| {
            let f = f.clone();
            Arc::new(move |t: f64| f(t, g(t))) as PathFn
        });
        ControlPath { times: self.times.clone(), values, limit, exact, breakpoints: self.breakpoints.clone() }
    }
}

/// Admissibility-class flags filled in by `pmp_verify`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissibilityFlags {
    pub adm: bool,
    pub lim_cond1: bool,
    pub lim_cond2: bool,
    pub lip: bool,
}

/// Candidate state/control pair.
#[derive(Clone, Debug)]
pub struct Process {
    pub x: ConvergentFunction,
    pub u: ControlPath,
    pub flags: Option<AdmissibilityFlags>,
}

impl Process {
    pub fn new(x: ConvergentFunction, u: ControlPath) -> Self {
        Process { x, u, flags: None }
    }

    pub fn state(&self, t: f64) -> Vector {
        self.x.eval(t)
    }

    pub fn control(&self, t: f64) -> Vector {
        self.u.eval(t)
    }

    pub fn times(&self) -> &[f64] {
        self.x.times()
    }

    /// Sorted discontinuity points of the process (control switches, and every
    /// node when either component is only sampled).
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.u.breakpoints().to_vec();
        if !self.x.has_exact() || !self.u.has_exact() {
            b.extend_from_slice(self.x.times());
        }
        b.retain(|t| t.is_finite() && *t > 0.0);
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    /// First node whose control leaves `U`, if any.
    pub fn control_violation(&self, set: &ControlSet, tol: f64) -> Option<f64> {
        self.u
            .times()
            .iter()
            .zip(self.u.values())
            .find(|(_, v)| !set.contains(v, tol))
            .map(|(&t, _)| t)
    }

    pub fn check_dims(&self, problem: &ControlProblem) -> Result<()> {
        if self.x.dim() != problem.state_dim || self.u.dim() != problem.control_dim {
            return Err(Error::InvalidInput(format!(
                "process dimensions ({}, {}) do not match problem ({}, {})",
                self.x.dim(),
                self.u.dim(),
                problem.state_dim,
                problem.control_dim
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v1(a: f64) -> Vector {
        Vector::from_element(1, a)
    }

    #[test]
    fn log_grid_nodes() {
        let g = make_grid(TimeMap::Log, 10).unwrap();
        assert_eq!(g.nodes()[0], 0.0);
        assert!((g.nodes()[5] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(g.len(), 10);
    }

    #[test]
    fn rational_grid_midpoint() {
        let g = make_grid(TimeMap::Rational, 10).unwrap();
        assert!((g.nodes()[5] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn small_grid_rejected() {
        assert!(matches!(make_grid(TimeMap::Log, 7), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn maps_invert() {
        for map in [TimeMap::Log, TimeMap::Rational] {
            for k in 0..50 {
                let s = k as f64 / 51.0;
                assert!((map.to_unit(map.to_time(s)) - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn norms_of_constant_and_decaying() {
        let g = make_grid(TimeMap::Log, 64).unwrap();
        let c = ConvergentFunction::constant(&g, v1(1.0));
        assert_eq!(clim_norms(&c).unwrap(), (1.0, 1.0));
        let e = ConvergentFunction::from_fn(&g, |t| v1((-t).exp()), v1(0.0));
        assert_eq!(clim_norms(&e).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn norm_ratio_three_witness() {
        let g = make_grid(TimeMap::Log, 64).unwrap();
        let x = ConvergentFunction::from_fn(&g, |t| v1((-t).exp() - 0.5), v1(-0.5));
        let (sup, split) = clim_norms(&x).unwrap();
        assert_eq!(sup, 0.5);
        assert_eq!(split, 1.5);
    }

    #[test]
    fn tail_tolerance_enforced() {
        let r = ConvergentFunction::from_samples(vec![0.0, 1.0], vec![v1(1.0), v1(0.5)], v1(0.0), 0.1);
        assert!(r.is_err());
        let ok = ConvergentFunction::from_samples(vec![0.0, 1.0], vec![v1(1.0), v1(0.05)], v1(0.0), 0.1).unwrap();
        assert_eq!(ok.eval(2.0)[0], 0.0);
        assert!((ok.eval(0.5)[0] - 0.525).abs() < 1e-15);
    }

    #[test]
    fn sampled_control_holds_left_value() {
        let u = ControlPath::from_samples(vec![0.0, 1.0, 2.0], vec![v1(1.0), v1(2.0), v1(3.0)], v1(3.0)).unwrap();
        assert_eq!(u.eval(0.99)[0], 1.0);
        assert_eq!(u.eval(1.0)[0], 2.0);
        assert_eq!(u.eval(7.0)[0], 3.0);
    }

    #[test]
    fn breakpoints_are_inserted_exactly() {
        let g = make_grid(TimeMap::Log, 16).unwrap().with_breakpoints(&[0.3, g_node()]);
        assert!(g.index_of(0.3).is_some());
        assert_eq!(g.nodes().iter().filter(|&&t| t == g_node()).count(), 1);
    }

    fn g_node() -> f64 {
        TimeMap::Log.to_time(0.5)
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, v) = golden_section(|s| -(s - 0.3) * (s - 0.3), -1.0, 2.0);
        assert!((x - 0.3).abs() < 1e-7);
        assert!(v.abs() < 1e-14);
    }

    #[test]
    fn box_maximization_refines_between_samples() {
        let set = ControlSet::interval(-20.0, 20.0, 4001);
        let best = set.maximize(&|u: &Vector| -(u[0] - 1.234567891).powi(2), None);
        assert!((best.argmax[0] - 1.234567891).abs() < 1e-7);
        assert!(!best.unbounded_warning);
    }

    #[test]
    fn unbounded_box_is_flagged() {
        let set = ControlSet::Box { lower: v1(-1.0), upper: v1(1.0), resolution: 11, unbounded: true };
        assert!(set.maximize(&|u: &Vector| u[0] * u[0], None).unbounded_warning);
    }

    #[test]
    fn jacobian_check_flags_wrong_gradient() {
        let good = ControlProblem::new("q", 1, 1)
            .cost(|_, x, u| 0.5 * (x[0] * x[0] + u[0] * u[0]), |_, x, _| x.clone());
        assert!(good.jacobian_check(3, 100).passes(1e-5));
        let bad = good.clone().cost(|_, x, _| x[0] * x[0], |_, x, _| x.clone());
        assert!(!bad.jacobian_check(3, 100).passes(1e-5));
    }

    #[test]
    fn validate_rejects_kind_mismatch() {
        let p = ControlProblem::new("p", 1, 1).terminal(|_, x| x.clone(), |_, _| Matrix::identity(1, 1), EndpointKind::Fixed);
        assert!(p.validate().is_ok());
        let mut q = p.clone();
        q.endpoint = EndpointKind::Free;
        assert!(q.validate().is_err());
        let r = ControlProblem::new("r", 1, 1).density(|t| (-t).exp(), 0.0);
        assert!(r.validate().is_err());
    }
}
