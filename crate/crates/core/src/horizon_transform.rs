//! Compactifying time change to `[0, 1)`, embedding of finite-horizon
//! problems, and the finite-horizon approximation counterexample.

use std::sync::Arc;

use serde::Serialize;

use crate::adjoint::{AdjointSolution, JumpRecord};
use crate::error::{invalid, Error, Result};
use crate::linear_ode::{integrate_ivp, OdeOptions, DEFAULT_EPS};
use crate::pmp_verify::{active_set, NecessaryConditions, ACTIVATION_TOL};
use crate::problem_model::{ControlProblem, Matrix, Process, SemiInfiniteGrid, TimeMap, Vector};
use crate::quadrature::{integrate, integrate_to_infinity, QuadOptions};
use crate::report::ConditionEntry;

type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Monotone bijection `s in [0, 1) -> t in [0, inf)` with speed `v = dt/ds`.
#[derive(Clone)]
pub enum HorizonMap {
    Standard(TimeMap),
    Custom { name: String, to_time: ScalarMap, speed: ScalarMap },
}

impl Default for HorizonMap {
    fn default() -> Self {
        HorizonMap::Standard(TimeMap::Log)
    }
}

impl std::fmt::Debug for HorizonMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HorizonMap::Standard(m) => write!(f, "{m:?}"),
            HorizonMap::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl HorizonMap {
    pub fn custom(
        name: impl Into<String>,
        to_time: impl Fn(f64) -> f64 + Send + Sync + 'static,
        speed: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        HorizonMap::Custom { name: name.into(), to_time: Arc::new(to_time), speed: Arc::new(speed) }
    }

    pub fn to_time(&self, s: f64) -> f64 {
        match self {
            HorizonMap::Standard(m) => m.to_time(s),
            HorizonMap::Custom { to_time, .. } => to_time(s),
        }
    }

    pub fn speed(&self, s: f64) -> f64 {
        match self {
            HorizonMap::Standard(m) => m.speed(s),
            HorizonMap::Custom { speed, .. } => speed(s),
        }
    }

    /// Inverse map; bisection for custom maps.
    pub fn to_unit(&self, t: f64) -> f64 {
        match self {
            HorizonMap::Standard(m) => m.to_unit(t),
            HorizonMap::Custom { to_time, .. } => {
                let (mut lo, mut hi) = (0.0, 1.0 - DEFAULT_EPS);
                if to_time(hi) <= t {
                    return hi;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if to_time(mid) < t {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    /// `t(0) = 0`, positive speed and strictly increasing values on a sample of `[0, 1 - eps]`.
    pub fn validate(&self, eps: f64) -> Result<()> {
        if self.to_time(0.0).abs() > 1e-14 {
            return invalid(format!("time map must start at 0, got t(0) = {}", self.to_time(0.0)));
        }
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=1000 {
            let s = (1.0 - eps) * k as f64 / 1000.0;
            let (t, v) = (self.to_time(s), self.speed(s));
            if !(v > 0.0) || !v.is_finite() {
                return invalid(format!("time map speed {v} is not positive at s = {s}"));
            }
            if !(t > prev) {
                return invalid(format!("time map is not increasing at s = {s}"));
            }
            prev = t;
        }
        Ok(())
    }
}

/// Problem in the unit variable: `y' = v(s) phi(t(s), y, w)`, `t' = v(s)`.
#[derive(Clone, Debug)]
pub struct TransformedProblem {
    pub base: ControlProblem,
    pub map: HorizonMap,
    pub eps: f64,
}

/// Rejects maps that are not monotone with positive speed.
pub fn to_finite(problem: &ControlProblem, map: HorizonMap) -> Result<TransformedProblem> {
    map.validate(DEFAULT_EPS)?;
    Ok(TransformedProblem { base: problem.clone(), map, eps: DEFAULT_EPS })
}

impl TransformedProblem {
    /// Right-hand side of the augmented state `(t, y)`.
    pub fn rhs(&self, s: f64, z: &Vector, w: &Vector) -> Vector {
        let n = self.base.state_dim;
        let v = self.map.speed(s);
        let y = z.rows(1, n).into_owned();
        let dy = (self.base.phi)(z[0], &y, w) * v;
        let mut out = Vector::zeros(n + 1);
        out[0] = v;
        out.rows_mut(1, n).copy_from(&dy);
        out
    }

    /// Integrates the transformed system under `w(s) = u(t(s))` and returns
    /// `(t(s_k), y(s_k))`; `s_out` must lie in `[0, 1 - eps]`.
    pub fn integrate(
        &self,
        x0: &Vector,
        control: &(dyn Fn(f64) -> Vector + Sync),
        control_breaks: &[f64],
        s_out: &[f64],
    ) -> Result<Vec<(f64, Vector)>> {
        if s_out.iter().any(|&s| !(0.0..=1.0 - self.eps).contains(&s)) {
            return invalid(format!("transformed integration is limited to s <= 1 - {}", self.eps));
        }
        let n = self.base.state_dim;
        let mut z0 = Vector::zeros(n + 1);
        z0.rows_mut(1, n).copy_from(x0);
        let breaks: Vec<f64> = control_breaks.iter().map(|&t| self.map.to_unit(t)).collect();
        let rhs = |s: f64, z: &Vector| self.rhs(s, z, &control(self.map.to_time(s)));
        let zs = integrate_ivp(&rhs, &z0, s_out, &breaks, &OdeOptions::tight())?;
        Ok(zs.into_iter().map(|z| (z[0], z.rows(1, n).into_owned())).collect())
    }
}

/// Sup over `s_out` of the distance between the transformed-integrated state
/// and a direct integration in `t` under the same control.
pub fn round_trip_error(tp: &TransformedProblem, process: &Process, s_out: &[f64]) -> Result<f64> {
    let breaks = process.breakpoints();
    let u = |t: f64| process.control(t);
    let x0 = process.state(0.0);
    let pulled = tp.integrate(&x0, &u, &breaks, s_out)?;
    let t_out: Vec<f64> = s_out.iter().map(|&s| tp.map.to_time(s)).collect();
    let phi = &tp.base.phi;
    let direct = integrate_ivp(&|t: f64, x: &Vector| phi(t, x, &u(t)), &x0, &t_out, &breaks, &OdeOptions::tight())?;
    let mut worst = 0.0f64;
    for (((tc, y), x), &t) in pulled.iter().zip(&direct).zip(&t_out) {
        worst = worst.max((y - x).amax()).max((tc - t).abs() / t.max(1.0));
    }
    Ok(worst)
}

/// Finite-horizon problem on `[t0, t1]`. The `problem` carries `f`, `phi`,
/// `h0`, `h1` (ignoring its `t` argument) and the constraints; its density is
/// replaced by the indicator of `[t0, t1]`.
#[derive(Clone, Debug)]
pub struct FiniteProblem {
    pub problem: ControlProblem,
    pub t0: f64,
    pub t1: f64,
}

/// `[t0, t1)`: at `t1` itself the data already vanish, so the maximum
/// condition there is read with `p(t1+)` against a zero Hamiltonian.
fn inside(t: f64, t0: f64, t1: f64) -> bool {
    t >= t0 && t < t1
}

/// Infinite-horizon form: `f`, `phi` vanish outside `[t0, t1)`, `omega` is the
/// indicator, and each `g_j` is frozen at the nearer endpoint and relaxed by
/// `1 - e^{(t - t_e)^2} <= 0` away from it.
pub fn embed_finite(finite: &FiniteProblem) -> Result<ControlProblem> {
    let (t0, t1) = (finite.t0, finite.t1);
    if !(t0 < t1) || !t0.is_finite() || !t1.is_finite() || t0 < 0.0 {
        return invalid(format!("finite horizon needs 0 <= t0 < t1, got [{t0}, {t1}]"));
    }
    let base = &finite.problem;
    let n = base.state_dim;
    let mut out = base.clone();
    out.name = format!("{}_embedded", base.name);
    let (f, fx, phi, phix) = (base.f.clone(), base.f_x.clone(), base.phi.clone(), base.phi_x.clone());
    out.f = Arc::new(move |t, x, u| if inside(t, t0, t1) { f(t, x, u) } else { 0.0 });
    out.f_x = Arc::new(move |t, x, u| if inside(t, t0, t1) { fx(t, x, u) } else { Vector::zeros(n) });
    out.phi = Arc::new(move |t, x, u| if inside(t, t0, t1) { phi(t, x, u) } else { Vector::zeros(n) });
    out.phi_x = Arc::new(move |t, x, u| if inside(t, t0, t1) { phix(t, x, u) } else { Matrix::zeros(n, n) });
    out.omega = Arc::new(move |t| if inside(t, t0, t1) { 1.0 } else { 0.0 });
    out.omega_l1 = t1 - t0;
    for c in &mut out.constraints {
        let (g, gx) = (c.g.clone(), c.g_x.clone());
        c.g = Arc::new(move |t, x| {
            let (te, x_part) = if t < t0 {
                (t0, g(t0, x))
            } else if t > t1 {
                (t1, g(t1, x))
            } else {
                return g(t, x);
            };
            x_part + (1.0 - ((t - te) * (t - te)).exp())
        });
        c.g_x = Arc::new(move |t, x| gx(t.clamp(t0, t1), x));
    }
    let mut b = base.breakpoints.clone();
    b.extend([t0, t1].into_iter().filter(|&t| t > 0.0));
    b.sort_by(f64::total_cmp);
    b.dedup();
    out.breakpoints = b;
    Ok(out)
}

/// Finite-horizon maximum principle read off an embedded verification.
#[derive(Clone, Debug, Serialize)]
pub struct ClassicalReadout {
    pub t0: f64,
    pub t1: f64,
    /// Adjoint-equation residual on `[t0, t1]`.
    pub adjoint_equation: ConditionEntry,
    /// `|p'|` outside `[t0, t1]`.
    pub constant_outside: ConditionEntry,
    /// `p(t0) = h0'^T l0`.
    pub initial: ConditionEntry,
    /// `p(t1) = -h1'^T l1 - sum_j g_jx mu_j({t1})`.
    pub terminal: ConditionEntry,
    /// `p(t1+)` against the limit of `p` at infinity.
    pub limit_match: ConditionEntry,
    pub maximum_condition: ConditionEntry,
    /// Jumps at `t1`: `p(t1+) - p(t1) = sum_j g_jx mu_j({t1})`.
    pub jumps: Vec<JumpRecord>,
    pub jump_identity: ConditionEntry,
    /// Active sets of the embedded constraints restricted to `[t0, t1]` agree
    /// with those of the original constraints.
    pub active_sets_agree: bool,
    pub pass: bool,
}

/// Restricts an embedded run to `[t0, t1]`.
pub fn classical_pmp_readout(
    finite: &FiniteProblem,
    embedded: &ControlProblem,
    process: &Process,
    adj: &AdjointSolution,
    grid: &SemiInfiniteGrid,
    necessary: Option<&NecessaryConditions>,
) -> Result<ClassicalReadout> {
    let nec = necessary.ok_or_else(|| Error::IncompleteVerification("classical readout needs an embedded verification run".into()))?;
    let (t0, t1) = (finite.t0, finite.t1);
    let nodes = grid.nodes();
    let tol = 1e-9;

    let mut inner = (0.0f64, None);
    let mut outer = (0.0f64, None);
    for (k, &t) in nodes.iter().enumerate() {
        let r = nec.residual.per_node.get(k).copied().unwrap_or(0.0);
        let slot = if t >= t0 && t < t1 { &mut inner } else { &mut outer };
        if r > slot.0 || slot.1.is_none() {
            *slot = (r, Some(t));
        }
    }
    // Beyond the last node the adjoint must equal its limit.
    let tail = (adj.eval(grid.last()) - &adj.p_limit).amax();
    if tail > outer.0 {
        outer = (tail, Some(grid.last()));
    }

    let x1 = process.state(t1);
    let mut expected = Vector::zeros(embedded.state_dim);
    if let Some(h1) = &embedded.h1 {
        let l1 = if adj.l1.is_empty() { Vector::from_column_slice(&nec.transversality.l1) } else { adj.l1.clone() };
        if l1.len() == (h1.map)(t1, &x1).len() {
            expected -= (h1.jac)(t1, &x1).tr_mul(&l1);
        }
    }
    let jumps: Vec<JumpRecord> = adj.jumps.iter().filter(|j| (j.time - t1).abs() <= 1e-9 * t1.max(1.0)).cloned().collect();
    let mut jump_sum = Vector::zeros(embedded.state_dim);
    for j in &jumps {
        jump_sum += Vector::from_column_slice(&j.jump);
    }
    let p_t1 = adj.eval(t1);
    let p_t1_right = adj.eval_right(t1);
    let terminal = ConditionEntry::new("classical_terminal", (&p_t1 - (&expected - &jump_sum)).amax(), 1e-8, Some(t1));
    let jump_identity = ConditionEntry::new("classical_jump", (&p_t1_right - &p_t1 - &jump_sum).amax(), 1e-8, Some(t1));
    let limit_match = ConditionEntry::new("terminal_limit_match", (&p_t1_right - &adj.p_limit).amax(), 1e-8, Some(t1));

    let mut maxc = (0.0f64, None);
    for (k, &t) in nodes.iter().enumerate() {
        if t >= t0 && t < t1 {
            let g = nec.max_condition.gaps[k];
            if g > maxc.0 || maxc.1.is_none() {
                maxc = (g, Some(t));
            }
        }
    }

    let mut active_sets_agree = true;
    for j in 0..embedded.constraints.len() {
        let emb = active_set(embedded, process, j, ACTIVATION_TOL)?;
        let orig = &finite.problem.constraints[j];
        for &t in nodes.iter().filter(|&&t| t >= t0 && t <= t1) {
            let a = (orig.g)(t, &process.state(t)).abs() <= ACTIVATION_TOL;
            if a != emb.contains(t) {
                active_sets_agree = false;
            }
        }
    }

    let adjoint_equation = ConditionEntry::new("classical_adjoint_equation", inner.0, nec.residual.ode.tolerance, inner.1);
    let constant_outside = ConditionEntry::new("adjoint_constant_outside", outer.0, tol, outer.1);
    let initial = ConditionEntry { name: "classical_initial".into(), ..nec.transversality.initial.clone() };
    let maximum_condition = ConditionEntry::new("classical_maximum_condition", maxc.0, nec.max_condition.entry.tolerance, maxc.1);
    let pass = [&adjoint_equation, &constant_outside, &initial, &terminal, &limit_match, &maximum_condition, &jump_identity]
        .iter()
        .all(|c| c.pass)
        && active_sets_agree;
    Ok(ClassicalReadout {
        t0,
        t1,
        adjoint_equation,
        constant_outside,
        initial,
        terminal,
        limit_match,
        maximum_condition,
        jumps,
        jump_identity,
        active_sets_agree,
        pass,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PathologyRow {
    #[serde(rename = "T")]
    pub t: f64,
    pub tau: f64,
    #[serde(rename = "J_T")]
    pub j_t: f64,
    #[serde(rename = "J_infinite_of_T_process")]
    pub j_infinite: f64,
    #[serde(rename = "J_limit_process")]
    pub j_limit: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PathologyTable {
    pub rho: f64,
    pub x0: f64,
    pub rows: Vec<PathologyRow>,
    /// Every finite-horizon optimum scores strictly more than the limit process.
    pub limit_not_optimal: bool,
}

/// Finite-horizon optimal switching time `tau(T) = T + ln(1 - rho)/rho`.
pub fn switching_time_finite(rho: f64, t: f64) -> f64 {
    t + (1.0 - rho).ln() / rho
}

/// For `J_T = int_0^T e^{-rho t} (1 - u) x dt -> sup`, `x' = u x`, `u in [0, 1]`:
/// the `T`-optimal bang-bang process, its finite and infinite-horizon values,
/// and the value of the pointwise limit `u = 1` (all by quadrature).
pub fn pathology_demo(rho: f64, x0: f64, t_list: &[f64]) -> Result<PathologyTable> {
    if !(rho > 0.0 && rho < 1.0) {
        return invalid(format!("rho must lie in (0, 1), got {rho}"));
    }
    if t_list.is_empty() || t_list.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid("T list must be nonempty and strictly increasing");
    }
    let opts = QuadOptions { abs_tol: 1e-13, rel_tol: 1e-12, ..QuadOptions::default() };
    let mut rows = Vec::new();
    for &t_hor in t_list {
        let tau = switching_time_finite(rho, t_hor);
        if !(tau > 0.0) {
            return Err(Error::HorizonTooShort { horizon: t_hor, tau });
        }
        let u = move |t: f64| if t < tau { 1.0 } else { 0.0 };
        let x = move |t: f64| x0 * t.min(tau).exp();
        let mut integrand = |t: f64| (-rho * t).exp() * (1.0 - u(t)) * x(t);
        let j_t = integrate(&mut integrand, 0.0, t_hor, &[tau], opts);
        let j_infinite = integrate_to_infinity(&mut integrand, 0.0, &[tau], opts);
        let mut limit = |t: f64| (-rho * t).exp() * (1.0 - 1.0) * x0 * t.exp();
        let j_limit = integrate(&mut limit, 0.0, t_hor, &[], opts);
        rows.push(PathologyRow { t: t_hor, tau, j_t, j_infinite, j_limit });
    }
    let limit_not_optimal = rows.iter().all(|r| r.j_t > r.j_limit);
    Ok(PathologyTable { rho, x0, rows, limit_not_optimal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem_model::{make_grid, ControlPath, ConvergentFunction};

    fn v1(a: f64) -> Vector {
        Vector::from_element(1, a)
    }

    #[test]
    fn zero_dynamics_keep_state() {
        let g = make_grid(TimeMap::Log, 16).unwrap();
        let tp = to_finite(&ControlProblem::new("z", 1, 1), HorizonMap::default()).unwrap();
        let out = tp.integrate(&v1(3.0), &|_| v1(0.0), &[], &[0.0, 0.5, 0.9]).unwrap();
        for ((t, y), s) in out.iter().zip([0.0, 0.5, 0.9]) {
            assert_eq!(y[0], 3.0);
            assert!((t - TimeMap::Log.to_time(s)).abs() < 1e-10);
        }
        let pr = Process::new(ConvergentFunction::constant(&g, v1(1.0)), ControlPath::constant(&g, v1(0.0)));
        assert!(round_trip_error(&tp, &pr, &[0.0, 0.5]).unwrap() < 1e-12);
    }

    #[test]
    fn non_monotone_map_rejected() {
        let bad = HorizonMap::custom("bad", |s| (6.0 * s).sin(), |s| 6.0 * (6.0 * s).cos());
        assert!(to_finite(&ControlProblem::new("z", 1, 1), bad).is_err());
        let ok = HorizonMap::custom("tan", |s: f64| (std::f64::consts::FRAC_PI_2 * s).tan(), |s: f64| {
            std::f64::consts::FRAC_PI_2 / (std::f64::consts::FRAC_PI_2 * s).cos().powi(2)
        });
        assert!(to_finite(&ControlProblem::new("z", 1, 1), ok.clone()).is_ok());
        assert!((ok.to_time(ok.to_unit(3.0)) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn extension_is_continuous_and_relaxing() {
        let fp = FiniteProblem {
            problem: ControlProblem::new("c", 1, 1).constraint("x", |_, x| x[0] - 0.5, |_, _| v1(1.0)),
            t0: 0.0,
            t1: 1.0,
        };
        let e = embed_finite(&fp).unwrap();
        let g = &e.constraints[0].g;
        let x = v1(0.7);
        assert_eq!(g(1.0, &x), 0.7 - 0.5);
        assert!((g(1.0 + 1e-9, &x) - 0.2).abs() < 1e-12);
        assert!((g(2.0, &x) - (0.2 + 1.0 - 1f64.exp())).abs() < 1e-14);
        assert!(embed_finite(&FiniteProblem { t0: 1.0, t1: 1.0, ..fp }).is_err());
    }

    #[test]
    fn pathology_shift_is_constant() {
        let tab = pathology_demo(0.5, 1.0, &[5.0, 10.0, 20.0]).unwrap();
        for r in &tab.rows {
            assert!((r.tau - r.t - (0.5f64).ln() / 0.5).abs() <= 4.0 * f64::EPSILON * r.t);
            assert_eq!(r.j_limit, 0.0);
        }
        assert!(tab.limit_not_optimal);
        assert!(matches!(pathology_demo(0.5, 1.0, &[1.0]), Err(Error::HorizonTooShort { .. })));
    }
}
