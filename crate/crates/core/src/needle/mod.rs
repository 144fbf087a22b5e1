//! Generalized needle variations built from step functions: nested, disjoint
//! sets `M_i(alpha)` with exact measure `alpha |K|`, the varied control and a
//! numerical check of the linearization error.

mod sets;

pub use sets::{q, q_ratio, IntervalUnion, Q};

use num_traits::Zero;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::linear_ode::{integrate_ivp, OdeOptions};
use crate::problem_model::{ControlPath, ControlProblem, Process, SemiInfiniteGrid, Vector};
use crate::quadrature::{integrate, QuadOptions};
use crate::report::ConditionEntry;

/// Piecewise-constant function: `values[k]` on `[breaks[k], breaks[k+1])`,
/// the last piece closed on the right.
#[derive(Clone, Debug)]
pub struct StepFunction {
    breaks: Vec<Q>,
    values: Vec<Vector>,
}

impl StepFunction {
    pub fn new(breaks: Vec<Q>, values: Vec<Vector>) -> Result<Self> {
        if values.is_empty() || breaks.len() != values.len() + 1 {
            return invalid("a step function needs one more break than values");
        }
        if breaks.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("step breaks must be strictly increasing");
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim || v.iter().any(|x| !x.is_finite())) {
            return invalid("step values must be finite with a common dimension");
        }
        Ok(StepFunction { breaks, values })
    }

    /// Samples `f` on each piece and rejects it unless it is constant there.
    pub fn from_fn(breaks: Vec<Q>, f: impl Fn(f64) -> Vector) -> Result<Self> {
        let mut values = Vec::with_capacity(breaks.len().saturating_sub(1));
        for w in breaks.windows(2) {
            let (a, b) = (sets::f(&w[0]), sets::f(&w[1]));
            let v = f(a);
            for s in [0.25, 0.5, 0.75, 0.999] {
                let t = a + s * (b - a);
                let scale = 1.0 + v.amax();
                if (f(t) - &v).amax() > 1e-12 * scale {
                    return Err(Error::Unsupported(format!("function is not constant on [{a}, {b}) (differs at t = {t})")));
                }
            }
            values.push(v);
        }
        Self::new(breaks, values)
    }

    /// Midpoint step approximation of `f` on `pieces` equal-measure slices of `k`.
    pub fn approximate(k: &IntervalUnion, pieces: usize, f: impl Fn(f64) -> Vector) -> Result<Self> {
        let (Some(start), Some(end)) = (k.start(), k.end()) else {
            return invalid("cannot approximate on an empty set");
        };
        if pieces == 0 {
            return invalid("need at least one piece");
        }
        let total = k.measure();
        let mut breaks = vec![start.clone()];
        for i in 1..pieces {
            let slice = k.slice_by_measure(&(&total * q_ratio(i as i64 - 1, pieces as i64)), &(&total * q_ratio(i as i64, pieces as i64)));
            if let Some(e) = slice.end() {
                if e > breaks.last().unwrap() && e < end {
                    breaks.push(e.clone());
                }
            }
        }
        breaks.push(end.clone());
        let values = breaks.windows(2).map(|w| f(0.5 * (sets::f(&w[0]) + sets::f(&w[1])))).collect();
        Self::new(breaks, values)
    }

    pub fn breaks(&self) -> &[Q] {
        &self.breaks
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Level sets `A_j = K ∩ [b_j, b_{j+1}]`.
    fn level_sets(&self, k: &IntervalUnion) -> Vec<IntervalUnion> {
        self.breaks
            .windows(2)
            .map(|w| k.intersect(&IntervalUnion::new(vec![(w[0].clone(), w[1].clone())]).expect("ordered")))
            .collect()
    }
}

/// One evaluation of the sup bound for a pair `alpha >= alpha_prime`.
#[derive(Clone, Debug, Serialize)]
pub struct SupBoundRow {
    pub direction: usize,
    pub alpha: f64,
    pub alpha_prime: f64,
    pub sup: f64,
    pub bound: f64,
    pub t: f64,
}

impl SupBoundRow {
    pub fn holds(&self) -> bool {
        self.sup <= self.bound * (1.0 + 1e-12)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SetExport {
    pub direction: usize,
    pub alpha: f64,
    pub intervals: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct NeedleFamily {
    pub k: IntervalUnion,
    pub y: StepFunction,
    /// Equal-measure subdivision `Delta_1..Delta_r` of `K`.
    pub partitions: Vec<IntervalUnion>,
    /// Nonempty `Delta_i ∩ A_j`.
    pub cells: Vec<IntervalUnion>,
    pub d: usize,
    pub delta: f64,
    pub c_norm: f64,
    /// Each `alpha_i` ranges over `[0, 1/d]`.
    pub simplex_radius: f64,
    pub sets: Vec<(usize, f64, IntervalUnion)>,
    pub sup_bound: Vec<SupBoundRow>,
}

fn check_alpha(alpha: f64, d: usize) -> Result<Q> {
    if !(alpha >= 0.0 && alpha * d as f64 <= 1.0) {
        return invalid(format!("alpha = {alpha} outside [0, 1/{d}]"));
    }
    q(alpha)
}

/// Builds `M_i(alpha)` for `i < d` and every `alpha` in `alphas`, together with
/// the sup-bound rows for every ordered pair of listed values.
pub fn build_variation_sets(k: &IntervalUnion, y: &StepFunction, delta: f64, d: usize, alphas: &[f64]) -> Result<NeedleFamily> {
    if k.is_empty() {
        return invalid("K is empty");
    }
    if d == 0 {
        return invalid("need at least one direction");
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return invalid("delta must be positive");
    }
    let hull = IntervalUnion::new(vec![(y.breaks[0].clone(), y.breaks.last().unwrap().clone())])?;
    if !k.is_subset(&hull) {
        return invalid("the step function does not cover K");
    }
    let alphas_q = alphas.iter().map(|&a| check_alpha(a, d)).collect::<Result<Vec<_>>>()?;

    let c_norm = y.sup_norm();
    let total = k.measure();
    let total_f = sets::f(&total);
    let mut r = if c_norm == 0.0 { 1 } else { ((total_f * 2.0 * c_norm / delta).ceil() as usize).max(1) };
    while c_norm > 0.0 && total_f / r as f64 > delta / (2.0 * c_norm) {
        r += 1;
    }
    let partitions: Vec<IntervalUnion> = (0..r)
        .map(|i| k.slice_by_measure(&(&total * q_ratio(i as i64, r as i64)), &(&total * q_ratio(i as i64 + 1, r as i64))))
        .collect();
    let levels = y.level_sets(k);
    let cells: Vec<IntervalUnion> =
        partitions.iter().flat_map(|p| levels.iter().map(move |a| p.intersect(a))).filter(|c| !c.is_empty()).collect();

    let mut family = NeedleFamily {
        k: k.clone(),
        y: y.clone(),
        partitions,
        cells,
        d,
        delta,
        c_norm,
        simplex_radius: 1.0 / d as f64,
        sets: Vec::new(),
        sup_bound: Vec::new(),
    };
    for i in 0..d {
        for (a, aq) in alphas.iter().zip(&alphas_q) {
            family.sets.push((i, *a, family.set_q(i, aq)));
        }
        for (a, aq) in alphas.iter().zip(&alphas_q) {
            for (b, bq) in alphas.iter().zip(&alphas_q) {
                if bq < aq {
                    let (sup, t) = family.sup_deviation(i, aq, bq);
                    family.sup_bound.push(SupBoundRow { direction: i, alpha: *a, alpha_prime: *b, sup, bound: delta * (a - b), t });
                }
            }
        }
    }
    Ok(family)
}

impl NeedleFamily {
    fn set_q(&self, i: usize, alpha: &Q) -> IntervalUnion {
        let lo = q_ratio(i as i64, self.d as i64);
        let hi = &lo + alpha;
        let raw = self
            .cells
            .iter()
            .flat_map(|c| {
                let m = c.measure();
                c.slice_by_measure(&(&lo * &m), &(&hi * &m)).pieces().to_vec()
            })
            .collect();
        IntervalUnion::new(raw).expect("cells are ordered")
    }

    /// `M_i(alpha)`.
    pub fn set(&self, i: usize, alpha: f64) -> Result<IntervalUnion> {
        if i >= self.d {
            return invalid(format!("direction {i} out of range (d = {})", self.d));
        }
        Ok(self.set_q(i, &check_alpha(alpha, self.d)?))
    }

    /// Exact evaluation of
    /// `sup_t |int_{[0,t] ∩ K} (chi_{M(a)} - chi_{M(b)}) y - (a - b) int_{[0,t] ∩ K} y|`.
    /// The integrand is piecewise linear in `t`, so the sup sits on an endpoint.
    fn sup_deviation(&self, i: usize, a: &Q, b: &Q) -> (f64, f64) {
        let ma = self.set_q(i, a);
        let mb = self.set_q(i, b);
        let mut events: Vec<Q> = self.k.endpoints();
        events.extend(ma.endpoints());
        events.extend(mb.endpoints());
        events.extend(self.y.breaks.iter().cloned());
        events.sort();
        events.dedup();
        let diff = a - b;
        let (mut in_k, mut in_a, mut in_b) = (Cursor::new(&self.k), Cursor::new(&ma), Cursor::new(&mb));
        let mut level = 0;
        let mut coeff = vec![Q::zero(); self.y.values.len()];
        let mut best = (0.0, 0.0);
        for w in events.windows(2) {
            let (lo, hi) = (&w[0], &w[1]);
            if !in_k.covers(lo, hi) {
                continue;
            }
            while &self.y.breaks[level + 1] <= lo {
                level += 1;
            }
            let mut rate = -&diff;
            if in_a.covers(lo, hi) {
                rate += Q::from_integer(1.into());
            }
            if in_b.covers(lo, hi) {
                rate -= Q::from_integer(1.into());
            }
            coeff[level] += rate * (hi - lo);
            let dev = coeff
                .iter()
                .zip(&self.y.values)
                .filter(|(c, _)| !c.is_zero())
                .fold(Vector::zeros(self.y.values[0].len()), |acc, (c, v)| acc + v * sets::f(c));
            let n = dev.norm();
            if n > best.0 {
                best = (n, sets::f(hi));
            }
        }
        best
    }

    pub fn export(&self) -> Vec<SetExport> {
        self.sets.iter().map(|(i, a, s)| SetExport { direction: *i, alpha: *a, intervals: s.to_f64() }).collect()
    }

    /// The construction guarantees every row; a violation signals a bug.
    pub fn sup_bound_holds(&self) -> bool {
        self.sup_bound.iter().all(SupBoundRow::holds)
    }
}

/// Forward-only membership test for a sorted sweep.
struct Cursor<'a> {
    pieces: &'a [(Q, Q)],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn new(set: &'a IntervalUnion) -> Self {
        Cursor { pieces: set.pieces(), at: 0 }
    }

    /// Whether `[lo, hi]` lies in the set; calls must move rightwards and
    /// `[lo, hi]` must not straddle an endpoint.
    fn covers(&mut self, lo: &Q, hi: &Q) -> bool {
        while self.at < self.pieces.len() && &self.pieces[self.at].1 <= lo {
            self.at += 1;
        }
        self.pieces.get(self.at).is_some_and(|(a, b)| a <= lo && hi <= b)
    }
}

/// `u_alpha = u* + sum_i chi_{M_i(alpha_i)} (u_i - u*)`, memberships half-open.
pub fn needle_control(
    grid: &SemiInfiniteGrid,
    u_star: &ControlPath,
    directions: &[ControlPath],
    family: &NeedleFamily,
    alpha: &[f64],
) -> Result<ControlPath> {
    if directions.len() != family.d || alpha.len() != family.d {
        return invalid(format!("expected {} directions and weights, got {} and {}", family.d, directions.len(), alpha.len()));
    }
    if directions.iter().any(|u| u.dim() != u_star.dim()) {
        return invalid("direction dimension differs from the candidate control");
    }
    let mut patches = Vec::with_capacity(family.d);
    let mut breaks: Vec<f64> = u_star.breakpoints().to_vec();
    for (i, &a) in alpha.iter().enumerate() {
        let s = family.set(i, a)?.to_f64();
        breaks.extend(s.iter().flat_map(|&(a, b)| [a, b]));
        breaks.extend_from_slice(directions[i].breakpoints());
        patches.push(s);
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let star = u_star.clone();
    let dirs = directions.to_vec();
    let eval = move |t: f64| {
        let mut u = star.eval(t);
        for (s, d) in patches.iter().zip(&dirs) {
            if s.iter().any(|&(a, b)| a <= t && t < b) {
                u = d.eval(t);
            }
        }
        u
    };
    Ok(ControlPath::from_fn(grid, eval, u_star.limit().clone(), breaks))
}

/// Linearization mismatch for one pair of simplex points, with the state held
/// at the candidate trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct GapReport {
    pub delta: f64,
    /// `sum_i |alpha_i - alpha'_i|`.
    pub alpha_distance: f64,
    /// `sup_t |(Phi_1 - Lambda_1)(alpha) - (Phi_1 - Lambda_1)(alpha')|`.
    pub phi1_gap: f64,
    pub phi1_t: f64,
    /// `|(Phi_2 - Lambda_2)(alpha) - (Phi_2 - Lambda_2)(alpha')|`.
    pub phi2_gap: f64,
    pub phi1_constant: f64,
    pub phi2_constant: f64,
    /// `sup |x_alpha - x*|` on `[0, max K]` for the perturbed trajectory.
    pub state_deviation: f64,
}

impl GapReport {
    pub fn entries(&self) -> Vec<ConditionEntry> {
        vec![
            ConditionEntry::new("needle_phi1_constant", self.phi1_constant, self.delta, Some(self.phi1_t)),
            ConditionEntry::new("needle_phi2_constant", self.phi2_constant, self.delta, None),
        ]
    }
}

/// Evaluates the dynamics and cost linearization errors of the needle pair
/// `(alpha, alpha_prime)` by quadrature between consecutive set endpoints. The
/// perturbed trajectory for `alpha` is integrated on `[0, max K]` and must stay
/// in the tube of radius `problem.gamma`.
pub fn variation_gap_check(
    problem: &ControlProblem,
    process: &Process,
    family: &NeedleFamily,
    directions: &[ControlPath],
    alpha: &[f64],
    alpha_prime: &[f64],
) -> Result<GapReport> {
    process.check_dims(problem)?;
    let n = problem.state_dim;
    let end = sets::f(family.k.end().expect("K is nonempty"));
    let nodes: Vec<f64> = process.times().iter().copied().filter(|&t| t <= end).collect();
    let grid = SemiInfiniteGrid::from_nodes(if nodes.is_empty() { vec![0.0] } else { nodes.clone() }, crate::TimeMap::Rational)?;
    let ua = needle_control(&grid, &process.u, directions, family, alpha)?;
    let ub = needle_control(&grid, &process.u, directions, family, alpha_prime)?;

    let mut events: Vec<f64> = nodes;
    events.extend(ua.breakpoints().iter().chain(ub.breakpoints()).chain(&problem.breakpoints).copied().filter(|&t| (0.0..=end).contains(&t)));
    events.extend(family.k.to_f64().iter().flat_map(|&(a, b)| [a, b]));
    events.push(0.0);
    events.push(end);
    events.sort_by(f64::total_cmp);
    events.dedup();

    let weights: Vec<f64> = alpha.iter().zip(alpha_prime).map(|(a, b)| a - b).collect();
    let alpha_distance: f64 = weights.iter().map(|w| w.abs()).sum();
    let k_f = family.k.to_f64();
    let in_k = |t: f64| k_f.iter().any(|&(a, b)| a <= t && t < b);

    // Component n is the discounted cost; 0..n are the dynamics.
    let integrand = |t: f64| -> Vector {
        let x = process.state(t);
        let us = process.u.eval(t);
        let om = (problem.omega)(t);
        let (va, vb) = (ua.eval(t), ub.eval(t));
        let mut g = Vector::zeros(n + 1);
        g.rows_mut(0, n).copy_from(&((problem.phi)(t, &x, &va) - (problem.phi)(t, &x, &vb)));
        g[n] = om * ((problem.f)(t, &x, &va) - (problem.f)(t, &x, &vb));
        if in_k(t) {
            let fs = (problem.f)(t, &x, &us);
            let ps = (problem.phi)(t, &x, &us);
            for (w, d) in weights.iter().zip(directions) {
                if *w != 0.0 {
                    let ui = d.eval(t);
                    let dp = (problem.phi)(t, &x, &ui) - &ps;
                    for c in 0..n {
                        g[c] -= w * dp[c];
                    }
                    g[n] -= w * om * ((problem.f)(t, &x, &ui) - fs);
                }
            }
        }
        g
    };

    let opts = QuadOptions { abs_tol: 1e-14, rel_tol: 1e-12, max_intervals: 200 };
    let mut running = Vector::zeros(n + 1);
    let mut phi1 = (0.0, 0.0);
    for w in events.windows(2) {
        for c in 0..=n {
            running[c] += integrate(&mut |t| integrand(t)[c], w[0], w[1], &[], opts);
        }
        let g = running.rows(0, n).norm();
        if g > phi1.0 {
            phi1 = (g, w[1]);
        }
    }
    let phi2_gap = running[n].abs();

    let rhs = |t: f64, x: &Vector| (problem.phi)(t, x, &ua.eval(t));
    let xs = integrate_ivp(&rhs, &process.state(0.0), &events, &events, &OdeOptions::default())?;
    let mut state_deviation = 0.0f64;
    for (t, x) in events.iter().zip(&xs) {
        let dist = (x - process.state(*t)).norm();
        if !(dist <= problem.gamma) {
            return Err(Error::RadiusExceeded { gamma: problem.gamma, distance: dist, t: *t });
        }
        state_deviation = state_deviation.max(dist);
    }

    let ratio = |g: f64| if alpha_distance > 0.0 { g / alpha_distance } else { 0.0 };
    Ok(GapReport {
        delta: family.delta,
        alpha_distance,
        phi1_gap: phi1.0,
        phi1_t: phi1.1,
        phi2_gap,
        phi1_constant: ratio(phi1.0),
        phi2_constant: ratio(phi2_gap),
        state_deviation,
    })
}

#[cfg(test)]
mod tests;
