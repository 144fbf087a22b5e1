//! Arrow-type sufficiency: concavity of the maximized Hamiltonian in the
//! state, convexity of the state constraints, the `Delta(T)` inequality and
//! the combined verdict.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adjoint::AdjointSolution;
use crate::error::{Error, Result};
use crate::pmp_verify::{AdmissibilityReport, NecessaryConditions};
use crate::problem_model::{ControlMax, ControlProblem, Process, Vector};
use crate::quadrature::{integrate, QuadOptions};
use crate::report::{ConditionEntry, Tolerances};

/// Midpoint tolerance for the concavity and convexity probes.
pub const PROBE_TOL: f64 = 1e-9;
/// Per-axis samples when maximizing over `U` inside the probes.
pub const PROBE_RESOLUTION: usize = 401;

/// `sup_{u in U} H(t, x, u, p, 1)`.
pub fn hamiltonian_sup(problem: &ControlProblem, t: f64, x: &Vector, p: &Vector, resolution: Option<usize>) -> ControlMax {
    problem.control_set.maximize(&|u: &Vector| problem.pontryagin(t, x, u, p, 1.0), resolution)
}

#[derive(Clone, Debug, Serialize)]
pub struct ConcavityProbe {
    pub samples: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Midpoint triples violating concavity of the maximized Hamiltonian.
    pub violations: usize,
    /// Largest `((H(a) + H(b))/2 - H(mid)) / (1 + (|H(a)| + |H(b)|)/2)`; negative when
    /// every sample is strictly concave.
    pub worst_violation: f64,
    pub worst_t: Option<f64>,
    /// Midpoint triples violating convexity of some `g_j`.
    pub convexity_violations: usize,
    pub worst_convexity: f64,
    /// Not computed: the probe uses midpoint inequalities only.
    pub worst_hessian_eigenvalue: Option<f64>,
    pub unbounded_warning: bool,
}

impl ConcavityProbe {
    pub fn concave(&self) -> bool {
        self.violations == 0
    }

    pub fn convex_constraints(&self) -> bool {
        self.convexity_violations == 0
    }
}

/// Random triples `(t, x_a, x_b)` with `x_a, x_b` in the `gamma` ball around
/// `x*(t)`; `t` is drawn from the process nodes. Sample `k` uses its own
/// stream `seed + k`, so the result does not depend on scheduling.
pub fn concavity_check(
    problem: &ControlProblem,
    adj: &AdjointSolution,
    process: &Process,
    gamma: f64,
    samples: usize,
    seed: u64,
) -> ConcavityProbe {
    let n = problem.state_dim;
    let times = process.times();
    let rows: Vec<(f64, f64, f64, bool)> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            let t = times[rng.random_range(0..times.len())];
            let centre = process.state(t);
            let mut ball = || {
                let d = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                let d = &d / d.norm().max(1e-12);
                &centre + d * (gamma * rng.random_range(0.0f64..1.0).powf(1.0 / n as f64))
            };
            let xa = ball();
            let xb = ball();
            let xm = (&xa + &xb) * 0.5;
            let p = adj.eval_right(t);
            let ha = hamiltonian_sup(problem, t, &xa, &p, Some(PROBE_RESOLUTION));
            let hb = hamiltonian_sup(problem, t, &xb, &p, Some(PROBE_RESOLUTION));
            let hm = hamiltonian_sup(problem, t, &xm, &p, Some(PROBE_RESOLUTION));
            let concave_gap = (0.5 * (ha.value + hb.value) - hm.value) / (1.0 + 0.5 * (ha.value.abs() + hb.value.abs()));
            // Gaps are measured relative to the values compared, so linear
            // constraints with large offsets do not trip on rounding.
            let convex_gap = problem
                .constraints
                .iter()
                .map(|c| {
                    let (ga, gb) = ((c.g)(t, &xa), (c.g)(t, &xb));
                    ((c.g)(t, &xm) - 0.5 * (ga + gb)) / (1.0 + 0.5 * (ga.abs() + gb.abs()))
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let warn = ha.unbounded_warning || hb.unbounded_warning || hm.unbounded_warning;
            (t, nan_to_inf(concave_gap), nan_to_inf(convex_gap), warn)
        })
        .collect();
    let mut probe = ConcavityProbe {
        samples,
        gamma,
        seed,
        violations: 0,
        worst_violation: f64::NEG_INFINITY,
        worst_t: None,
        convexity_violations: 0,
        worst_convexity: f64::NEG_INFINITY,
        worst_hessian_eigenvalue: None,
        unbounded_warning: false,
    };
    for (t, cg, vg, warn) in rows {
        if cg > PROBE_TOL {
            probe.violations += 1;
        }
        if cg > probe.worst_violation {
            probe.worst_violation = cg;
            probe.worst_t = Some(t);
        }
        if vg > PROBE_TOL {
            probe.convexity_violations += 1;
        }
        probe.worst_convexity = probe.worst_convexity.max(vg);
        probe.unbounded_warning |= warn;
    }
    probe
}

fn nan_to_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DeltaRow {
    #[serde(rename = "T")]
    pub t: f64,
    /// `int_0^T omega (f(x, u) - f(x*, u*)) dt`
    pub lhs: f64,
    /// `<p(T), x(T) - x*(T)> - <p(0), x(0) - x*(0)>`
    pub rhs: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DeltaTReport {
    pub rows: Vec<DeltaRow>,
    /// `sup ||x - x*||` over the nodes in `[0, max T]`.
    pub distance: f64,
    pub gamma: f64,
    /// `<p(0), x(0) - x*(0)>`
    pub initial_pairing: f64,
    /// `<p(inf), lim (x - x*)>`, checked on this alternative only.
    pub limit_pairing: f64,
    pub pass: bool,
}

/// `Delta(T) >= <p(T), x(T) - x*(T)> - <p(0), x(0) - x*(0)>` at each `T`.
pub fn delta_t_check(
    problem: &ControlProblem,
    star: &Process,
    alt: &Process,
    adj: &AdjointSolution,
    t_list: &[f64],
    gamma: f64,
    tol: &Tolerances,
) -> Result<DeltaTReport> {
    let t_max = t_list.iter().copied().fold(0.0, f64::max);
    if t_list.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return crate::error::invalid("T values must be finite and nonnegative");
    }
    let mut probe: Vec<f64> = star.times().iter().chain(alt.times()).copied().filter(|&t| t <= t_max).collect();
    probe.extend_from_slice(t_list);
    let mut distance = 0.0f64;
    for t in probe {
        let d = (alt.state(t) - star.state(t)).norm();
        if !(d <= gamma) {
            return Err(Error::RadiusExceeded { gamma, distance: d, t });
        }
        distance = distance.max(d);
    }

    let mut breaks = star.breakpoints();
    breaks.extend(alt.breakpoints());
    breaks.extend_from_slice(&problem.breakpoints);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut integrand = |t: f64| {
        let w = (problem.omega)(t);
        if w == 0.0 {
            return 0.0;
        }
        w * ((problem.f)(t, &alt.state(t), &alt.control(t)) - (problem.f)(t, &star.state(t), &star.control(t)))
    };
    let opts = QuadOptions { abs_tol: 1e-13, rel_tol: 1e-12, ..QuadOptions::default() };
    let initial_pairing = adj.eval(0.0).dot(&(alt.state(0.0) - star.state(0.0)));
    let mut sorted: Vec<f64> = t_list.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    let (mut acc, mut prev) = (0.0, 0.0);
    for &t in &sorted {
        acc += integrate(&mut integrand, prev, t, &breaks, opts);
        prev = t;
        let rhs = adj.eval(t).dot(&(alt.state(t) - star.state(t))) - initial_pairing;
        rows.push(DeltaRow { t, lhs: acc, rhs, margin: acc - rhs });
    }
    // Components with `p_i(inf) = 0` drop out even when the alternative diverges.
    let limit_pairing: f64 = (0..adj.p_limit.len())
        .filter(|&i| adj.p_limit[i] != 0.0)
        .map(|i| adj.p_limit[i] * (alt.x.limit()[i] - star.x.limit()[i]))
        .sum();
    let pass = rows.iter().all(|r| r.margin >= -(tol.abs + tol.rel * r.lhs.abs()));
    Ok(DeltaTReport { rows, distance, gamma, initial_pairing, limit_pairing, pass })
}

/// Sub-reports feeding [`arrow_verdict`]; every field must be present.
#[derive(Clone, Copy, Default)]
pub struct ArrowInputs<'a> {
    pub adjoint: Option<&'a AdjointSolution>,
    pub necessary: Option<&'a NecessaryConditions>,
    pub admissibility: Option<&'a AdmissibilityReport>,
    pub concavity: Option<&'a ConcavityProbe>,
    /// Alternative processes for the `Delta(T)` inequality and the sampled
    /// natural transversality.
    pub delta_t: Option<&'a [DeltaTReport]>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeSummary {
    pub samples: usize,
    pub violations: usize,
    pub worst: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ArrowVerdict {
    /// Necessary conditions in normal form.
    pub pmp: Vec<ConditionEntry>,
    pub piecewise_adjoint_valid: bool,
    pub concavity: ProbeSummary,
    pub convexity: ProbeSummary,
    #[serde(rename = "delta_T")]
    pub delta_t: Vec<DeltaRow>,
    /// Sub-verdicts in evaluation order.
    pub conditions: Vec<ConditionEntry>,
    pub gamma: f64,
    pub seed: u64,
    pub verdict: bool,
    pub notes: Vec<String>,
}

fn require<'a, T: ?Sized>(v: Option<&'a T>, what: &str) -> Result<&'a T> {
    v.ok_or_else(|| Error::IncompleteVerification(format!("missing {what} report")))
}

/// Strong local minimality test: every sub-check must pass.
pub fn arrow_verdict(inputs: &ArrowInputs<'_>, tol: &Tolerances) -> Result<ArrowVerdict> {
    let adj = require(inputs.adjoint, "adjoint")?;
    let nec = require(inputs.necessary, "necessary-condition")?;
    let adm = require(inputs.admissibility, "admissibility")?;
    let conc = require(inputs.concavity, "concavity")?;
    let deltas = require(inputs.delta_t, "Delta(T)")?;

    let mut notes = Vec::new();
    let mut conditions = Vec::new();
    let pmp = nec.entries();
    let pmp_pass = pmp.iter().all(|c| c.pass);
    conditions.push(ConditionEntry::new("pmp_conditions", if pmp_pass { 0.0 } else { 1.0 }, 0.0, None));
    conditions.push(ConditionEntry::new("normal_form", (adj.lambda0 - 1.0).abs(), 0.0, None));

    let jump_total: f64 = adj.jumps.iter().map(|j| j.jump.iter().map(|v| v.abs()).sum::<f64>()).sum();
    let measures_ok = adj.measures.iter().all(|m| m.validate().is_ok());
    let piecewise_adjoint_valid = jump_total.is_finite() && measures_ok;
    conditions.push(ConditionEntry::new("piecewise_adjoint", if piecewise_adjoint_valid { 0.0 } else { 1.0 }, 0.0, None));

    conditions.push(ConditionEntry::new("admissible", if adm.flags.adm { 0.0 } else { 1.0 }, 0.0, None));
    conditions.push(ConditionEntry::new("lipschitz_data", adm.jacobian.worst(), 1e-5, None));
    if !adm.flags.adm {
        notes.extend(adm.notes.iter().cloned());
    }

    conditions.push(ConditionEntry::new("hamiltonian_concavity", conc.violations as f64, 0.0, conc.worst_t));
    conditions.push(ConditionEntry::new("constraint_convexity", conc.convexity_violations as f64, 0.0, None));
    if conc.unbounded_warning {
        notes.push("maximized Hamiltonian grows with the control box; supremum may be unbounded".into());
    }
    conditions.push(nec.slackness.entry.clone());

    let init = deltas.iter().map(|d| d.initial_pairing.abs()).fold(0.0, f64::max);
    let lim = deltas.iter().map(|d| d.limit_pairing.abs()).fold(0.0, f64::max);
    conditions.push(ConditionEntry::new("natural_transversality_initial", init, tol.abs, Some(0.0)));
    conditions.push(ConditionEntry::new("natural_transversality_limit_sampled", lim, tol.abs, None));
    let worst_margin = deltas.iter().flat_map(|d| &d.rows).map(|r| (-r.margin).max(0.0)).fold(0.0, f64::max);
    let delta_ok = deltas.iter().all(|d| d.pass);
    conditions.push(ConditionEntry::new("delta_T_inequality", if delta_ok { 0.0 } else { worst_margin.max(f64::MIN_POSITIVE) }, 0.0, None));
    if deltas.is_empty() {
        notes.push("no alternative process supplied; natural transversality not sampled".into());
    }

    let verdict = conditions.iter().all(|c| c.pass);
    Ok(ArrowVerdict {
        pmp,
        piecewise_adjoint_valid,
        concavity: ProbeSummary { samples: conc.samples, violations: conc.violations, worst: conc.worst_violation },
        convexity: ProbeSummary { samples: conc.samples, violations: conc.convexity_violations, worst: conc.worst_convexity },
        delta_t: deltas.iter().flat_map(|d| d.rows.iter().cloned()).collect(),
        conditions,
        gamma: conc.gamma,
        seed: conc.seed,
        verdict,
        notes,
    })
}
