//! Maximum condition, admissibility-class proxies, active sets and
//! complementary slackness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adjoint::{
    adjoint_residual, far_horizon, nontriviality_check, transversality_check, AdjointSolution, NontrivialityReport,
    ResidualReport, TransversalityReport,
};
use crate::error::{invalid, Result};
use crate::problem_model::{AdmissibilityFlags, ControlProblem, JacobianReport, Process, SemiInfiniteGrid, Vector};
use crate::quadrature::{tail_certificate, Certificate, CertificateOptions};
use crate::report::{ConditionEntry, Tolerances};

/// `|g_j| <= ACTIVATION_TOL` counts as active.
pub const ACTIVATION_TOL: f64 = 1e-7;
/// Relative error allowed between analytic and finite-difference Jacobians.
const JACOBIAN_TOL: f64 = 1e-5;

/// `H(t, x, u, p, lambda0) = -lambda0 omega f + <p, phi>`.
pub fn pontryagin_function(problem: &ControlProblem) -> impl Fn(f64, &Vector, &Vector, &Vector, f64) -> f64 + Sync + '_ {
    move |t, x, u, p, lambda0| problem.pontryagin(t, x, u, p, lambda0)
}

#[derive(Clone, Debug, Serialize)]
pub struct MaxConditionReport {
    /// Worst `gap / (1 + |H(u*)|)` against the relative tolerance.
    pub entry: ConditionEntry,
    /// Largest raw gap `max_U H - H(u*)`.
    pub max_gap: f64,
    pub gaps: Vec<f64>,
    pub unbounded_warning: bool,
}

/// Node-wise `max_{u in U} H - H(u*)`. At jump times the right limit of `p`
/// is used, matching the right-continuous control.
pub fn max_condition_check(
    problem: &ControlProblem,
    process: &Process,
    adj: &AdjointSolution,
    grid: &SemiInfiniteGrid,
    tol: &Tolerances,
    resolution: Option<usize>,
) -> MaxConditionReport {
    let rows: Vec<(f64, f64, bool)> = grid
        .nodes()
        .par_iter()
        .map(|&t| {
            let x = process.state(t);
            let us = process.control(t);
            let p = adj.eval_right(t);
            let h_star = problem.pontryagin(t, &x, &us, &p, adj.lambda0);
            let best = problem.control_set.maximize(&|u: &Vector| problem.pontryagin(t, &x, u, &p, adj.lambda0), resolution);
            let gap = (best.value - h_star).max(0.0);
            let gap = if gap.is_nan() || h_star.is_nan() { f64::INFINITY } else { gap };
            (gap, gap / (1.0 + h_star.abs()), best.unbounded_warning)
        })
        .collect();
    let mut worst = (0.0, None);
    let mut max_gap = 0.0f64;
    for (&t, &(gap, scaled, _)) in grid.nodes().iter().zip(&rows) {
        max_gap = max_gap.max(gap);
        if scaled > worst.0 || worst.1.is_none() {
            worst = (scaled, Some(t));
        }
    }
    MaxConditionReport {
        entry: ConditionEntry::new("maximum_condition", worst.0, tol.rel, worst.1),
        max_gap,
        gaps: rows.iter().map(|r| r.0).collect(),
        unbounded_warning: rows.iter().any(|r| r.2),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdmissibilityOptions {
    pub seed: u64,
    /// Perturbation pairs for the sampled remainder condition.
    pub pairs: usize,
    /// Tube samples for the Jacobian check.
    pub jacobian_samples: usize,
    pub tol: Tolerances,
    pub certificate: CertificateOptions,
}

impl Default for AdmissibilityOptions {
    fn default() -> Self {
        AdmissibilityOptions {
            seed: 0,
            pairs: 20,
            jacobian_samples: 40,
            tol: Tolerances::default(),
            certificate: CertificateOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AdmissibilityReport {
    pub flags: AdmissibilityFlags,
    pub phi_certificate: Certificate,
    pub phi_x_certificate: Certificate,
    pub cost_certificate: Certificate,
    /// Summability verdict per sampled perturbation pair.
    pub remainder_pairs: Vec<bool>,
    pub jacobian: JacobianReport,
    pub gamma: f64,
    pub seed: u64,
    /// Reasons for `adm = false`.
    pub notes: Vec<String>,
}

/// Bounded perturbation `theta(t) = a (1 - e^{-k t}) + b e^{-k t}` with `|a|, |b| <= 1/2`.
fn perturbation(rng: &mut ChaCha8Rng, n: usize) -> impl Fn(f64) -> Vector + Sync + Send {
    let unit = |rng: &mut ChaCha8Rng| {
        let v = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let norm = v.norm().max(1e-12);
        v * (0.5 * rng.random_range(0.0..1.0) / norm)
    };
    let a = unit(rng);
    let b = unit(rng);
    let k = rng.random_range(0.2..3.0);
    move |t: f64| {
        let w = (-k * t).exp();
        &a * (1.0 - w) + &b * w
    }
}

/// Flags `adm`, `lim_cond1`, `lim_cond2`, `lip` for the process.
///
/// `lim_cond2` is a sampled proxy: for each pair `xi, xi'` in the `gamma`
/// tube the remainder `|phi(xi) - phi(xi') - phi_x(x*)(xi - xi')|` must pass
/// the tail certificate.
pub fn admissibility_class_check(
    problem: &ControlProblem,
    process: &Process,
    opts: &AdmissibilityOptions,
) -> AdmissibilityReport {
    let n = problem.state_dim;
    let gamma = problem.gamma;
    let breaks = {
        let mut b = process.breakpoints();
        b.extend_from_slice(&problem.breakpoints);
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    };
    let cert = |f: &mut dyn FnMut(f64) -> f64| tail_certificate(f, &breaks, opts.certificate);
    let phi_certificate = cert(&mut |t| (problem.phi)(t, &process.state(t), &process.control(t)).norm());
    let phi_x_certificate = cert(&mut |t| (problem.phi_x)(t, &process.state(t), &process.control(t)).norm());
    let cost_certificate =
        cert(&mut |t| ((problem.omega)(t) * (problem.f)(t, &process.state(t), &process.control(t))).abs());

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let pairs: Vec<_> = (0..opts.pairs).map(|_| (perturbation(&mut rng, n), perturbation(&mut rng, n))).collect();
    let remainder_pairs: Vec<bool> = pairs
        .par_iter()
        .map(|(ta, tb)| {
            let mut r = |t: f64| {
                let xs = process.state(t);
                let u = process.control(t);
                let xa = &xs + ta(t) * gamma;
                let xb = &xs + tb(t) * gamma;
                let lin = (problem.phi_x)(t, &xs, &u) * (&xa - &xb);
                ((problem.phi)(t, &xa, &u) - (problem.phi)(t, &xb, &u) - lin).norm()
            };
            tail_certificate(&mut r, &breaks, opts.certificate).summable
        })
        .collect();

    let times = process.times();
    let samples: Vec<(f64, Vector, Vector)> = (0..opts.jacobian_samples)
        .map(|_| {
            let t = times[rng.random_range(0..times.len())];
            let dir = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let dir = &dir / dir.norm().max(1e-12);
            let x = process.state(t) + dir * (gamma * rng.random_range(0.0..1.0));
            (t, x, process.control(t))
        })
        .collect();
    let jacobian = problem.jacobian_check_at(&samples);

    let mut notes = Vec::new();
    let tol = opts.tol;
    let far = far_horizon();
    let x_lim = process.x.limit();
    for (j, c) in problem.constraints.iter().enumerate() {
        let worst = times
            .iter()
            .map(|&t| ((c.g)(t, &process.state(t)), t))
            .chain(std::iter::once(((c.g)(far, x_lim), f64::INFINITY)))
            .fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 || b.0.is_nan() { b } else { a });
        if !(worst.0 <= tol.abs) {
            notes.push(format!("constraint {} ({}) violated: g = {:.6e} at t = {}", j + 1, c.name, worst.0, worst.1));
        }
    }
    if let Some(h0) = &problem.h0 {
        let r = (h0.map)(&process.state(0.0)).amax();
        if !(r <= tol.abs) {
            notes.push(format!("initial condition violated by {r:.6e}"));
        }
    }
    if let Some(h1) = &problem.h1 {
        let r = (h1.map)(far, x_lim).amax();
        if !(r <= tol.abs) {
            notes.push(format!("terminal condition at infinity violated by {r:.6e}"));
        }
    }
    if !cost_certificate.summable {
        notes.push("cost integral does not pass the summability certificate".into());
    }
    if let Some(t) = process.control_violation(&problem.control_set, 1e-9) {
        notes.push(format!("control leaves U at t = {t}"));
    }

    AdmissibilityReport {
        flags: AdmissibilityFlags {
            adm: notes.is_empty(),
            lim_cond1: phi_certificate.summable && phi_x_certificate.summable,
            lim_cond2: remainder_pairs.iter().all(|&b| b),
            lip: jacobian.passes(JACOBIAN_TOL),
        },
        phi_certificate,
        phi_x_certificate,
        cost_certificate,
        remainder_pairs,
        jacobian,
        gamma,
        seed: opts.seed,
        notes,
    }
}

/// Grid times where constraint `j` (0-based) is active, and whether it is active at infinity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActiveSet {
    pub times: Vec<f64>,
    pub infinity: bool,
}

impl ActiveSet {
    pub fn is_empty(&self) -> bool {
        self.times.is_empty() && !self.infinity
    }

    pub fn contains(&self, t: f64) -> bool {
        if t.is_infinite() {
            return self.infinity;
        }
        self.times.iter().any(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
    }
}

pub fn active_set(problem: &ControlProblem, process: &Process, j: usize, tol: f64) -> Result<ActiveSet> {
    let Some(c) = problem.constraints.get(j) else {
        return invalid(format!("constraint index {j} out of range ({} constraints)", problem.constraints.len()));
    };
    let times = process.times().iter().copied().filter(|&t| (c.g)(t, &process.state(t)).abs() <= tol).collect();
    let infinity = (c.g)(far_horizon(), process.x.limit()).abs() <= tol;
    Ok(ActiveSet { times, infinity })
}

#[derive(Clone, Debug, Serialize)]
pub struct SlacknessViolation {
    pub constraint: usize,
    /// `None` for the point at infinity.
    pub t: Option<f64>,
    pub g: f64,
    pub mass: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SlacknessReport {
    /// Worst `|g_j|` over the support of the measures.
    pub entry: ConditionEntry,
    pub violations: Vec<SlacknessViolation>,
}

/// Every atom, every node with positive density and the mass at infinity must
/// sit where the constraint is active.
pub fn slackness_check(adj: &AdjointSolution, problem: &ControlProblem, process: &Process, tol: f64) -> SlacknessReport {
    let mut violations = Vec::new();
    let mut worst = (0.0f64, None);
    let far = far_horizon();
    for (j, (mu, c)) in adj.measures.iter().zip(&problem.constraints).enumerate() {
        let mut support: Vec<(Option<f64>, f64)> = mu.atoms.iter().filter(|a| a.mass > 0.0).map(|a| (Some(a.time), a.mass)).collect();
        if mu.has_density() {
            support.extend(process.times().iter().map(|&t| (Some(t), mu.density(t))).filter(|(_, d)| *d > 0.0));
        }
        if mu.at_infinity > 0.0 {
            support.push((None, mu.at_infinity));
        }
        for (t, mass) in support {
            let g = match t {
                Some(t) => (c.g)(t, &process.state(t)),
                None => (c.g)(far, process.x.limit()),
            };
            let r = if g.is_nan() { f64::INFINITY } else { g.abs() };
            if r > worst.0 {
                worst = (r, t.or(Some(f64::INFINITY)));
            }
            if !(r <= tol) {
                violations.push(SlacknessViolation { constraint: j, t, g, mass });
            }
        }
    }
    SlacknessReport { entry: ConditionEntry::new("complementary_slackness", worst.0, tol, worst.1), violations }
}

#[derive(Clone, Debug, Serialize)]
pub struct WorstViolation {
    pub t: Option<f64>,
    pub condition: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridMeta {
    pub nodes: usize,
    pub first: f64,
    pub last: f64,
    pub map: String,
}

/// Serializable verdict: one entry per checked condition.
#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub scenario: String,
    pub conditions: Vec<ConditionEntry>,
    pub flags: Option<AdmissibilityFlags>,
    pub worst: Option<WorstViolation>,
    pub grid: Option<GridMeta>,
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn new(scenario: impl Into<String>, grid: Option<&SemiInfiniteGrid>) -> Self {
        VerificationReport {
            scenario: scenario.into(),
            conditions: Vec::new(),
            flags: None,
            worst: None,
            grid: grid.map(|g| GridMeta { nodes: g.len(), first: g.nodes()[0], last: g.last(), map: format!("{:?}", g.map).to_lowercase() }),
            notes: Vec::new(),
        }
    }

    pub fn push(&mut self, entry: ConditionEntry) {
        self.conditions.push(entry);
        self.update_worst();
    }

    pub fn extend(&mut self, entries: impl IntoIterator<Item = ConditionEntry>) {
        self.conditions.extend(entries);
        self.update_worst();
    }

    pub fn pass(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&ConditionEntry> {
        self.conditions.iter().find(|c| c.name == name)
    }

    /// The failing condition with the largest residual-to-tolerance ratio.
    fn update_worst(&mut self) {
        let ratio = |c: &ConditionEntry| if c.tolerance > 0.0 { c.residual / c.tolerance } else { f64::INFINITY };
        self.worst = self
            .conditions
            .iter()
            .filter(|c| !c.pass)
            .max_by(|a, b| ratio(a).total_cmp(&ratio(b)))
            .map(|c| WorstViolation { t: c.t, condition: c.name.clone() });
    }
}

/// All necessary conditions for one process/adjoint pair.
#[derive(Clone, Debug, Serialize)]
pub struct NecessaryConditions {
    pub residual: ResidualReport,
    pub max_condition: MaxConditionReport,
    pub transversality: TransversalityReport,
    pub slackness: SlacknessReport,
    pub nontriviality: NontrivialityReport,
}

impl NecessaryConditions {
    pub fn entries(&self) -> Vec<ConditionEntry> {
        let mut out = vec![self.residual.ode.clone(), self.residual.jump.clone(), self.max_condition.entry.clone()];
        out.extend(self.transversality.entries());
        out.push(self.slackness.entry.clone());
        // Passes iff the largest multiplier component reaches the threshold.
        let nt = &self.nontriviality;
        out.push(ConditionEntry::new("nontriviality", nt.threshold / nt.magnitude, 1.0, None));
        out
    }

    pub fn pass(&self) -> bool {
        self.entries().iter().all(|c| c.pass)
    }
}

/// Adjoint residual, maximum condition, transversality, slackness and
/// nontriviality for a given adjoint.
pub fn verify_necessary(
    problem: &ControlProblem,
    process: &Process,
    adj: &AdjointSolution,
    grid: &SemiInfiniteGrid,
    tol: &Tolerances,
    resolution: Option<usize>,
) -> Result<NecessaryConditions> {
    tol.validate()?;
    Ok(NecessaryConditions {
        residual: adjoint_residual(adj, problem, process, grid, tol)?,
        max_condition: max_condition_check(problem, process, adj, grid, tol, resolution),
        transversality: transversality_check(adj, problem, process, problem.endpoint, tol)?,
        slackness: slackness_check(adj, problem, process, ACTIVATION_TOL),
        nontriviality: nontriviality_check(adj),
    })
}
