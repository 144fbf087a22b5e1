use serde::Serialize;

use super::{forcing, least_squares, AdjointSolution};
use crate::error::{invalid, Error, Result};
use crate::problem_model::{ControlProblem, EndpointKind, Matrix, Process, SemiInfiniteGrid, Vector};
use crate::report::{ConditionEntry, Tolerances};

/// Interior stencil step as a fraction of the local grid spacing.
const STENCIL_DIVISOR: f64 = 64.0;
const NONTRIVIAL_THRESHOLD: f64 = 1e-9;

#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    /// Sup over cells of `|p' + H_x - sum lambda_j g_jx|`.
    pub ode: ConditionEntry,
    /// Worst mismatch of `p(s+) - p(s) - sum beta g_x` over atoms.
    pub jump: ConditionEntry,
    /// Residual per cell `[t_k, t_{k+1})`.
    pub per_node: Vec<f64>,
}

/// Adjoint-equation residual between jumps and the jump identity at atoms.
///
/// `p'` is a central difference on `[t_k + h/2, t_k + 3h/2]` with
/// `h = (t_{k+1} - t_k)/64`, so the stencil never straddles a node.
pub fn adjoint_residual(
    adj: &AdjointSolution,
    problem: &ControlProblem,
    process: &Process,
    grid: &SemiInfiniteGrid,
    tol: &Tolerances,
) -> Result<ResidualReport> {
    for j in &adj.jumps {
        if grid.index_of(j.time).is_none() {
            return Err(Error::GridMismatch(j.time));
        }
    }
    let nodes = grid.nodes();
    let mut per_node = Vec::with_capacity(nodes.len());
    let mut worst = (0.0f64, None);
    for k in 0..nodes.len() {
        let spacing = if k + 1 < nodes.len() { nodes[k + 1] - nodes[k] } else { nodes[k] - nodes[k - 1] };
        let h = spacing / STENCIL_DIVISOR;
        let tm = nodes[k] + h;
        let dp = (adj.eval(tm + 0.5 * h) - adj.eval(tm - 0.5 * h)) / h;
        let x = process.state(tm);
        let u = process.control(tm);
        let p = adj.eval(tm);
        let rhs = -(problem.phi_x)(tm, &x, &u).tr_mul(&p) + forcing(problem, &adj.measures, adj.lambda0, tm, &x, &u);
        let r = (dp - rhs).amax();
        let r = if r.is_nan() { f64::INFINITY } else { r };
        if r > worst.0 || worst.1.is_none() {
            worst = (r, Some(tm));
        }
        per_node.push(r);
    }

    let mut jump_worst = (0.0f64, None);
    let mut times: Vec<f64> = adj.jumps.iter().map(|j| j.time).collect();
    times.dedup();
    for s in times {
        let eta = 1e-7 * s.max(1.0);
        let right = adj.eval(s + eta) * 2.0 - adj.eval(s + 2.0 * eta);
        let expected = adj
            .jumps
            .iter()
            .filter(|j| j.time == s)
            .fold(Vector::zeros(adj.dim()), |acc, j| acc + Vector::from_column_slice(&j.jump));
        let r = (right - adj.eval(s) - expected).amax();
        if r > jump_worst.0 {
            jump_worst = (r, Some(s));
        }
    }
    Ok(ResidualReport {
        ode: ConditionEntry::new("adjoint_equation", worst.0, tol.abs, worst.1),
        jump: ConditionEntry::new("jump_identity", jump_worst.0, tol.abs.max(1e-6), jump_worst.1),
        per_node,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TransversalityReport {
    pub kind: EndpointKind,
    /// `p(0) = h0'^T l0`.
    pub initial: ConditionEntry,
    pub l0: Vec<f64>,
    pub l0_fitted: bool,
    /// `p(inf) = -h1x^T l1 - sum_j g_jx mu_j({inf})`.
    pub terminal: ConditionEntry,
    pub l1: Vec<f64>,
    pub l1_fitted: bool,
    /// Masses at infinity recovered from the terminal identity by least squares.
    pub mu_infinity: Vec<f64>,
    pub p_limit: Vec<f64>,
    /// Free components must vanish at infinity.
    pub free_limit: Option<ConditionEntry>,
    /// `<p, x>` at the far horizon.
    pub pairing: Option<ConditionEntry>,
    /// `|H|` at the far horizon when the density vanishes there.
    pub michel: Option<ConditionEntry>,
    pub far_time: f64,
    pub notes: Vec<String>,
    pub pass: bool,
}

impl TransversalityReport {
    /// All condition entries that enter `pass`.
    pub fn entries(&self) -> Vec<ConditionEntry> {
        let mut out = vec![self.initial.clone(), self.terminal.clone()];
        out.extend(self.free_limit.iter().cloned());
        out.extend(self.pairing.iter().cloned());
        out.extend(self.michel.iter().cloned());
        out
    }
}

pub fn transversality_check(
    adj: &AdjointSolution,
    problem: &ControlProblem,
    process: &Process,
    kind: EndpointKind,
    tol: &Tolerances,
) -> Result<TransversalityReport> {
    if kind != problem.endpoint {
        return invalid(format!("endpoint kind {kind:?} does not match the problem's {:?}", problem.endpoint));
    }
    let n = problem.state_dim;
    let mut notes = Vec::new();

    let p0 = adj.eval(0.0);
    let x0 = process.state(0.0);
    let a0 = match &problem.h0 {
        Some(h0) => (h0.jac)(&x0).transpose(),
        None => Matrix::zeros(n, 0),
    };
    let (l0, l0_fitted, r0) = if adj.l0.len() == a0.ncols() && !adj.l0.is_empty() {
        let r = (&a0 * &adj.l0 - &p0).norm();
        (adj.l0.clone(), false, r)
    } else {
        let (l, r) = least_squares(&a0, &p0);
        (l, true, r)
    };
    let initial = ConditionEntry::new("transversality_initial", r0, tol.abs + tol.rel * p0.norm(), Some(0.0));

    let far = adj.far_time;
    let x_lim = process.x.limit().clone();
    let p_lim = adj.p_limit.clone();
    let h1t = match &problem.h1 {
        Some(h1) => (h1.jac)(far, &x_lim).transpose(),
        None => Matrix::zeros(n, 0),
    };
    let l = problem.constraints.len();
    let mut g = Matrix::zeros(n, l);
    for (j, c) in problem.constraints.iter().enumerate() {
        g.set_column(j, &(c.g_x)(far, &x_lim));
    }
    let mu_supplied = Vector::from_iterator(l, adj.measures.iter().map(|m| m.at_infinity));
    let s1 = h1t.ncols();
    let (l1, l1_fitted, mu_rec, r1) = if adj.l1.len() == s1 && s1 > 0 {
        let rest = &p_lim + &h1t * &adj.l1;
        let (mu, _) = least_squares(&(-&g), &rest);
        let target = -&h1t * &adj.l1 - &g * &mu_supplied;
        (adj.l1.clone(), false, mu, (&p_lim - target).norm())
    } else if s1 > 0 {
        let mut a = Matrix::zeros(n, s1 + l);
        a.columns_mut(0, s1).copy_from(&(-&h1t));
        a.columns_mut(s1, l).copy_from(&(-&g));
        let (theta, r) = least_squares(&a, &p_lim);
        (theta.rows(0, s1).into_owned(), true, theta.rows(s1, l).into_owned(), r)
    } else {
        let (mu, _) = least_squares(&(-&g), &p_lim);
        let target = -&g * &mu_supplied;
        (Vector::zeros(0), false, mu, (&p_lim - target).norm())
    };
    if mu_rec.iter().any(|&m| m < -tol.abs) {
        notes.push("recovered mass at infinity is negative".into());
    }
    let terminal = ConditionEntry::new("transversality_infinity", r1, tol.abs + tol.rel * p_lim.norm(), None);

    let no_atoms_at_infinity = adj.measures.iter().all(|m| m.at_infinity == 0.0);
    let x_far = process.state(far);
    let (free_limit, pairing) = match kind {
        EndpointKind::Free if no_atoms_at_infinity => (
            Some(ConditionEntry::new("free_endpoint_limit", p_lim.amax(), tol.abs, None)),
            Some(ConditionEntry::new("natural_pairing", p_lim.dot(&x_far).abs(), tol.abs, Some(far))),
        ),
        EndpointKind::Free => (None, None),
        EndpointKind::Mixed { free } => {
            let r = p_lim.rows(0, free).amax();
            (Some(ConditionEntry::new("free_components_limit", r, tol.abs, None)), None)
        }
        EndpointKind::Fixed => {
            if p_lim.amax() > tol.abs {
                notes.push(format!("adjoint does not vanish at infinity (max |p| = {:.6e})", p_lim.amax()));
            }
            (None, None)
        }
    };

    let michel = if (problem.omega)(far) <= 1e-12 {
        let h = problem.pontryagin(far, &x_far, &process.control(far), &p_lim, adj.lambda0);
        Some(ConditionEntry::new("michel", h.abs(), tol.abs, Some(far)))
    } else {
        None
    };

    let pass = initial.pass
        && terminal.pass
        && free_limit.as_ref().is_none_or(|c| c.pass)
        && pairing.as_ref().is_none_or(|c| c.pass)
        && michel.as_ref().is_none_or(|c| c.pass);
    Ok(TransversalityReport {
        kind,
        initial,
        l0: l0.as_slice().to_vec(),
        l0_fitted,
        terminal,
        l1: l1.as_slice().to_vec(),
        l1_fitted,
        mu_infinity: mu_rec.as_slice().to_vec(),
        p_limit: p_lim.as_slice().to_vec(),
        free_limit,
        pairing,
        michel,
        far_time: far,
        notes,
        pass,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct NontrivialityReport {
    pub nontrivial: bool,
    pub magnitude: f64,
    pub dominant: String,
    pub threshold: f64,
}

/// `max(lambda0, |l0|, |l1|, total masses, sup |p|) > 1e-9`.
pub fn nontriviality_check(adj: &AdjointSolution) -> NontrivialityReport {
    let mut parts = vec![
        ("lambda0".to_string(), adj.lambda0.abs()),
        ("l0".to_string(), adj.l0.norm()),
        ("l1".to_string(), adj.l1.norm()),
        ("sup_p".to_string(), adj.sup_norm()),
    ];
    for (j, m) in adj.measures.iter().enumerate() {
        parts.push((format!("mu_{}", j + 1), m.total_mass()));
    }
    let (dominant, magnitude) =
        parts.into_iter().fold((String::new(), 0.0), |best, (k, v)| if v > best.1 { (k, v) } else { best });
    NontrivialityReport { nontrivial: magnitude > NONTRIVIAL_THRESHOLD, magnitude, dominant, threshold: NONTRIVIAL_THRESHOLD }
}
