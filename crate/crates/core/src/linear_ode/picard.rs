//! Fixed-point (Picard) solution of `x(t) = z(t) + int_tau^t [A x + a] ds` on the
//! half line.
//!
//! Iterates live on a composite Chebyshev-Lobatto mesh: each cell carries a
//! degree-12 interpolant, so the cumulative integral of `A x + a` is applied by
//! a fixed spectral matrix and the discretization error stays far below the
//! iteration tolerance.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::linear_ode::LinearSystem;
use crate::problem_model::{ConvergentFunction, SemiInfiniteGrid, Vector};
use crate::quadrature::kronrod_rule;

const DEGREE: usize = 12;
const MAX_CELL: f64 = 0.5;
const UNIFORM_UNTIL: f64 = 64.0;
const GROWTH: f64 = 1.25;

/// Initial time of the fixed-point problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Tau {
    At(f64),
    Infinity,
}

#[derive(Clone, Copy, Debug)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions { tol: 1e-10, max_iterations: 60 }
    }
}

/// One iterate's change against the a-priori bound `c0^m / m! * ||x1 - x0||`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct WeissingerRecord {
    pub iterate: usize,
    pub change: f64,
    pub bound: f64,
}

#[derive(Clone, Debug)]
pub struct PicardSolution {
    pub x: ConvergentFunction,
    pub iterations: usize,
    pub c0: f64,
    pub records: Vec<WeissingerRecord>,
}

struct Mesh {
    cells: Vec<(f64, f64)>,
    /// Flattened points; cell `c` owns indices `c*DEGREE ..= c*DEGREE + DEGREE`.
    points: Vec<f64>,
}

impl Mesh {
    fn build(anchors: &[f64], far: f64) -> Mesh {
        let mut edges: Vec<f64> = Vec::new();
        let push = |e: &mut Vec<f64>, a: f64, b: f64| {
            let pieces = ((b - a) / MAX_CELL).ceil().max(1.0) as usize;
            for i in 1..=pieces {
                e.push(a + (b - a) * i as f64 / pieces as f64);
            }
        };
        edges.push(0.0);
        for w in anchors.windows(2) {
            push(&mut edges, w[0], w[1]);
        }
        let mut t = *anchors.last().unwrap();
        while t < far {
            let step = if t < UNIFORM_UNTIL { MAX_CELL } else { t * (GROWTH - 1.0) };
            let next = (t + step).min(far.max(t + step * 0.5));
            edges.push(next);
            t = next;
        }
        let cells: Vec<(f64, f64)> = edges.windows(2).map(|w| (w[0], w[1])).collect();
        let nodes = lobatto_nodes();
        let mut points = vec![0.0];
        for &(a, b) in &cells {
            for xi in &nodes[1..] {
                points.push(0.5 * (a + b) + 0.5 * (b - a) * xi);
            }
            *points.last_mut().unwrap() = b;
        }
        Mesh { cells, points }
    }

}

fn lobatto_nodes() -> Vec<f64> {
    (0..=DEGREE).map(|j| -(std::f64::consts::PI * j as f64 / DEGREE as f64).cos()).collect()
}

fn bary_weights() -> Vec<f64> {
    (0..=DEGREE)
        .map(|j| {
            let s = if j % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 || j == DEGREE {
                0.5 * s
            } else {
                s
            }
        })
        .collect()
}

fn lagrange_row(s: f64, nodes: &[f64], w: &[f64]) -> Vec<f64> {
    if let Some(k) = nodes.iter().position(|&x| x == s) {
        let mut row = vec![0.0; nodes.len()];
        row[k] = 1.0;
        return row;
    }
    let terms: Vec<f64> = nodes.iter().zip(w).map(|(&x, &wj)| wj / (s - x)).collect();
    let denom: f64 = terms.iter().sum();
    terms.iter().map(|t| t / denom).collect()
}

/// `S[i][j] = int_{-1}^{xi_i} l_j(s) ds` on the reference cell.
fn integration_matrix() -> Vec<Vec<f64>> {
    let nodes = lobatto_nodes();
    let w = bary_weights();
    let rule = kronrod_rule();
    nodes
        .iter()
        .map(|&upper| {
            let half = 0.5 * (upper + 1.0);
            let mut row = vec![0.0; nodes.len()];
            if half == 0.0 {
                return row;
            }
            for &(xk, wk) in &rule {
                let s = -1.0 + half * (xk + 1.0);
                for (r, l) in row.iter_mut().zip(lagrange_row(s, &nodes, &w)) {
                    *r += half * wk * l;
                }
            }
            row
        })
        .collect()
}

/// Solves the linear integral equation by fixed-point iteration.
pub fn picard_solve(
    sys: &LinearSystem,
    z: &ConvergentFunction,
    tau: Tau,
    grid: &SemiInfiniteGrid,
    opts: PicardOptions,
) -> Result<PicardSolution> {
    let n = sys.dim;
    if z.dim() != n {
        return invalid("z dimension differs from the system dimension");
    }
    let (cert_a, cert_b) = sys.certify();
    if !cert_a.summable || !cert_b.summable {
        return Err(Error::NonSummable(format!(
            "coefficient certificate failed (A: ratios {:?}, a: ratios {:?})",
            cert_a.ratios, cert_b.ratios
        )));
    }
    if let Tau::At(t) = tau {
        if grid.index_of(t).is_none() {
            return invalid(format!("tau = {t} is not a grid node"));
        }
    }
    let c0 = cert_a.estimate;
    let mut anchors: Vec<f64> = grid.nodes().to_vec();
    for &b in &sys.breakpoints {
        if b > 0.0 && !anchors.iter().any(|&t| (t - b).abs() < 1e-12) {
            anchors.push(b);
        }
    }
    anchors.sort_by(f64::total_cmp);
    let far = cert_a.horizon.max(cert_b.horizon).max(*anchors.last().unwrap());
    let mesh = Mesh::build(&anchors, far);
    let s_mat = integration_matrix();
    let np = mesh.points.len();

    let a_pts: Vec<_> = mesh.points.iter().map(|&t| (sys.a_mat)(t)).collect();
    let b_pts: Vec<_> = mesh.points.iter().map(|&t| (sys.a_vec)(t)).collect();
    let z_pts: Vec<Vector> = mesh.points.iter().map(|&t| z.eval(t)).collect();
    let tau_idx = match tau {
        Tau::At(t) => mesh.points.iter().position(|&p| (p - t).abs() <= 1e-9 * t.max(1.0)).unwrap(),
        Tau::Infinity => np - 1,
    };
    let z_tau = match tau {
        Tau::At(t) => z.eval(t),
        Tau::Infinity => z.limit().clone(),
    };

    let apply = |x: &[Vector]| -> Vec<Vector> {
        let integrand: Vec<Vector> = (0..np).map(|i| &a_pts[i] * &x[i] + &b_pts[i]).collect();
        let mut cum = vec![Vector::zeros(n); np];
        let mut base = Vector::zeros(n);
        for (c, &(a, b)) in mesh.cells.iter().enumerate() {
            let off = c * DEGREE;
            let half = 0.5 * (b - a);
            for i in 1..=DEGREE {
                let mut acc = Vector::zeros(n);
                for j in 0..=DEGREE {
                    acc.axpy(half * s_mat[i][j], &integrand[off + j], 1.0);
                }
                cum[off + i] = &base + acc;
            }
            base = cum[off + DEGREE].clone();
        }
        let shift = cum[tau_idx].clone();
        // For tau = inf the solution is pinned to z(inf) there, elsewhere to z(t).
        (0..np)
            .map(|i| {
                let zi = if matches!(tau, Tau::Infinity) && i == np - 1 { &z_tau } else { &z_pts[i] };
                zi + &cum[i] - &shift
            })
            .collect()
    };

    let mut x: Vec<Vector> = z_pts.clone();
    let mut records = Vec::new();
    let mut first = None;
    let mut factorial = 1.0;
    let mut power = 1.0;
    for m in 0..opts.max_iterations {
        let next = apply(&x);
        let change = x.iter().zip(&next).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let first_change = *first.get_or_insert(change);
        if m > 0 {
            factorial *= m as f64;
            power *= c0;
        }
        records.push(WeissingerRecord { iterate: m, change, bound: power / factorial * first_change });
        x = next;
        if change < opts.tol {
            return Ok(finish(z, tau, grid, &mesh, x, m + 1, c0, records));
        }
    }
    let last_change = records.last().map_or(f64::NAN, |r| r.change);
    Err(Error::NoConvergence { iterations: opts.max_iterations, last_change })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    z: &ConvergentFunction,
    tau: Tau,
    grid: &SemiInfiniteGrid,
    mesh: &Mesh,
    x: Vec<Vector>,
    iterations: usize,
    c0: f64,
    records: Vec<WeissingerRecord>,
) -> PicardSolution {
    let np = mesh.points.len();
    // Beyond the mesh the coefficients are negligible; the limit carries z's own tail.
    let limit = match tau {
        Tau::Infinity => z.limit().clone(),
        Tau::At(_) => &x[np - 1] + z.limit() - z.eval(mesh.points[np - 1]),
    };
    let nodes = lobatto_nodes();
    let w = bary_weights();
    let cells = mesh.cells.clone();
    let points = Arc::new(x);
    let pts = points.clone();
    let lim = limit.clone();
    let eval = move |t: f64| -> Vector {
        if !t.is_finite() || t >= cells.last().unwrap().1 {
            return lim.clone();
        }
        let c = cells.partition_point(|c| c.1 < t).min(cells.len() - 1);
        let (a, b) = cells[c];
        let s = (2.0 * t - a - b) / (b - a);
        let row = lagrange_row(s.clamp(-1.0, 1.0), &nodes, &w);
        let mut out = Vector::zeros(lim.len());
        for (j, l) in row.iter().enumerate() {
            out.axpy(*l, &pts[c * DEGREE + j], 1.0);
        }
        out
    };
    let x = ConvergentFunction::from_fn(grid, eval, limit);
    PicardSolution { x, iterations, c0, records }
}

/// Solves `x' = A x + a` with `x(inf) = v` by integrating backward in the
/// compactified variable from `s = 1 - eps`.
pub fn solve_terminal(sys: &LinearSystem, v: &Vector, grid: &SemiInfiniteGrid, eps: f64) -> Result<ConvergentFunction> {
    use crate::linear_ode::ivp::{integrate_ivp, OdeOptions};
    let map = crate::problem_model::TimeMap::Rational;
    let rhs = |s: f64, x: &Vector| -> Vector {
        let t = map.to_time(s);
        ((sys.a_mat)(t) * x + (sys.a_vec)(t)) * map.speed(s)
    };
    let mut s_out: Vec<f64> = vec![1.0 - eps];
    s_out.extend(grid.nodes().iter().rev().map(|&t| map.to_unit(t)));
    let s_breaks: Vec<f64> = sys.breakpoints.iter().map(|&b| map.to_unit(b)).collect();
    let opts = OdeOptions::tight();
    let xs = integrate_ivp(&rhs, v, &s_out, &s_breaks, &opts)?;
    let values: Vec<Vector> = xs[1..].iter().rev().cloned().collect();
    ConvergentFunction::from_samples(grid.nodes().to_vec(), values, v.clone(), f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem_model::{make_grid, Matrix, TimeMap};

    fn v1(a: f64) -> Vector {
        Vector::from_element(1, a)
    }

    #[test]
    fn integration_matrix_integrates_polynomials() {
        let s = integration_matrix();
        let nodes = lobatto_nodes();
        // int_{-1}^{xi} s^5 ds = (xi^6 - 1)/6
        for (i, &xi) in nodes.iter().enumerate() {
            let approx: f64 = (0..=DEGREE).map(|j| s[i][j] * nodes[j].powi(5)).sum();
            assert!((approx - (xi.powi(6) - 1.0) / 6.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_system_returns_z() {
        let g = make_grid(TimeMap::Log, 32).unwrap();
        let sys = LinearSystem::new(2, |_| Matrix::zeros(2, 2), |_| Vector::zeros(2));
        let z = ConvergentFunction::constant(&g, Vector::from_vec(vec![1.0, -2.0]));
        for tau in [Tau::At(0.0), Tau::At(g.nodes()[5]), Tau::Infinity] {
            let sol = picard_solve(&sys, &z, tau, &g, PicardOptions::default()).unwrap();
            for v in sol.x.values() {
                assert_eq!(v.as_slice(), &[1.0, -2.0]);
            }
        }
    }

    #[test]
    fn scalar_decaying_coefficient() {
        let g = make_grid(TimeMap::Log, 64).unwrap();
        let sys = LinearSystem::new(1, |t| Matrix::from_element(1, 1, (-t).exp()), |_| v1(0.0));
        let z = ConvergentFunction::constant(&g, v1(1.0));
        let sol = picard_solve(&sys, &z, Tau::At(0.0), &g, PicardOptions::default()).unwrap();
        for (&t, v) in g.nodes().iter().zip(sol.x.values()) {
            assert!((v[0] - (1.0 - (-t).exp()).exp()).abs() < 1e-10);
        }
        assert!((sol.x.limit()[0] - std::f64::consts::E).abs() < 1e-10);
        for r in &sol.records {
            assert!(r.change <= r.bound * (1.0 + 1e-9) + 1e-13);
        }
    }

    #[test]
    fn terminal_zero_stays_zero() {
        let g = make_grid(TimeMap::Log, 32).unwrap();
        let sys = LinearSystem::new(1, |t| Matrix::from_element(1, 1, (-t).exp()), |_| v1(0.0));
        let z = ConvergentFunction::constant(&g, v1(0.0));
        let sol = picard_solve(&sys, &z, Tau::Infinity, &g, PicardOptions::default()).unwrap();
        assert!(sol.x.values().iter().all(|v| v[0] == 0.0));
    }

    #[test]
    fn terminal_condition_matches_backward_integration() {
        let g = make_grid(TimeMap::Log, 32).unwrap();
        let sys = LinearSystem::new(1, |t| Matrix::from_element(1, 1, (-t).exp()), |t| v1((-2.0 * t).exp()));
        let z = ConvergentFunction::constant(&g, v1(1.0));
        let pic = picard_solve(&sys, &z, Tau::Infinity, &g, PicardOptions::default()).unwrap();
        let back = solve_terminal(&sys, &v1(1.0), &g, 1e-6).unwrap();
        for (a, b) in pic.x.values().iter().zip(back.values()) {
            assert!((a[0] - b[0]).abs() < 1e-8, "{} vs {}", a[0], b[0]);
        }
    }

    #[test]
    fn non_summable_rejected() {
        let g = make_grid(TimeMap::Log, 16).unwrap();
        let sys = LinearSystem::new(1, |_| Matrix::from_element(1, 1, 2.0), |_| v1(0.0));
        let z = ConvergentFunction::constant(&g, v1(1.0));
        assert!(matches!(picard_solve(&sys, &z, Tau::At(0.0), &g, PicardOptions::default()), Err(Error::NonSummable(_))));
    }

    #[test]
    fn iteration_cap_surfaces() {
        let g = make_grid(TimeMap::Log, 16).unwrap();
        let sys = LinearSystem::new(1, |t| Matrix::from_element(1, 1, 30.0 * (-t).exp()), |_| v1(0.0));
        let z = ConvergentFunction::constant(&g, v1(1.0));
        let r = picard_solve(&sys, &z, Tau::At(0.0), &g, PicardOptions { tol: 1e-10, max_iterations: 5 });
        assert!(matches!(r, Err(Error::NoConvergence { iterations: 5, .. })));
    }
}
