//! Linear ODEs `x' = A(t) x + a(t)` with summable coefficients on the half line.

pub mod ivp;
pub mod picard;

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::problem_model::{ControlProblem, Matrix, Process, SemiInfiniteGrid, TimeMap, Vector};
use crate::quadrature::{tail_certificate, Certificate, CertificateOptions};

pub use ivp::{integrate_compactified, integrate_ivp, integrate_segment, CompactifiedRun, OdeOptions};
pub use picard::{picard_solve, solve_terminal, PicardOptions, PicardSolution, Tau, WeissingerRecord};

/// Compactification cut-off `s = 1 - eps` for integration towards infinity.
pub const DEFAULT_EPS: f64 = 1e-6;

/// `x' = A(t) x + a(t)`.
#[derive(Clone)]
pub struct LinearSystem {
    pub dim: usize,
    pub a_mat: Arc<dyn Fn(f64) -> Matrix + Send + Sync>,
    pub a_vec: Arc<dyn Fn(f64) -> Vector + Send + Sync>,
    pub breakpoints: Vec<f64>,
}

impl LinearSystem {
    pub fn new(
        dim: usize,
        a_mat: impl Fn(f64) -> Matrix + Send + Sync + 'static,
        a_vec: impl Fn(f64) -> Vector + Send + Sync + 'static,
    ) -> Self {
        LinearSystem { dim, a_mat: Arc::new(a_mat), a_vec: Arc::new(a_vec), breakpoints: Vec::new() }
    }

    /// Certificates for `int ||A||` (Frobenius) and `int ||a||`.
    pub fn certify(&self) -> (Certificate, Certificate) {
        let opts = CertificateOptions::default();
        let ca = tail_certificate(&mut |t| (self.a_mat)(t).norm(), &self.breakpoints, opts);
        let cb = tail_certificate(&mut |t| (self.a_vec)(t).norm(), &self.breakpoints, opts);
        (ca, cb)
    }

    pub fn rhs(&self, t: f64, x: &Vector) -> Vector {
        (self.a_mat)(t) * x + (self.a_vec)(t)
    }
}

/// Fundamental matrices `Y' = phi_x Y`, `Z' = -phi_x^T Z`, `Y(0) = Z(0) = I`.
#[derive(Clone, Debug, Serialize)]
pub struct FundamentalMatrices {
    pub times: Vec<f64>,
    #[serde(skip)]
    pub y: Vec<Matrix>,
    #[serde(skip)]
    pub z: Vec<Matrix>,
    #[serde(skip)]
    pub y_limit: Option<Matrix>,
    #[serde(skip)]
    pub z_limit: Option<Matrix>,
    pub certificate: Option<Certificate>,
}

impl FundamentalMatrices {
    /// `max_k ||Y(t_k)^T Z(t_k) - I||_max`, including the limits when present.
    pub fn duality_residual(&self) -> f64 {
        let n = self.y.first().map_or(0, |m| m.nrows());
        let id = Matrix::identity(n, n);
        let mut worst = self.y.iter().zip(&self.z).map(|(y, z)| (y.tr_mul(z) - &id).amax()).fold(0.0, f64::max);
        if let (Some(y), Some(z)) = (&self.y_limit, &self.z_limit) {
            worst = worst.max((y.tr_mul(z) - &id).amax());
        }
        worst
    }
}

/// `phi_x` along the process.
pub fn jacobian_along<'a>(problem: &'a ControlProblem, process: &'a Process) -> impl Fn(f64) -> Matrix + 'a {
    move |t| (problem.phi_x)(t, &process.state(t), &process.control(t))
}

fn flatten(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

fn unflatten(v: &Vector, n: usize) -> Matrix {
    Matrix::from_column_slice(n, n, v.as_slice())
}

fn all_breakpoints(problem: &ControlProblem, process: &Process) -> Vec<f64> {
    let mut b = process.breakpoints();
    b.extend_from_slice(&problem.breakpoints);
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

/// Pure relative error control: `Z` decays exactly as fast as `Y` grows, and
/// an absolute floor would drown it long before `Y^T Z = I` stops holding.
fn fundamental_options() -> OdeOptions {
    OdeOptions { abs_tol: 1e-280, ..OdeOptions::tight() }
}

/// Fundamental matrices with limits at infinity; requires a summable `phi_x`.
pub fn fundamental_matrices(problem: &ControlProblem, process: &Process, grid: &SemiInfiniteGrid) -> Result<FundamentalMatrices> {
    let n = problem.state_dim;
    let jac = jacobian_along(problem, process);
    let breaks = all_breakpoints(problem, process);
    let cert = tail_certificate(&mut |t| jac(t).norm(), &breaks, CertificateOptions::default());
    if !cert.summable {
        return Err(Error::NonSummable(format!("int ||phi_x|| dt diverges (tail ratios {:?})", cert.ratios)));
    }
    let opts = fundamental_options();
    let id = flatten(&Matrix::identity(n, n));
    let ry = |t: f64, y: &Vector| flatten(&(jac(t) * unflatten(y, n)));
    let rz = |t: f64, z: &Vector| flatten(&(-jac(t).transpose() * unflatten(z, n)));
    let run_y = integrate_compactified(&ry, &id, grid.nodes(), &breaks, TimeMap::Rational, DEFAULT_EPS, 1e100, &opts)?;
    let run_z = integrate_compactified(&rz, &id, grid.nodes(), &breaks, TimeMap::Rational, DEFAULT_EPS, 1e100, &opts)?;
    if run_y.truncated || run_z.truncated {
        return Err(Error::NonSummable("fundamental matrix growth exceeded the cap".into()));
    }
    Ok(FundamentalMatrices {
        times: grid.nodes().to_vec(),
        y: run_y.values.iter().map(|v| unflatten(v, n)).collect(),
        z: run_z.values.iter().map(|v| unflatten(v, n)).collect(),
        y_limit: Some(unflatten(&run_y.far_value, n)),
        z_limit: Some(unflatten(&run_z.far_value, n)),
        certificate: Some(cert),
    })
}

/// Fundamental matrices on the finite nodes only, without a summability
/// requirement; used where the Jacobian is not integrable at infinity.
pub fn fundamental_matrices_finite(problem: &ControlProblem, process: &Process, grid: &SemiInfiniteGrid) -> Result<FundamentalMatrices> {
    let n = problem.state_dim;
    let jac = jacobian_along(problem, process);
    let breaks = all_breakpoints(problem, process);
    let opts = fundamental_options();
    let id = flatten(&Matrix::identity(n, n));
    let ry = |t: f64, y: &Vector| flatten(&(jac(t) * unflatten(y, n)));
    let rz = |t: f64, z: &Vector| flatten(&(-jac(t).transpose() * unflatten(z, n)));
    let ys = integrate_ivp(&ry, &id, grid.nodes(), &breaks, &opts)?;
    let zs = integrate_ivp(&rz, &id, grid.nodes(), &breaks, &opts)?;
    Ok(FundamentalMatrices {
        times: grid.nodes().to_vec(),
        y: ys.iter().map(|v| unflatten(v, n)).collect(),
        z: zs.iter().map(|v| unflatten(v, n)).collect(),
        y_limit: None,
        z_limit: None,
        certificate: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem_model::{make_grid, ControlPath, ConvergentFunction};

    fn scalar_problem(a: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ControlProblem {
        ControlProblem::new("scalar", 1, 1).dynamics(
            |_, x, _| x * 0.0,
            move |t, _, _| Matrix::from_element(1, 1, a(t)),
        )
    }

    fn trivial_process(grid: &SemiInfiniteGrid) -> Process {
        Process::new(ConvergentFunction::constant(grid, Vector::zeros(1)), ControlPath::constant(grid, Vector::zeros(1)))
    }

    #[test]
    fn zero_jacobian_gives_identity() {
        let g = make_grid(TimeMap::Log, 16).unwrap();
        let p = scalar_problem(|_| 0.0);
        let fm = fundamental_matrices(&p, &trivial_process(&g), &g).unwrap();
        assert!(fm.y.iter().chain(&fm.z).all(|m| m[(0, 0)] == 1.0));
    }

    #[test]
    fn scalar_closed_form() {
        let g = make_grid(TimeMap::Log, 32).unwrap();
        let p = scalar_problem(|t| -(-t).exp());
        let fm = fundamental_matrices(&p, &trivial_process(&g), &g).unwrap();
        for (k, &t) in g.nodes().iter().enumerate() {
            assert!((fm.y[k][(0, 0)] - ((-t).exp() - 1.0).exp()).abs() < 1e-11);
            assert!((fm.z[k][(0, 0)] - (1.0 - (-t).exp()).exp()).abs() < 1e-11);
        }
        assert!((fm.y_limit.as_ref().unwrap()[(0, 0)] - (-1f64).exp()).abs() < 1e-10);
        assert!(fm.duality_residual() < 1e-10);
    }

    #[test]
    fn non_summable_jacobian_rejected() {
        let g = make_grid(TimeMap::Log, 16).unwrap();
        let p = scalar_problem(|_| 2.0);
        assert!(matches!(fundamental_matrices(&p, &trivial_process(&g), &g), Err(Error::NonSummable(_))));
        let fm = fundamental_matrices_finite(&p, &trivial_process(&g), &g).unwrap();
        assert!(fm.duality_residual() < 1e-8);
    }
}
