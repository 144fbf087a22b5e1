//! Root finding for switching times and the extraction threshold.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::quadrature::{integrate, QuadOptions};

const BISECTION_TOL: f64 = 1e-12;

fn bisect(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..400 {
        if hi - lo <= BISECTION_TOL * hi.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Root of `e^{(1-rho) tau} (1/rho + 1/(1-rho)) = Z + 1/(1-rho)` by bisection.
pub fn solve_switching_time(rho: f64, z: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return invalid(format!("rho must lie in (0, 1), got {rho}"));
    }
    if !(z > 1.0 / rho) {
        return invalid(format!("budget Z = {z} must exceed 1/rho = {}", 1.0 / rho));
    }
    let k = 1.0 / rho + 1.0 / (1.0 - rho);
    let target = z + 1.0 / (1.0 - rho);
    let f = |tau: f64| ((1.0 - rho) * tau).exp() * k - target;
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    Ok(bisect(f, 0.0, hi))
}

/// Concave utility `f` with `f >= 0`, `f' > 0`, `f'' < 0` and an inverse of `f'`.
#[derive(Clone)]
pub struct ConcaveUtility {
    pub name: String,
    pub f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub f_prime: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub f_prime_inv: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for ConcaveUtility {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ConcaveUtility({})", self.name)
    }
}

impl ConcaveUtility {
    /// `f(u) = ln(1 + u)`.
    pub fn log1p() -> Self {
        ConcaveUtility {
            name: "ln(1+u)".into(),
            f: Arc::new(|u: f64| u.ln_1p()),
            f_prime: Arc::new(|u: f64| 1.0 / (1.0 + u)),
            f_prime_inv: Arc::new(|v: f64| 1.0 / v - 1.0),
        }
    }

    fn check(&self) -> Result<()> {
        let mut prev = f64::INFINITY;
        for k in 0..=200 {
            let u = 0.05 * k as f64;
            let (v, d) = ((self.f)(u), (self.f_prime)(u));
            if !(v >= 0.0) || !(d > 0.0) || !(d < prev) {
                return invalid(format!("{} violates f >= 0, f' > 0, f'' < 0 near u = {u}", self.name));
            }
            prev = d;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ResourceCase {
    /// `d f'(0) <= q`: nothing is extracted.
    A,
    /// `d f'(0) > q`: the resource is exhausted at a finite time `t'`.
    C,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ResourceParams {
    pub r: f64,
    pub a: f64,
    pub c: f64,
    pub q: f64,
    pub x0: f64,
}

impl ResourceParams {
    pub fn d(&self) -> f64 {
        (self.r - self.a * self.c) / self.r
    }

    pub fn validate(&self) -> Result<()> {
        let ResourceParams { r, a, c, q, x0 } = *self;
        if !(r > 0.0 && a > 0.0 && c > 0.0 && q > 0.0) {
            return invalid("r, a, c, q must be positive");
        }
        if !(r - a * c > 0.0) {
            return invalid(format!("need r - a c > 0, got {}", r - a * c));
        }
        if !(x0 > 0.0) {
            return invalid("initial stock must be positive");
        }
        Ok(())
    }
}

/// `u_tau(t)` from `f'(u) = (q + [d f'(0) - q] e^{r (t - tau)}) / d` on `[0, tau]`, zero after.
pub fn extraction_rate(util: &ConcaveUtility, p: &ResourceParams, tau: f64, t: f64) -> f64 {
    if t >= tau {
        return 0.0;
    }
    let d = p.d();
    let b = d * (util.f_prime)(0.0) - p.q;
    (util.f_prime_inv)((p.q + b * (p.r * (t - tau)).exp()) / d).max(0.0)
}

/// `U(tau) = int_0^tau u_tau(t) dt` by quadrature.
pub fn extracted_total(util: &ConcaveUtility, p: &ResourceParams, tau: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    let opts = QuadOptions { abs_tol: 1e-14, rel_tol: 1e-13, ..QuadOptions::default() };
    integrate(&mut |t| extraction_rate(util, p, tau, t), 0.0, tau, &[], opts)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Threshold {
    pub case: ResourceCase,
    pub d: f64,
    pub t_prime: Option<f64>,
}

/// Largest switching time probed before giving up.
const TAU_CAP: f64 = 1e4;

/// Case classification and, in case C, the exhaustion time `t'` with `U(t') = x0`.
pub fn resource_extraction_threshold(util: &ConcaveUtility, p: &ResourceParams) -> Result<Threshold> {
    p.validate()?;
    util.check()?;
    let d = p.d();
    if d * (util.f_prime)(0.0) <= p.q {
        return Ok(Threshold { case: ResourceCase::A, d, t_prime: None });
    }
    let mut hi = 1.0;
    let mut reached = extracted_total(util, p, hi);
    while reached < p.x0 {
        hi *= 2.0;
        if hi > TAU_CAP {
            return Err(Error::ResourceTooLarge { x0: p.x0, reached, cap: TAU_CAP });
        }
        reached = extracted_total(util, p, hi);
    }
    let tp = bisect(|tau| extracted_total(util, p, tau) - p.x0, 0.0, hi);
    Ok(Threshold { case: ResourceCase::C, d, t_prime: Some(tp) })
}
