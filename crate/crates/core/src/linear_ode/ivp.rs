//! Dormand-Prince 5(4) with local error control, exact stops at output and
//! break points, and a compactified driver for the half line.

use crate::error::{Error, Result};
use crate::problem_model::{TimeMap, Vector};

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Smallest admissible step relative to `max(1, |t|)`.
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { abs_tol: 1e-10, rel_tol: 1e-8, h_min: 1e-14, max_steps: 2_000_000 }
    }
}

impl OdeOptions {
    pub fn tight() -> Self {
        OdeOptions { abs_tol: 1e-14, rel_tol: 1e-12, ..Default::default() }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Difference between the 5th- and 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_SCALE: f64 = 0.2;
const MAX_SCALE: f64 = 5.0;

/// Integrates from `t0` to `t1` (either direction); returns the end state and
/// the last accepted step magnitude.
pub fn integrate_segment<F>(rhs: &F, t0: f64, x0: &Vector, t1: f64, h_guess: f64, opts: &OdeOptions) -> Result<(Vector, f64)>
where
    F: Fn(f64, &Vector) -> Vector + ?Sized,
{
    let span = t1 - t0;
    if span == 0.0 {
        return Ok((x0.clone(), h_guess));
    }
    let dir = span.signum();
    let mut t = t0;
    let mut x = x0.clone();
    let mut h = if h_guess > 0.0 { h_guess.min(span.abs()) } else { (span.abs() * 0.01).max(1e-6).min(span.abs()) };
    let mut k: Vec<Vector> = Vec::with_capacity(7);
    let mut k1 = rhs(t, &x);
    if k1.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { t });
    }
    let mut last_h = h;
    for _ in 0..opts.max_steps {
        let remaining = (t1 - t) * dir;
        if remaining <= 0.0 {
            return Ok((x, last_h));
        }
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        let hs = h * dir;
        k.clear();
        k.push(k1.clone());
        for s in 1..7 {
            let mut xs = x.clone();
            for (j, kj) in k.iter().enumerate() {
                if A[s][j] != 0.0 {
                    xs.axpy(hs * A[s][j], kj, 1.0);
                }
            }
            k.push(rhs(t + C[s] * hs, &xs));
        }
        // Stage 7 is evaluated at the 5th-order solution (FSAL).
        let mut x_new = x.clone();
        for (j, kj) in k.iter().enumerate().take(6) {
            if A[6][j] != 0.0 {
                x_new.axpy(hs * A[6][j], kj, 1.0);
            }
        }
        let mut err = 0.0f64;
        for i in 0..x.len() {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[i];
            }
            let scale = opts.abs_tol + opts.rel_tol * x[i].abs().max(x_new[i].abs());
            err = err.max((hs * e).abs() / scale);
        }
        if !err.is_finite() || x_new.iter().any(|v| !v.is_finite()) {
            if h <= opts.h_min * t.abs().max(1.0) {
                return Err(Error::NonFinite { t });
            }
            h *= MIN_SCALE;
            continue;
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + hs };
            x = x_new;
            k1 = k[6].clone();
            last_h = h;
            let scale = if err == 0.0 { MAX_SCALE } else { (SAFETY * err.powf(-0.2)).clamp(MIN_SCALE, MAX_SCALE) };
            h *= scale;
        } else {
            h *= (SAFETY * err.powf(-0.2)).clamp(MIN_SCALE, 1.0);
            if h <= opts.h_min * t.abs().max(1.0) {
                return Err(Error::Stiffness { t, h });
            }
        }
    }
    Err(Error::Stiffness { t, h })
}

/// Solves `x' = rhs(t, x)` from `x(t_out[0]) = x0` and returns the state at every
/// entry of `t_out` (monotone, either direction). Integration restarts at each
/// breakpoint inside the span.
pub fn integrate_ivp<F>(rhs: &F, x0: &Vector, t_out: &[f64], breakpoints: &[f64], opts: &OdeOptions) -> Result<Vec<Vector>>
where
    F: Fn(f64, &Vector) -> Vector + ?Sized,
{
    if t_out.is_empty() {
        return Ok(Vec::new());
    }
    let forward = t_out.last().unwrap() >= &t_out[0];
    let mut out = Vec::with_capacity(t_out.len());
    out.push(x0.clone());
    let mut x = x0.clone();
    let mut t = t_out[0];
    let mut h = 0.0;
    for &target in &t_out[1..] {
        let mut stops: Vec<f64> = breakpoints
            .iter()
            .copied()
            .filter(|&b| if forward { b > t && b < target } else { b < t && b > target })
            .collect();
        stops.sort_by(f64::total_cmp);
        if !forward {
            stops.reverse();
        }
        stops.push(target);
        for s in stops {
            let (xn, hn) = integrate_segment(rhs, t, &x, s, h, opts)?;
            x = xn;
            h = hn;
            t = s;
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Outcome of integrating across the compactified half line.
#[derive(Clone, Debug)]
pub struct CompactifiedRun {
    /// State at each requested finite time.
    pub values: Vec<Vector>,
    /// Time where integration stopped: `map(1 - eps)` unless growth forced an early stop.
    pub far_time: f64,
    pub far_value: Vector,
    /// Integration was stopped early because the state norm exceeded the cap.
    pub truncated: bool,
    /// Accepted checkpoints `(t, x)` beyond the last output time.
    pub checkpoints: Vec<(f64, Vector)>,
}

/// Integrates `x' = rhs(t, x)` forward in `s = map^{-1}(t)` from `t = 0` up to
/// `s = 1 - eps`. `t_out` must be ascending, finite and start at 0. When the
/// largest state entry exceeds `growth_cap` at a checkpoint, or overflows, integration
/// stops at the last good checkpoint.
pub fn integrate_compactified<F>(
    rhs: &F,
    x0: &Vector,
    t_out: &[f64],
    breakpoints: &[f64],
    map: TimeMap,
    eps: f64,
    growth_cap: f64,
    opts: &OdeOptions,
) -> Result<CompactifiedRun>
where
    F: Fn(f64, &Vector) -> Vector + ?Sized,
{
    let g = |s: f64, x: &Vector| -> Vector {
        let v = map.speed(s);
        rhs(map.to_time(s), x) * v
    };
    let s_end = 1.0 - eps;
    let t_end = map.to_time(s_end);
    let s_breaks: Vec<f64> = breakpoints.iter().filter(|&&b| b > 0.0 && b < t_end).map(|&b| map.to_unit(b)).collect();

    let mut values = Vec::with_capacity(t_out.len());
    let mut x = x0.clone();
    let mut s = 0.0;
    let mut h = 0.0;
    let advance = |from: f64, x: &Vector, to: f64, h: f64| -> Result<(Vector, f64)> {
        let mut stops: Vec<f64> = s_breaks.iter().copied().filter(|&b| b > from && b < to).collect();
        stops.push(to);
        let mut cur = from;
        let mut state = x.clone();
        let mut hh = h;
        for st in stops {
            let (xn, hn) = integrate_segment(&g, cur, &state, st, hh, opts)?;
            state = xn;
            hh = hn;
            cur = st;
        }
        Ok((state, hh))
    };
    for &t in t_out {
        let target = map.to_unit(t);
        let (xn, hn) = advance(s, &x, target, h)?;
        x = xn;
        h = hn;
        s = target;
        values.push(x.clone());
    }
    // Checkpoints at doubling times beyond the last output.
    let mut checkpoints = Vec::new();
    let mut tc = t_out.last().copied().unwrap_or(0.0).max(1.0);
    while tc < t_end {
        tc *= 2.0;
        if tc < t_end {
            checkpoints.push(map.to_unit(tc));
        }
    }
    checkpoints.push(s_end);
    let mut truncated = false;
    let mut accepted = Vec::new();
    for target in checkpoints {
        // On overflow, bisect in `t` between the last good point and the
        // failed goal so the run ends close to where the cap is reached.
        let mut goal = target;
        let mut hi = target;
        for _ in 0..40 {
            match advance(s, &x, goal, h) {
                Ok((xn, hn)) if xn.amax() <= growth_cap => {
                    x = xn;
                    h = hn;
                    s = goal;
                    accepted.push((map.to_time(s), x.clone()));
                    if goal == hi {
                        break;
                    }
                }
                Ok(_) | Err(Error::NonFinite { .. }) | Err(Error::Stiffness { .. }) => {
                    truncated = true;
                    hi = goal;
                }
                Err(e) => return Err(e),
            }
            let (ts, th) = (map.to_time(s), map.to_time(hi));
            if th - ts <= 1e-3 * th {
                break;
            }
            goal = map.to_unit(0.5 * (ts + th));
        }
        if truncated {
            break;
        }
    }
    Ok(CompactifiedRun { values, far_time: map.to_time(s), far_value: x, truncated, checkpoints: accepted })
}
