//! Adaptive Gauss-Kronrod quadrature on finite and semi-infinite intervals, and
//! the dyadic tail test used as a numerical summability certificate.

use serde::Serialize;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Kronrod nodes on `[-1, 1]` with weights, 15 points (exact for degree 22).
pub fn kronrod_rule() -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(15);
    for i in 0..7 {
        out.push((-XGK[i], WGK[i]));
    }
    out.push((0.0, WGK[7]));
    for i in (0..7).rev() {
        out.push((XGK[i], WGK[i]));
    }
    out
}

fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

#[derive(Clone, Copy, Debug)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions { abs_tol: 1e-13, rel_tol: 1e-11, max_intervals: 4000 }
    }
}

/// Globally adaptive quadrature of `f` on `[a, b]`, split first at `breakpoints`.
pub fn integrate(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, breakpoints: &[f64], opts: QuadOptions) -> f64 {
    if a == b {
        return 0.0;
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut cuts = vec![lo];
    cuts.extend(breakpoints.iter().copied().filter(|&t| t > lo && t < hi));
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut parts: Vec<(f64, f64, f64, f64)> = cuts
        .windows(2)
        .map(|w| {
            let (v, e) = gk15(f, w[0], w[1]);
            (w[0], w[1], v, e)
        })
        .collect();
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if err <= opts.abs_tol.max(opts.rel_tol * total.abs()) || parts.len() >= opts.max_intervals {
            return sign * total;
        }
        let (idx, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .unwrap();
        let (l, r, _, _) = parts.swap_remove(idx);
        let m = 0.5 * (l + r);
        if !(m > l && m < r) {
            return sign * total;
        }
        let (v1, e1) = gk15(f, l, m);
        let (v2, e2) = gk15(f, m, r);
        parts.push((l, m, v1, e1));
        parts.push((m, r, v2, e2));
    }
}

/// `int_a^inf f` with the last piece mapped through `t = b + s/(1-s)`.
pub fn integrate_to_infinity(f: &mut dyn FnMut(f64) -> f64, a: f64, breakpoints: &[f64], opts: QuadOptions) -> f64 {
    let last = breakpoints.iter().copied().filter(|&t| t > a && t.is_finite()).fold(a, f64::max);
    let head = integrate(f, a, last, breakpoints, opts);
    let mut g = |s: f64| {
        let d = 1.0 - s;
        let v = f(last + s / d);
        if v == 0.0 {
            0.0
        } else {
            v / (d * d)
        }
    };
    head + integrate(&mut g, 0.0, 1.0, &[], opts)
}

/// Numerical summability certificate for `int_0^inf |f|`.
#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub summable: bool,
    /// Integral estimate including the extrapolated tail.
    pub estimate: f64,
    /// Ratios of successive dyadic tail integrals.
    pub ratios: Vec<f64>,
    /// Right end of the last dyadic piece examined.
    pub horizon: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct CertificateOptions {
    pub t0: f64,
    pub doublings: usize,
    /// A tail must shrink by at least this factor per doubling.
    pub decay: f64,
    /// Relative size below which a tail counts as exhausted.
    pub negligible: f64,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        CertificateOptions { t0: 1.0, doublings: 18, decay: 0.9, negligible: 1e-14 }
    }
}

/// Tail-ratio test on dyadic pieces `[T, 2T], [2T, 4T], ...`.
pub fn tail_certificate(f: &mut dyn FnMut(f64) -> f64, breakpoints: &[f64], opts: CertificateOptions) -> Certificate {
    let q = QuadOptions { abs_tol: 1e-15, rel_tol: 1e-10, max_intervals: 2000 };
    let mut abs_f = |t: f64| f(t).abs();
    let mut total = integrate(&mut abs_f, 0.0, opts.t0, breakpoints, q);
    let mut ratios = Vec::new();
    let mut prev: Option<f64> = None;
    let mut lo = opts.t0;
    for k in 0..opts.doublings {
        let hi = 2.0 * lo;
        let piece = integrate(&mut abs_f, lo, hi, breakpoints, q);
        if !piece.is_finite() {
            return Certificate { summable: false, estimate: f64::INFINITY, ratios, horizon: hi };
        }
        total += piece;
        let floor = opts.negligible * (1.0 + total);
        if let Some(p) = prev {
            if p > floor {
                ratios.push(piece / p);
            }
        }
        prev = Some(piece);
        lo = hi;
        if piece <= floor && k >= 1 {
            return Certificate { summable: true, estimate: total, ratios, horizon: hi };
        }
        let n = ratios.len();
        if n >= 2 && ratios[n - 1] < opts.decay && ratios[n - 2] < opts.decay {
            let r = ratios[n - 1];
            let tail = piece * r / (1.0 - r);
            if tail <= floor {
                return Certificate { summable: true, estimate: total + tail, ratios, horizon: hi };
            }
        }
        if n >= 3 && ratios[n - 3..].iter().all(|&r| r >= 1.0) {
            return Certificate { summable: false, estimate: f64::INFINITY, ratios, horizon: hi };
        }
    }
    let n = ratios.len();
    let decaying = n >= 2 && ratios[n - 1] < opts.decay && ratios[n - 2] < opts.decay;
    if decaying {
        let r = ratios[n - 1];
        let tail = prev.unwrap_or(0.0) * r / (1.0 - r);
        Certificate { summable: true, estimate: total + tail, ratios, horizon: lo }
    } else {
        Certificate { summable: false, estimate: f64::INFINITY, ratios, horizon: lo }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = integrate(&mut |t| t * t * t, 0.0, 2.0, &[], QuadOptions::default());
        assert!((v - 4.0).abs() < 1e-14);
    }

    #[test]
    fn exponential_tail() {
        let v = integrate_to_infinity(&mut |t| (-2.0 * t).exp(), 0.0, &[], QuadOptions::default());
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn discontinuity_at_breakpoint() {
        let v = integrate(&mut |t| if t < 0.3 { 1.0 } else { 0.0 }, 0.0, 1.0, &[0.3], QuadOptions::default());
        assert!((v - 0.3).abs() < 1e-15);
    }

    #[test]
    fn certificate_accepts_exponential() {
        let c = tail_certificate(&mut |t| (-t).exp(), &[], CertificateOptions::default());
        assert!(c.summable);
        assert!((c.estimate - 1.0).abs() < 1e-10);
    }

    #[test]
    fn certificate_rejects_constant_and_slow_decay() {
        assert!(!tail_certificate(&mut |_| 0.2, &[], CertificateOptions::default()).summable);
        assert!(!tail_certificate(&mut |t| 1.0 / (1.0 + t), &[], CertificateOptions::default()).summable);
    }

    #[test]
    fn certificate_accepts_zero() {
        let c = tail_certificate(&mut |_| 0.0, &[], CertificateOptions::default());
        assert!(c.summable);
        assert_eq!(c.estimate, 0.0);
    }

    #[test]
    fn certificate_accepts_inverse_square() {
        let c = tail_certificate(&mut |t| 1.0 / ((1.0 + t) * (1.0 + t)), &[], CertificateOptions::default());
        assert!(c.summable);
        assert!((c.estimate - 1.0).abs() < 1e-4);
    }
}
