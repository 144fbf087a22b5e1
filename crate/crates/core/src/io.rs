//! CSV import and export of processes and adjoints.
//!
//! Trajectory files have the header `t, x_1..x_n, u_1..u_m`, one row per node
//! and a final row `t = inf` holding the limits.

use std::io::{Read, Write};

use crate::adjoint::AdjointSolution;
use crate::error::{Error, Result};
use crate::problem_model::{ControlPath, ConvergentFunction, Process, Vector};

/// Formats with 12 significant digits, trailing zeros trimmed.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
        if s == "-0" { "0".into() } else { s }
    } else {
        let s = format!("{x:.11e}");
        let (mantissa, e) = s.split_once('e').expect("scientific format");
        let mantissa = if mantissa.contains('.') { mantissa.trim_end_matches('0').trim_end_matches('.') } else { mantissa };
        format!("{mantissa}e{e}")
    }
}

/// Rounds to the value printed by [`fmt_sig`].
pub fn round_sig(x: f64) -> f64 {
    if x.is_finite() {
        fmt_sig(x).parse().unwrap_or(x)
    } else {
        x
    }
}

pub fn trajectory_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("x_{i}")));
    h.extend((1..=m).map(|j| format!("u_{j}")));
    h
}

/// `nodes` refined to spacing at most `h_max` and extended at that spacing
/// until the state is within `tail_tol` of its limit, so that the linearly
/// interpolated re-import stays close to the original path.
pub fn export_times(process: &Process, nodes: &[f64], tail_tol: f64, h_max: f64) -> Vec<f64> {
    let mut times = Vec::with_capacity(nodes.len());
    for w in nodes.windows(2) {
        let k = ((w[1] - w[0]) / h_max).ceil().max(1.0) as usize;
        times.extend((0..k).map(|i| w[0] + (w[1] - w[0]) * i as f64 / k as f64));
    }
    times.extend(nodes.last());
    let lim = process.x.limit();
    if lim.iter().any(|v| !v.is_finite()) {
        return times;
    }
    let mut t = times.last().copied().unwrap_or(0.0);
    for _ in 0..100_000 {
        if (process.state(t) - lim).norm() <= tail_tol {
            break;
        }
        t += h_max;
        times.push(t);
    }
    times
}

/// Writes `process` at `times` followed by the limit row.
pub fn write_process_csv<W: Write>(out: W, process: &Process, times: &[f64]) -> Result<()> {
    let n = process.x.dim();
    let m = process.u.dim();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(n, m))?;
    let mut row = |t: f64, x: &Vector, u: &Vector| -> Result<()> {
        let mut rec = vec![fmt_sig(t)];
        rec.extend(x.iter().chain(u.iter()).map(|&v| fmt_sig(v)));
        w.write_record(rec)?;
        Ok(())
    };
    for &t in times {
        row(t, &process.state(t), &process.control(t))?;
    }
    row(f64::INFINITY, process.x.limit(), process.u.limit())?;
    w.flush()?;
    Ok(())
}

fn schema(column: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Schema { column: column.into(), reason: reason.into() }
}

fn parse_cell(column: &str, row: usize, cell: &str) -> Result<f64> {
    let s = cell.trim();
    let v = match s {
        "inf" | "+inf" | "Infinity" => f64::INFINITY,
        _ => s.parse::<f64>().map_err(|_| schema(column, format!("row {row}: `{s}` is not a number")))?,
    };
    if v.is_nan() {
        return Err(schema(column, format!("row {row}: NaN")));
    }
    Ok(v)
}

/// Reads a trajectory file for a problem with `n` states and `m` controls.
/// The last sampled state must lie within `tail_tol` of the limit row.
pub fn read_process_csv<R: Read>(input: R, n: usize, m: usize, tail_tol: f64) -> Result<Process> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = r.headers()?.clone();
    let expected = trajectory_header(n, m);
    if header.iter().all(|h| h.is_empty()) {
        return Err(schema("t", "empty file"));
    }
    for (k, want) in expected.iter().enumerate() {
        match header.get(k) {
            None => return Err(schema(want, "missing")),
            Some(h) if h != want => return Err(schema(h, format!("expected `{want}` in position {}", k + 1))),
            _ => {}
        }
    }
    if header.len() > expected.len() {
        return Err(schema(&header[expected.len()], "unexpected column"));
    }

    let mut times = Vec::new();
    let mut xs = Vec::new();
    let mut us = Vec::new();
    let mut limit: Option<(Vector, Vector)> = None;
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        if limit.is_some() {
            return Err(schema("t", format!("row {row}: rows after the t = inf row")));
        }
        if rec.len() != expected.len() {
            let col = expected.get(rec.len()).map(String::as_str).unwrap_or("t");
            return Err(schema(col, format!("row {row}: {} fields, expected {}", rec.len(), expected.len())));
        }
        let vals = expected.iter().zip(rec.iter()).map(|(c, s)| parse_cell(c, row, s)).collect::<Result<Vec<f64>>>()?;
        for (c, v) in expected.iter().zip(&vals).skip(1) {
            if v.is_infinite() {
                return Err(schema(c, format!("row {row}: infinite value")));
            }
        }
        let x = Vector::from_column_slice(&vals[1..=n]);
        let u = Vector::from_column_slice(&vals[n + 1..]);
        let t = vals[0];
        if t.is_infinite() {
            limit = Some((x, u));
            continue;
        }
        if times.is_empty() && t != 0.0 {
            return Err(schema("t", "first row must have t = 0"));
        }
        if times.last().is_some_and(|&s| t <= s) {
            return Err(schema("t", format!("row {row}: times must increase strictly")));
        }
        times.push(t);
        xs.push(x);
        us.push(u);
    }
    if times.is_empty() {
        return Err(schema("t", "no data rows"));
    }
    let (xl, ul) = limit.ok_or_else(|| schema("t", "final row must have t = inf"))?;
    let gap = (xs.last().unwrap() - &xl).norm();
    if gap > tail_tol {
        return Err(schema("x_1", format!("last sample is {gap:e} from the limit row (tolerance {tail_tol:e})")));
    }
    let x = ConvergentFunction::from_samples(times.clone(), xs, xl, tail_tol)?;
    let u = ControlPath::from_samples(times, us, ul)?;
    Ok(Process::new(x, u))
}

/// Adjoint at the given times (left limits) and at infinity: `t, p_1..p_n`.
pub fn write_adjoint_csv<W: Write>(out: W, adj: &AdjointSolution, times: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["t".to_string()];
    head.extend((1..=adj.dim()).map(|i| format!("p_{i}")));
    w.write_record(&head)?;
    for t in times.iter().copied().chain(std::iter::once(f64::INFINITY)) {
        let mut rec = vec![fmt_sig(t)];
        rec.extend(adj.eval(t).iter().map(|&v| fmt_sig(v)));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Jump table: `s, j, beta, jump_1..jump_n` with `p(s+) - p(s) = jump`.
pub fn write_jump_csv<W: Write>(out: W, adj: &AdjointSolution) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["s".to_string(), "j".into(), "beta".into()];
    head.extend((1..=adj.dim()).map(|i| format!("jump_{i}")));
    w.write_record(&head)?;
    for j in &adj.jumps {
        let mut rec = vec![fmt_sig(j.time), (j.constraint + 1).to_string(), fmt_sig(j.mass)];
        rec.extend(j.jump.iter().map(|&v| fmt_sig(v)));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}
