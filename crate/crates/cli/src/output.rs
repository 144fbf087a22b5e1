//! Report, trajectory, adjoint and plot files. Every file is written to a
//! temporary sibling and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use horizon_pmp::adjoint::{JumpRecord, MeasureSummary};
use horizon_pmp::horizon_transform::PathologyTable;
use horizon_pmp::io::{export_times, fmt_sig, round_sig, write_adjoint_csv, write_process_csv};
use horizon_pmp::pmp_verify::VerificationReport;
use horizon_pmp::scenarios::{Expected, Reference, Scenario, ScenarioOutcome};
use horizon_pmp::Result;
use serde::Serialize;
use serde_json::Value;

/// Exported trajectories are refined to this spacing and extended until the
/// state is this close to its limit, so they re-import faithfully.
const EXPORT_SPACING: f64 = 0.05;
const EXPORT_TAIL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    #[serde(flatten)]
    report: &'a VerificationReport,
    pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    expected: Option<Expected>,
    #[serde(skip_serializing_if = "Option::is_none")]
    expected_match: Option<bool>,
    sufficiency: Option<bool>,
    references: &'a [Reference],
    duality_residual: Option<f64>,
    jumps: &'a [JumpRecord],
    measures: Vec<MeasureSummary>,
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    let path = dir.join(name);
    tmp.persist(&path).map_err(|e| e.error)?;
    Ok(path)
}

/// Every float rounded to 12 significant digits.
fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_sig).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_floats),
        Value::Object(o) => o.values_mut().for_each(round_floats),
        _ => {}
    }
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| horizon_pmp::Error::Io(e.into_error()))
}

fn report_bytes(sc: &Scenario, out: &ScenarioOutcome, format: Format, expected_match: Option<bool>) -> Result<Vec<u8>> {
    let conditions = &out.report.conditions;
    match format {
        Format::Json => {
            let adj = sc.adjoint.as_ref();
            let report = JsonReport {
                report: &out.report,
                pass: out.pass(),
                expected: expected_match.map(|_| out.expected),
                expected_match,
                sufficiency: out.sufficiency(),
                references: &out.references,
                duality_residual: out.duality_residual,
                jumps: adj.map(|a| a.jumps.as_slice()).unwrap_or(&[]),
                measures: adj.map(|a| a.measures.iter().map(|m| m.summary()).collect()).unwrap_or_default(),
            };
            let mut v = serde_json::to_value(&report).map_err(|e| horizon_pmp::Error::Config(e.to_string()))?;
            round_floats(&mut v);
            let mut s = serde_json::to_string_pretty(&v).map_err(|e| horizon_pmp::Error::Config(e.to_string()))?;
            s.push('\n');
            Ok(s.into_bytes())
        }
        Format::Csv => {
            let header: Vec<String> = ["name", "residual", "tolerance", "pass", "t"].map(String::from).to_vec();
            csv_bytes(
                &header,
                conditions.iter().map(|c| {
                    vec![c.name.clone(), fmt_sig(c.residual), fmt_sig(c.tolerance), c.pass.to_string(), c.t.map(fmt_sig).unwrap_or_default()]
                }),
            )
        }
        Format::Text => {
            let mut s = String::new();
            s.push_str(&format!("scenario {}\n", out.report.scenario));
            for c in conditions {
                let at = c.t.map(|t| format!(" at t = {}", fmt_sig(t))).unwrap_or_default();
                s.push_str(&format!(
                    "{} {} residual {} tolerance {}{}\n",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    fmt_sig(c.residual),
                    fmt_sig(c.tolerance),
                    at
                ));
            }
            if let Some(f) = out.report.flags {
                s.push_str(&format!("flags adm={} lim_cond1={} lim_cond2={} lip={}\n", f.adm, f.lim_cond1, f.lim_cond2, f.lip));
            }
            if let Some(v) = out.sufficiency() {
                s.push_str(&format!("sufficiency {v}\n"));
            }
            if let Some(m) = expected_match {
                s.push_str(&format!("expected {}\n", if m { "yes" } else { "no" }));
            }
            for n in &out.report.notes {
                s.push_str(&format!("note {n}\n"));
            }
            Ok(s.into_bytes())
        }
    }
}

/// Plot data on the grid: `t, x_i, u_j` and, with an adjoint, `p_i, h_gap`.
fn plot_bytes(sc: &Scenario, out: &ScenarioOutcome) -> Result<Vec<u8>> {
    let n = sc.problem.state_dim;
    let m = sc.problem.control_dim;
    let adj = sc.adjoint.as_ref();
    let gaps = out.necessary.as_ref().map(|nc| &nc.max_condition.gaps);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=m).map(|j| format!("u_{j}")));
    if adj.is_some() {
        header.extend((1..=n).map(|i| format!("p_{i}")));
        header.push("h_gap".into());
    }
    let rows = sc.grid.nodes().iter().enumerate().map(|(k, &t)| {
        let mut r = vec![fmt_sig(t)];
        r.extend(sc.process.state(t).iter().chain(sc.process.control(t).iter()).map(|&v| fmt_sig(v)));
        if let Some(a) = adj {
            r.extend(a.eval(t).iter().map(|&v| fmt_sig(v)));
            r.push(gaps.and_then(|g| g.get(k)).map(|&g| fmt_sig(g)).unwrap_or_default());
        }
        r
    });
    csv_bytes(&header, rows)
}

/// Writes `report.<ext>`, `trajectory.csv`, `adjoint.csv` and `plot.csv`.
pub fn write_outcome(dir: &Path, sc: &Scenario, out: &ScenarioOutcome, format: Format, expected_match: Option<bool>) -> Result<Vec<PathBuf>> {
    let ext = match format {
        Format::Json => "json",
        Format::Csv => "csv",
        Format::Text => "txt",
    };
    let mut files = vec![write_atomic(dir, &format!("report.{ext}"), &report_bytes(sc, out, format, expected_match)?)?];

    let mut buf = Vec::new();
    let times = export_times(&sc.process, sc.grid.nodes(), EXPORT_TAIL, EXPORT_SPACING);
    write_process_csv(&mut buf, &sc.process, &times)?;
    files.push(write_atomic(dir, "trajectory.csv", &buf)?);

    let buf = match &sc.adjoint {
        Some(a) => {
            let mut b = Vec::new();
            write_adjoint_csv(&mut b, a, sc.grid.nodes())?;
            b
        }
        None => {
            let mut header = vec!["t".to_string()];
            header.extend((1..=sc.problem.state_dim).map(|i| format!("p_{i}")));
            csv_bytes(&header, std::iter::empty())?
        }
    };
    files.push(write_atomic(dir, "adjoint.csv", &buf)?);
    files.push(write_atomic(dir, "plot.csv", &plot_bytes(sc, out)?)?);
    Ok(files)
}

pub fn write_pathology(dir: &Path, table: &PathologyTable) -> Result<PathBuf> {
    let header: Vec<String> = ["T", "tau", "J_T", "J_infinite_of_T_process", "J_limit_process"].map(String::from).to_vec();
    let rows = table.rows.iter().map(|r| [r.t, r.tau, r.j_t, r.j_infinite, r.j_limit].map(fmt_sig).to_vec());
    write_atomic(dir, "pathology.csv", &csv_bytes(&header, rows)?)
}
