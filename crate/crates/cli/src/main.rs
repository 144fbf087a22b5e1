//! `horizon-pmp`: run built-in scenarios, verify imported trajectories and
//! tabulate the finite-horizon pathology.
//!
//! Exit codes: 0 pass, 1 verified failure, 2 usage or input error.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use horizon_pmp::horizon_transform::pathology_demo;
use horizon_pmp::io::{fmt_sig, read_process_csv};
use horizon_pmp::scenarios::{build_scenario, run, ScenarioConfig, ScenarioSettings};
use horizon_pmp::{Error, Tolerances};

use output::{write_pathology, write_outcome, Format};

const OUT_ENV: &str = "HORIZON_PMP_OUT";

#[derive(Parser, Debug)]
#[command(name = "horizon-pmp", version, about = "Maximum-principle verification on the half line")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a built-in scenario; exit 0 iff the verdicts match its expectation.
    Scenario {
        /// Scenario name (alternative to --scenario).
        name: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Verify a trajectory CSV against the problem of a built-in scenario.
    Verify {
        /// Trajectory file with columns t, x_1..x_n, u_1..u_m and a final t = inf row.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Finite-horizon optima versus the limit process for the growth model.
    Pathology {
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        /// Comma-separated horizons.
        #[arg(long = "T", value_delimiter = ',', default_values_t = [5.0, 10.0, 20.0, 40.0])]
        t_list: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        x0: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    scenario: Option<String>,
    /// Grid size.
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    tol_abs: Option<f64>,
    #[arg(long)]
    tol_rel: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; the HORIZON_PMP_OUT environment variable takes precedence.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Also run the Arrow-type sufficiency test.
    #[arg(long)]
    sufficiency: bool,
    /// Overrides the scenario's discount rate.
    #[arg(long)]
    rho: Option<f64>,
    /// Scenario configuration (TOML); the built-in table otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl RunArgs {
    fn out_dir(&self) -> PathBuf {
        out_dir(&self.out)
    }

    fn settings(&self, name: &str) -> horizon_pmp::Result<ScenarioSettings> {
        let config = match &self.config {
            Some(p) => ScenarioConfig::from_path(p)?,
            None => ScenarioConfig::embedded(),
        };
        let mut s = config.settings(name)?;
        if let Some(n) = self.n {
            s.n = n;
        }
        s.tol = Tolerances { abs: self.tol_abs.unwrap_or(s.tol.abs), rel: self.tol_rel.unwrap_or(s.tol.rel) };
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(rho) = self.rho {
            s.params.insert("rho".into(), rho);
        }
        s.validate()?;
        Ok(s)
    }
}

fn out_dir(flag: &Path) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag.to_path_buf(),
    }
}

/// Outcome of a command that ran to completion.
enum Verdict {
    Pass,
    Fail,
}

fn cmd_scenario(name: Option<String>, args: &RunArgs) -> horizon_pmp::Result<Verdict> {
    let name = name
        .or_else(|| args.scenario.clone())
        .ok_or_else(|| Error::InvalidInput("missing scenario name".into()))?;
    let settings = args.settings(&name)?;
    let sc = build_scenario(&name, &settings)?;
    let outcome = run(&sc, args.sufficiency)?;
    let ok = outcome.expected_match();
    let files = write_outcome(&args.out_dir(), &sc, &outcome, args.format, Some(ok))?;
    println!("{}: {} ({} conditions, {} files)", name, if ok { "as expected" } else { "UNEXPECTED" }, outcome.report.conditions.len(), files.len());
    Ok(if ok { Verdict::Pass } else { Verdict::Fail })
}

fn cmd_verify(input: &Path, args: &RunArgs) -> horizon_pmp::Result<Verdict> {
    let name = args.scenario.clone().ok_or_else(|| Error::InvalidInput("verify needs --scenario to name the problem".into()))?;
    let settings = args.settings(&name)?;
    let sc = build_scenario(&name, &settings)?;
    let file = std::fs::File::open(input)?;
    let process = read_process_csv(file, sc.problem.state_dim, sc.problem.control_dim, settings.tol.abs)?;
    let sc = sc.with_process(process)?;
    let outcome = run(&sc, args.sufficiency)?;
    let ok = outcome.pass() && (!args.sufficiency || outcome.sufficiency() == Some(true));
    write_outcome(&args.out_dir(), &sc, &outcome, args.format, None)?;
    let failing: Vec<&str> = outcome.report.conditions.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if ok {
        println!("{}: all conditions pass", input.display());
    } else {
        println!("{}: failing {}", input.display(), failing.join(", "));
    }
    Ok(if ok { Verdict::Pass } else { Verdict::Fail })
}

fn cmd_pathology(rho: f64, t_list: &[f64], x0: f64, out: &Path) -> horizon_pmp::Result<Verdict> {
    let table = pathology_demo(rho, x0, t_list)?;
    write_pathology(&out_dir(out), &table)?;
    for r in &table.rows {
        println!("T = {}  tau = {}  tau - T = {}  J_T = {}", fmt_sig(r.t), fmt_sig(r.tau), fmt_sig(r.tau - r.t), fmt_sig(r.j_t));
    }
    if table.limit_not_optimal {
        println!("finite-horizon limit is NOT infinite-horizon optimal");
    }
    Ok(Verdict::Pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Scenario { name, run } => cmd_scenario(name.clone(), run),
        Command::Verify { input, run } => cmd_verify(input, run),
        Command::Pathology { rho, t_list, x0, out } => cmd_pathology(*rho, t_list, *x0, out),
    };
    match result {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
