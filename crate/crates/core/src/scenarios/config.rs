//! Per-scenario settings read from a TOML file keyed by scenario name.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::problem_model::TimeMap;
use crate::report::Tolerances;

const EMBEDDED: &str = include_str!("../../scenarios.toml");
const RESERVED: [&str; 7] = ["N", "map", "tol_abs", "tol_rel", "seed", "concavity_samples", "gamma"];

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioSettings {
    pub n: usize,
    pub map: TimeMap,
    pub tol: Tolerances,
    pub seed: u64,
    pub concavity_samples: usize,
    pub gamma: f64,
    pub params: BTreeMap<String, f64>,
}

impl ScenarioSettings {
    pub fn param(&self, key: &str) -> Result<f64> {
        self.params.get(key).copied().ok_or_else(|| Error::Config(format!("missing parameter `{key}`")))
    }

    pub fn param_or(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(Error::InvalidInput(format!("grid size N = {} is below 8", self.n)));
        }
        self.tol.validate()?;
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidInput("gamma must be positive".into()));
        }
        Ok(())
    }
}

/// Parsed configuration: defaults plus one table per scenario.
#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    defaults: toml::Table,
    tables: BTreeMap<String, toml::Table>,
}

impl ScenarioConfig {
    /// The configuration compiled into the library.
    pub fn embedded() -> Self {
        Self::parse(EMBEDDED).expect("embedded scenario config parses")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let defaults = match root.remove("defaults") {
            Some(toml::Value::Table(t)) => t,
            Some(_) => return Err(Error::Config("`defaults` must be a table".into())),
            None => toml::Table::new(),
        };
        let mut tables = BTreeMap::new();
        for (k, v) in root {
            match v {
                toml::Value::Table(t) => {
                    tables.insert(k, t);
                }
                _ => return Err(Error::Config(format!("scenario entry `{k}` must be a table"))),
            }
        }
        Ok(ScenarioConfig { defaults, tables })
    }

    pub fn names(&self) -> Vec<&str> {
        self.tables.keys().map(|s| s.as_str()).collect()
    }

    /// Defaults overlaid with the scenario's table; unknown names fall back to
    /// the defaults alone.
    pub fn settings(&self, name: &str) -> Result<ScenarioSettings> {
        let mut merged = self.defaults.clone();
        if let Some(t) = self.tables.get(name) {
            for (k, v) in t {
                merged.insert(k.clone(), v.clone());
            }
        }
        let num = |key: &str| -> Result<Option<f64>> {
            match merged.get(key) {
                None => Ok(None),
                Some(toml::Value::Float(f)) => Ok(Some(*f)),
                Some(toml::Value::Integer(i)) => Ok(Some(*i as f64)),
                Some(other) => Err(Error::Config(format!("`{key}` in `{name}` must be numeric, got {other}"))),
            }
        };
        let map = match merged.get("map") {
            None => TimeMap::Log,
            Some(toml::Value::String(s)) if s == "log" => TimeMap::Log,
            Some(toml::Value::String(s)) if s == "rational" => TimeMap::Rational,
            Some(other) => return Err(Error::Config(format!("unknown time map {other}"))),
        };
        let mut params = BTreeMap::new();
        for k in merged.keys().filter(|k| !RESERVED.contains(&k.as_str())) {
            params.insert(k.clone(), num(k)?.expect("key present"));
        }
        let s = ScenarioSettings {
            n: num("N")?.unwrap_or(256.0) as usize,
            map,
            tol: Tolerances { abs: num("tol_abs")?.unwrap_or(1e-6), rel: num("tol_rel")?.unwrap_or(1e-6) },
            seed: num("seed")?.unwrap_or(0.0) as u64,
            concavity_samples: num("concavity_samples")?.unwrap_or(1000.0) as usize,
            gamma: num("gamma")?.unwrap_or(0.5),
            params,
        };
        s.validate()?;
        Ok(s)
    }
}
