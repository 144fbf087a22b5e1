//! Condition records shared by the verifiers.

use serde::{Deserialize, Serialize};

/// One checked condition: `pass` iff `residual <= tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Location of the worst residual, when meaningful.
    pub t: Option<f64>,
}

impl ConditionEntry {
    pub fn new(name: impl Into<String>, residual: f64, tolerance: f64, t: Option<f64>) -> Self {
        // NaN residuals fail.
        let pass = residual <= tolerance;
        ConditionEntry { name: name.into(), residual, tolerance, pass, t }
    }

    /// An entry that fails with a non-numeric cause, e.g. a missing certificate.
    pub fn failed(name: impl Into<String>, t: Option<f64>) -> Self {
        ConditionEntry { name: name.into(), residual: f64::INFINITY, tolerance: 0.0, pass: false, t }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { abs: 1e-6, rel: 1e-6 }
    }
}

impl Tolerances {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.abs > 0.0) || !(self.rel > 0.0) {
            return crate::error::invalid("tolerances must be positive");
        }
        Ok(())
    }
}
