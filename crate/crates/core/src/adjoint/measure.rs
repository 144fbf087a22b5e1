//! Nonnegative measures on `[0, inf]`: a density part, finitely many atoms and
//! an atom at infinity.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::problem_model::Density;
use crate::quadrature::{integrate_to_infinity, QuadOptions};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Atom {
    pub time: f64,
    pub mass: f64,
}

#[derive(Clone)]
pub struct BorelMeasureExt {
    density: Option<Density>,
    /// Times where the density may be discontinuous.
    pub density_breaks: Vec<f64>,
    pub atoms: Vec<Atom>,
    pub at_infinity: f64,
    pub support_tolerance: f64,
}

impl std::fmt::Debug for BorelMeasureExt {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BorelMeasureExt")
            .field("density", &self.density.is_some())
            .field("atoms", &self.atoms)
            .field("at_infinity", &self.at_infinity)
            .finish()
    }
}

impl Default for BorelMeasureExt {
    fn default() -> Self {
        Self::zero()
    }
}

/// Serializable summary of a measure.
#[derive(Clone, Debug, Serialize)]
pub struct MeasureSummary {
    pub density_mass: f64,
    pub atoms: Vec<Atom>,
    pub at_infinity: f64,
    pub total: f64,
}

impl BorelMeasureExt {
    pub fn zero() -> Self {
        BorelMeasureExt { density: None, density_breaks: Vec::new(), atoms: Vec::new(), at_infinity: 0.0, support_tolerance: 1e-7 }
    }

    pub fn with_density(mut self, density: impl Fn(f64) -> f64 + Send + Sync + 'static, breaks: Vec<f64>) -> Self {
        self.density = Some(Arc::new(density));
        self.density_breaks = breaks;
        self
    }

    pub fn with_atom(mut self, time: f64, mass: f64) -> Self {
        self.atoms.push(Atom { time, mass });
        self.atoms.sort_by(|a, b| a.time.total_cmp(&b.time));
        self
    }

    pub fn with_atom_at_infinity(mut self, mass: f64) -> Self {
        self.at_infinity = mass;
        self
    }

    pub fn has_density(&self) -> bool {
        self.density.is_some()
    }

    pub fn density(&self, t: f64) -> f64 {
        self.density.as_ref().map_or(0.0, |d| d(t))
    }

    pub fn density_mass(&self) -> f64 {
        match &self.density {
            Some(d) => integrate_to_infinity(&mut |t| d(t), 0.0, &self.density_breaks, QuadOptions::default()),
            None => 0.0,
        }
    }

    pub fn atom_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.density_mass() + self.atom_mass() + self.at_infinity
    }

    pub fn is_zero(&self) -> bool {
        self.density.is_none() && self.atoms.iter().all(|a| a.mass == 0.0) && self.at_infinity == 0.0
    }

    /// Masses nonnegative and finite, atom times finite and nonnegative, density
    /// nonnegative at sampled times.
    pub fn validate(&self) -> Result<()> {
        if !(self.at_infinity >= 0.0) || !self.at_infinity.is_finite() {
            return invalid(format!("mass at infinity {} must be finite and nonnegative", self.at_infinity));
        }
        for a in &self.atoms {
            if !(a.mass >= 0.0) || !a.mass.is_finite() {
                return invalid(format!("atom mass {} at t = {} must be finite and nonnegative", a.mass, a.time));
            }
            if !(a.time >= 0.0) || !a.time.is_finite() {
                return invalid(format!("atom time {} must be finite and nonnegative", a.time));
            }
        }
        if let Some(d) = &self.density {
            for k in 0..400 {
                let t = 0.05 * k as f64;
                if !(d(t) >= 0.0) {
                    return invalid(format!("measure density is negative at t = {t}"));
                }
            }
            if !self.density_mass().is_finite() {
                return invalid("measure density is not summable");
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> MeasureSummary {
        let density_mass = self.density_mass();
        MeasureSummary {
            density_mass,
            atoms: self.atoms.clone(),
            at_infinity: self.at_infinity,
            total: density_mass + self.atom_mass() + self.at_infinity,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_mass_adds_all_parts() {
        let m = BorelMeasureExt::zero().with_density(|t| (-t).exp(), vec![]).with_atom(1.0, 0.5).with_atom_at_infinity(0.25);
        assert!((m.total_mass() - 1.75).abs() < 1e-12);
        assert!(m.validate().is_ok());
    }

    #[test]
    fn negative_mass_rejected() {
        assert!(BorelMeasureExt::zero().with_atom(1.0, -0.1).validate().is_err());
        assert!(BorelMeasureExt::zero().with_atom_at_infinity(-1.0).validate().is_err());
        assert!(BorelMeasureExt::zero().with_density(|_| -1.0, vec![]).validate().is_err());
    }
}
