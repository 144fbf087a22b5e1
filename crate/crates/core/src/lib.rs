//! Numerical verification of first-order necessary conditions and sufficiency
//! tests for optimal control problems on the half line `[0, inf)`.

pub mod adjoint;
pub mod error;
pub mod horizon_transform;
pub mod io;
pub mod linear_ode;
pub mod needle;
pub mod pmp_verify;
pub mod problem_model;
pub mod quadrature;
pub mod report;
pub mod scenarios;
pub mod sufficiency;

pub use error::{Error, Result};
pub use problem_model::*;
pub use report::{ConditionEntry, Tolerances};
