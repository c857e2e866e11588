//! Quasi-Newton minimization of assembled energies.

mod lbfgs;
mod minimize;

pub use lbfgs::{lbfgs, IterateRecord, LbfgsOutcome, LbfgsSettings};
pub use minimize::{gradient_check, minimize_energy, EnergyFunction, MinimizeResult, OptimizerParams};
