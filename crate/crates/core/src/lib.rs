//! Continuous data assimilation (nudging) for the 3D hydrostatic primitive
//! equations on the periodic layer `T^2 x (-l, 0)`.
//!
//! The crate provides the building blocks for twin experiments in which a
//! reference solution of the primitive equations is tracked by an assimilated
//! run that only sees observations `J_delta v` of the reference velocity:
//!
//! * [`grid`] — pseudo-spectral horizontal transforms and second-order
//!   finite-difference vertical calculus on a uniform layer grid,
//! * [`hydrostatic`] — depth averaging, the hydrostatic Helmholtz projection
//!   and the diagnostic vertical velocity,
//! * [`dynamics`] — right-hand-side assembly and CNAB2 IMEX time stepping of
//!   the reference equations,
//! * [`observation`] — observation-operator families (spectral cutoff, local
//!   cell averages) and empirical estimates of their axiom constants,
//! * [`nudging`] — the assimilated equation, the twin-experiment driver and
//!   the independent difference-equation integrator used as an oracle,
//! * [`linearized`] — the linearized perturbed operator, its bilinear form,
//!   coercivity probes and the parameter gates,
//! * [`diagnostics`] — discrete Sobolev norms, the energy-budget monitor,
//!   decay-rate and plateau fits.

pub mod diagnostics;
pub mod dynamics;
mod error;
pub mod grid;
pub mod hydrostatic;
pub mod linearized;
pub mod nudging;
pub mod observation;
pub mod probes;

pub use error::{Error, Result};
