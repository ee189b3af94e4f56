//! Kinetic and hydrodynamic solvers for a multiscale model of cell migration
//! through the extracellular matrix.
//!
//! The model couples a kinetic equation for the cell distribution f(t, x, v, y)
//! — with reorientation along fiber directions, velocity randomization, and
//! chemotactic bias — to macroscopic reaction(-diffusion) equations for the
//! fiber density Q(t, x, θ) and the proteolytic chemoattractant L(t, x). The
//! activity variable y tracks bound surface-receptor fractions driven by the
//! mass-action field G. Under the high-field scaling the crate also solves the
//! limiting hyperbolic system for (ρ, ρU) with the algebraic receptor closure,
//! and provides the sweep harness that measures the approach to that limit.

pub mod config;
pub mod error;
pub mod grid;
pub mod hydro;
pub mod io;
pub mod kernels;
pub mod kinetic;
pub mod moments;
pub mod params;
pub mod sweep;
pub mod verify;

pub use error::{CoreError, Result};
