//! Spectral laboratory for the twisted Calabi flow family on the flat torus.
//!
//! The flow `d phi / dt = s R(phi) + (1 - s)(1 - tr_phi)` interpolates
//! between the second-order J-flow (`s = 0`) and the fourth-order Calabi
//! flow (`s = 1`). This crate provides the discrete geometry, ETD time
//! integration, the linearized operator and its inverse, the order-N
//! approximate solution built by jet arithmetic in `s`, a contraction-map
//! solver, the biharmonic heat kernel, parabolic Hoelder norm estimators,
//! and parameter-sweep drivers.

pub mod approx_solution;
pub mod config;
pub mod contraction;
pub mod driver;
pub mod error;
pub mod etd;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod heat;
pub mod io;
pub mod jets;
pub mod linearize;
pub mod norms;
pub mod slab;

pub use error::{Error, Result};
pub use geometry::KahlerPotential;
pub use grid::{ScalarField, TorusGrid};
