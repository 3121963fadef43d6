//! Reaction–diffusion on periodically perforated domains.
//!
//! The crate simulates the three-species reversible reaction
//! `A¹ + A² ⇌ A³` in a box with an ε-periodic array of spherical holes
//! through which mass flows in, computes the effective (homogenized) model
//! from the periodic cell problem, and runs ε-studies that compare the two.

pub mod cell_problem;
pub mod checks;
pub mod config;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod harness;
pub mod initial_data;
pub mod io;
pub mod macro_solver;
pub mod micro_solver;
pub mod numerics;
pub mod timestep;

pub use error::{Error, Result};
