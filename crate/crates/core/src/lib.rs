pub mod bsde_core;
pub mod error;
pub mod game;
pub mod lattice;
pub mod oblique_rbsde;
pub mod penalize;
pub mod runner;
pub mod spec_model;

pub use error::{Error, Result};
