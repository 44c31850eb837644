//! Carleman-linearized, Euler-discretized block linear systems solved by a simulated
//! variational quantum linear solver, with sigma-basis tensor decompositions, error
//! bound calculators and a bi-level inverse-problem driver.

pub mod bounds;
pub mod carleman;
pub mod config;
pub mod error;
pub mod invopt;
pub mod limits;
pub mod linsys;
pub mod polyode;
pub mod qsim;
pub mod sigmalcu;
pub mod sparse;

pub use error::{Error, Result};
