#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Numerical routes to the free energy of mean-field spin glasses.

pub mod cascades;
pub mod error;
pub mod free_energy_mc;
pub mod measures;
pub mod mixture;
pub mod optimize;
pub mod parisi_pde;
pub mod quadrature;
pub mod stats;
pub mod variational;

pub use error::{Error, Result};
pub use measures::DiscreteMeasure;
pub use mixture::MixtureFunction;
pub use parisi_pde::{BaseMeasure, ParisiValue, PdeConfig};
pub use stats::McEstimate;
