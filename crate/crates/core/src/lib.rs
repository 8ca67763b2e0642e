//! Funnel control of port-Hamiltonian systems with passive outputs.

pub mod beam_fem;
mod collocation;
pub mod error;
pub mod funnel;
pub mod matrix_io;
pub mod monotone;
pub mod passive_lti;
pub mod scenario;
pub mod signal;
pub mod simulator;
pub mod sparse;

pub use error::{Error, Result};
