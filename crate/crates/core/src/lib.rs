//! Simulation and Conley-theoretic analysis of hybrid dynamical systems.
//!
//! A hybrid system is a disjoint union of modes, each carrying a polynomial vector
//! field on a box, with polynomial guard surfaces and reset maps between modes.

pub mod builtins;
pub mod chain;
pub mod error;
pub mod guard;
pub mod integrate;
pub mod io;
pub mod poly;
pub mod sampling;
pub mod suspension;
pub mod system;

pub use error::{HybridError, Result};
pub use system::{HybridSystemDef, ModeSpec, State};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
