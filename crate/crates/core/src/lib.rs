//! Pandora's box search with delegation.
//!
//! A principal who cannot probe boxes directly delegates the search to an
//! agent with different values, restricting what it will accept. This crate
//! holds the instance model, constraint oracles, the non-delegated
//! benchmarks, contention resolution schemes, delegation mechanisms, agent
//! best responses, and the experiment harness built on top of them.

pub mod agents;
pub mod error;
pub mod harness;
pub mod mechanisms;
pub mod model;
pub mod ocrs;
pub mod set_systems;
pub mod solvers;
pub mod stats;

pub use error::{Error, Result};
pub use model::{Instance, TOL};
