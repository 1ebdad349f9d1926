//! Ballistic transport on periodic discrete graphs, trees and free space.
//!
//! The crate computes closed-form long-time limits of position moments of
//! `e^{-itH} psi` and cross-checks them against direct simulation.

pub mod compare;
pub mod contfree;
pub mod error;
pub mod evolve;
pub mod floquet;
pub mod lattice;
pub mod limits;
pub mod numerics;
pub mod state;
pub mod trees;

pub use error::{Error, Result};
pub use lattice::{build_lattice, Lattice, LatticeSpec, VertexId};
pub use num_complex::Complex64;
pub use state::StateVector;
