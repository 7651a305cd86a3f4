//! Simulation and analysis of the adiabatic dipolar-crystal quantum bus.
//!
//! Two boundary qubits couple to the ends of a driven chain of two-level
//! systems with power-law interactions. Ramping the chain into its crystal
//! phase, holding, and ramping back implements a controlled-phase gate. This
//! crate builds the sector Hamiltonians, propagates the protocol, extracts
//! gate fidelities, and evaluates the analytic error budget.

pub mod basis;
pub mod ensemble;
pub mod error_model;
pub mod evolution;
pub mod gate;
pub mod geometry;
pub mod hamiltonian;
mod linalg;
pub mod oracle;
pub mod spectral;

pub use basis::{build_basis, vacuum_index, BasisSet, SpinConfig, TruncationPolicy};
pub use geometry::{make_disordered, make_equidistant, ChainGeometry};
pub use hamiltonian::{BusModel, DriveParams, QubitSector, QubitState, Sign, SparseHamiltonian};
