//! Simulation toolkit for information scrambling in spin models with a
//! global all-to-all interaction.
//!
//! The crate is organised by model:
//!
//! - [`weight_markov`]: the exact Haar-averaged operator-weight Markov chain
//!   of a random circuit with a global `ZZ` layer, and its observables.
//! - [`continuum`]: the Fokker-Planck limit of that chain and its analytic
//!   stationary density.
//! - [`circuit`]: a brute-force small-`N` simulation of the same circuit on
//!   dense operators, used as an oracle for the chain.
//! - [`spin_chain`]: exact numerics for the Ising chain with a global `ZZ`
//!   term (OTOC, half-chain entanglement, level statistics).
//! - [`classical`]: globally coupled anharmonic oscillators and the
//!   two-trajectory perturbation protocol.
//!
//! [`stats`] and [`logspace`] hold the small numerical helpers shared by the
//! models.

pub mod circuit;
pub mod classical;
pub mod continuum;
pub mod error;
pub mod logspace;
pub mod spin_chain;
pub mod stats;
pub mod weight_markov;

pub use error::{Error, Result};
pub use weight_markov::{CircuitParams, TransitionMatrix, WeightDistribution, WeightObservables};
