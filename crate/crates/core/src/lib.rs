//! AC optimal power flow by radial partitioning and consensus ADMM.
//!
//! - [`matpower`] reads case files into a per-unit [`network::Network`].
//! - [`partition`] splits the bus graph into regions that each induce a tree.
//! - [`acopf`] builds the centralized problem and the per-region augmented problems.
//! - [`nlp`] holds the problem abstraction and the interior-point solver.
//! - [`dica`] runs the consensus iterations over the regions.

pub mod acopf;
pub mod dica;
pub mod matpower;
pub mod network;
pub mod nlp;
pub mod partition;
