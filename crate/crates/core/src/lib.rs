//! Semi-discrete particle gradient flows for neural architecture search.
//!
//! The optimizer works on the product of a parameter space and a finite
//! weighted graph of architectures. A particle ensemble carries mass over the
//! graph nodes; each node owns one parameter/velocity vector that is trained
//! by gradient steps, while particles hop between nodes along one-sided
//! (upwind) rates driven by the validation loss and the local particle
//! density. The outer loops grow a small local graph of morphed networks
//! around the current incumbent and adopt the node that attracts twice as
//! many particles as the incumbent.
//!
//! Module map:
//!
//! * [`semigraph`] - architecture graph with a symmetric kernel.
//! * [`dynamics`] - first- and second-order particle systems, schedules, energy.
//! * [`objective`] - objective abstraction, validation trackers, test objectives.
//! * [`nn`] - dense ReLU networks with exact backpropagation and checkpoints.
//! * [`morphisms`] - function-preserving and size-reducing network edits.
//! * [`data`] - synthetic datasets, CSV loading, disjoint batch streams.
//! * [`search`] - NASGD / NASAGD outer loops, hill-climbing baseline, training.
//! * [`config`] - flat dotted-key run configuration.

pub mod config;
pub mod data;
pub mod dynamics;
pub mod morphisms;
pub mod nn;
pub mod objective;
pub mod rng;
pub mod search;
pub mod semigraph;

pub use semigraph::{ArchGraph, NodeId};
