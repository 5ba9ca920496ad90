//! Solver suite for the quadratic k vertex-disjoint-paths problem: route k
//! pairwise vertex-disjoint source-target paths in a digraph while minimizing
//! an indefinite quadratic cost over the chosen arcs.
//!
//! The pipeline: model the problem on a k-fold disjoint union of the graph
//! ([`graph`]), detect arcs that are fixed to zero or one in every feasible
//! solution and shrink the model ([`reduce`]), relax the binary quadratic
//! model to a facially reduced semidefinite program ([`sdp`]), compute safe
//! lower and upper bounds with a tailored ADMM splitting ([`admm`]), and
//! close the gap with branch and bound ([`bnb`]). Random grid benchmark
//! instances come from [`gen`].

pub mod admm;
pub mod bnb;
pub mod gen;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod reduce;
pub mod sdp;

pub use graph::{DirectedGraph, Instance, UnionModel};
pub use linalg::SymMatrix;
pub use admm::{solve_admm, AdmmParams, AdmmSolution, AdmmStatus, NodeFixings};
pub use bnb::{solve_bnb, BnbParams, BnbResult, BnbStatus};
pub use gen::{generate, GenConfig, Provenance};
pub use model::FlowModel;
pub use reduce::ReducedModel;
pub use sdp::{SdpRelaxation, SlaterCertificate};
