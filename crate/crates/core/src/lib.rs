//! Long-range integer-valued interfaces on a line.
//!
//! The crate models discrete Gaussian and q-SOS chains with couplings
//! `beta / |i - j|^alpha` as rooted conductance graphs, and provides:
//!
//! * [`graph_core`]: the graph type, monotone surgery moves and replayable transcripts;
//! * [`exact_real`]: Laplacian solves for the real-valued field and the
//!   one-dimensional discrete Gaussian law;
//! * [`iv_chain`]: exact enumeration and heat-bath Monte Carlo for integer heights;
//! * [`surgery_pipelines`]: reductions of a chain to simpler graphs that bound
//!   its variance from below or above;
//! * [`qsos`]: stable mixing laws and annealed estimators for q-SOS chains;
//! * [`scaling`]: sweeps over `N` and growth-exponent fits;
//! * [`cli`]: the `chain-surgeon` command line.

// Float guards are written `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod exact_real;
pub mod graph_core;
pub mod iv_chain;
pub mod qsos;
pub mod rng;
pub mod scaling;
pub mod special;
pub mod surgery_pipelines;

pub use error::{Error, Result};
pub use exact_real::{VarianceEstimate, VarianceMethod};
pub use graph_core::{ChainSpec, ConductanceGraph, VertexId};
