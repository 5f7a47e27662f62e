//! Exponential-graph toolkit for decentralized momentum SGD.
//!
//! The crate is organized bottom-up:
//!
//! - [`topology`]: doubly-stochastic weight matrices for the usual graph
//!   families (ring, star, grid, torus, random graphs, hypercube) and for the
//!   static and one-peer exponential graphs.
//! - [`spectral`]: eigenvalues, second-largest eigenvalue magnitude, spectral
//!   gaps, deviation norms and the closed-form rate / transient bounds.
//! - [`consensus`]: time-varying weight schedules, exactness of finite
//!   products and consensus-residue decay.
//! - [`synthdata`]: the synthetic logistic-regression problem used by the
//!   training experiments.
//! - [`optimizer`]: an in-process simulator of decentralized momentum SGD
//!   and its degenerate variants.
//!
//! All randomness flows through [`rng`], which derives ChaCha8 streams from a
//! `(seed, domain, index)` triple so every experiment is bit-reproducible.

pub mod consensus;
pub mod error;
pub mod optimizer;
pub mod rng;
pub mod spectral;
pub mod synthdata;
pub mod topology;

pub use error::{Error, Result};
pub use topology::{TopologyKind, TopologySpec, WeightMatrix};
