//! Query-specific network construction over a multi-dimensional data cube.
//!
//! Objects of a large attributed network are indexed into cube cells by their
//! per-dimension labels. Given a query set of objects, a cell selector picks a
//! small set of cells whose members best match the query under a Jaccard
//! relevance score, and the induced subnetwork on the query plus the selected
//! members is materialized.
//!
//! The main selector is an actor-critic agent with a Gaussian policy over the
//! cell-embedding space ([`trainer`]). Greedy, random, neighborhood and an
//! exhaustive oracle live in [`baselines`].

pub mod baselines;
pub mod cube;
pub mod embedding;
pub mod error;
pub mod harness;
pub mod policy;
pub mod relevance;
pub mod trainer;

pub use error::{Error, Result};
