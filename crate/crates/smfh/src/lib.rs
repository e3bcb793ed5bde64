//! Supervised matrix factorization hashing.
//!
//! Learns r-bit binary codes and per-modality linear hash functions from
//! multi-modal non-negative features plus semantic labels, by collective
//! non-negative matrix factorization regularized with a sampled label-graph
//! Laplacian. Retrieval runs by Hamming ranking over packed codes, with
//! out-of-sample items encoded through the learned projections.
//!
//! Modules follow the pipeline: [`data`] ingests and synthesizes datasets,
//! [`graph`] builds sampled label subgraphs, [`factorization`] and
//! [`regression`] hold the update rules, [`trainer`] runs the alternating
//! optimization, [`hashing`] quantizes and ranks, [`eval`] scores retrieval,
//! and [`cli`] ties it all together.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod factorization;
pub mod graph;
pub mod hashing;
pub mod regression;
pub mod trainer;

pub use error::{Error, Result};
