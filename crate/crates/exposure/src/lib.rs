//! Topic-exposure estimation for low-activity social media users.
//!
//! The pipeline ingests (or synthesizes) user profiles and tweet streams,
//! partitions users into lurkers / engagers / contributors by posting rate,
//! thins contributors into "mock engagers" with known ground truth, builds
//! binary activity and profile matrices, and runs four exposure estimators
//! (nearest-neighbor matching, conditional nearest-neighbor matching,
//! Gamma-Poisson factorization, and a feed-forward encoder-decoder), scoring
//! each with a normalized L1 dissimilarity.

pub mod corpus;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod matrices;
pub mod neuralnet;
pub mod pipeline;
pub mod synth;
pub mod topics;

pub use error::{Error, ErrorKind, Result};
