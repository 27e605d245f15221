//! Black-box test suite minimization.
//!
//! Test methods are embedded as 768-dimensional vectors, compared pairwise
//! with normalized cosine or Euclidean similarity, and a genetic algorithm
//! searches for the most diverse subset that fits a size budget. The
//! [`evaluation`] module scores minimized suites by fault detection, time
//! savings and minimization cost.

pub mod cli;
pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod minimizer;
pub mod pipeline;
pub mod similarity;
