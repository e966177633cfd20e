//! Time-inhomogeneous Markov counting processes on directed graphs with
//! Dirichlet/beta step noise.
//!
//! The crate is organised bottom-up:
//! - [`graph`]: topology, arrow groups and the balance identity
//! - [`rates`]: covariates, school-term forcing and rate expressions
//! - [`kernels`]: step laws, their closed-form moments and transition rates
//! - [`sim`]: the Euler scheme over a whole graph
//! - [`dispersion`]: Monte Carlo dispersion estimates and Kendall oracles
//! - [`inference`]: measurement model, particle filter, IF2, profiles
//! - [`measles`]: the London SEIR study

pub mod dispersion;
pub mod error;
pub mod graph;
pub mod inference;
pub mod kernels;
pub mod measles;
pub mod model;
pub mod rates;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
