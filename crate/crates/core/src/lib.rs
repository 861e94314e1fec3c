//! Curvature-aware spectral graph learning.
//!
//! The crate covers the full numerical pipeline: Ollivier-Ricci curvature
//! ([`orc`]), the curvature-weighted Laplacian ([`laplacian`]),
//! κ-stereographic gyrovector algebra ([`stereo`]) and product manifolds
//! ([`manifold`]), generalized-PageRank filter banks ([`filter`]), random
//! Fourier curvature encodings ([`encoding`]) and a small trainable model
//! ([`model`]) differentiated by a reverse-mode tape ([`autodiff`]).

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod encoding;
pub mod error;
pub mod exec;
pub mod filter;
pub mod graph;
pub mod laplacian;
pub mod linalg;
pub mod manifold;
pub mod model;
pub mod orc;
pub mod stereo;

pub use error::{Error, Result};
pub use exec::Exec;
pub use graph::Graph;
pub use linalg::{Mat, Spectrum};
