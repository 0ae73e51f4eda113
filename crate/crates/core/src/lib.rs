//! Percolation laboratory on `Z^d`: exact self-avoiding-walk census on the L1
//! ball, the ψ path-count series, and Monte Carlo estimates of the site
//! percolation connection probability and its pseudo-critical point.

pub mod cli;
pub mod enumeration;
pub mod estimator;
pub mod lattice;
pub mod montecarlo;
pub mod output;
pub mod rng;
pub mod series;
pub mod unionfind;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use lattice::{ArcMode, Dimension, Vertex};
